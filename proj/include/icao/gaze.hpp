// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "icao/model.hpp"

namespace icao {

inline constexpr double kDefaultGazeTau = 0.15;

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Pixel coordinates in the image frame.
struct EyeLandmarks {
  Point2 iris_center;
  Point2 corner_inner;
  Point2 corner_outer;
  bool operator==(const EyeLandmarks&) const = default;
};

struct FaceLandmarks {
  std::optional<EyeLandmarks> left;
  std::optional<EyeLandmarks> right;
  bool operator==(const FaceLandmarks&) const = default;
};

/// Per eye: |(iris - corner midpoint) . u| / |outer - inner|, u the unit inner->outer axis, so
/// only horizontal displacement along the eye counts. Returns the mean over both eyes.
/// Throws DataError when an eye is missing or its corners coincide.
double gaze_deviation(const FaceLandmarks& landmarks);

struct RefineOutcome {
  Decision looking_away;
  bool flipped = false;
  std::optional<double> deviation;
  std::string note;  // why nothing changed, when applicable
};

/// Flips looking_away to NonCompliant (reason "gaze_refinement") when roll_pitch_yaw and
/// looking_away are both Compliant, landmarks are present and the deviation exceeds tau.
/// Never flips NonCompliant to Compliant. Throws ConfigError unless tau > 0.
RefineOutcome refine_looking_away(const ScoreVector& scores, const DecisionMap& decisions,
                                  const std::optional<FaceLandmarks>& landmarks, double tau = kDefaultGazeTau);

/// Source of eye landmarks for an image.
class LandmarkDetector {
 public:
  virtual ~LandmarkDetector() = default;
  virtual std::optional<FaceLandmarks> detect(std::string_view image_id) const = 0;
};

/// Reads landmarks from an NDJSON sidecar, one record per image:
///   {"image_id": "a", "left": {"iris": [x, y], "inner": [x, y], "outer": [x, y]}, "right": {...}}
/// Either eye may be omitted or null.
class SidecarLandmarkDetector final : public LandmarkDetector {
 public:
  /// Throws ParseError for malformed lines and DataError for duplicate ids.
  static SidecarLandmarkDetector load(const std::filesystem::path& path);
  static SidecarLandmarkDetector parse(std::string_view text);

  std::optional<FaceLandmarks> detect(std::string_view image_id) const override;
  std::size_t size() const noexcept { return records_.size(); }

 private:
  std::map<std::string, FaceLandmarks, std::less<>> records_;
};

}  // namespace icao
