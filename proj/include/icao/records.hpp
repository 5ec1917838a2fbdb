// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icao/requirements.hpp"

namespace icao {

class ReasonRegistry;

enum class ComplianceState : std::uint8_t { Compliant, NoWayToConfirm, NonCompliant };

struct ComplianceLabel {
  ComplianceState state = ComplianceState::Compliant;
  std::optional<std::string> reason;    // present iff state == NonCompliant
  std::optional<std::string> severity;  // e.g. strong_shadow, soft_shadow

  static ComplianceLabel compliant() { return {}; }
  static ComplianceLabel no_way_to_confirm() { return {ComplianceState::NoWayToConfirm, {}, {}}; }
  static ComplianceLabel non_compliant(std::string reason) {
    return {ComplianceState::NonCompliant, std::move(reason), {}};
  }

  bool is_non_compliant() const noexcept { return state == ComplianceState::NonCompliant; }
  bool operator==(const ComplianceLabel&) const = default;
};

enum class Gender : std::uint8_t { Male, Female };
enum class AgeGroup : std::uint8_t { A0_20, A21_35, A36_50, A51_65, A66plus };
enum class Origin : std::uint8_t { Asian, Caucasian, African };

inline constexpr int kGenderCount = 2;
inline constexpr int kAgeGroupCount = 5;
inline constexpr int kOriginCount = 3;

/// Maps an age in whole years to its group: [0-20], [21-35], [36-50], [51-65], [66+].
AgeGroup age_group_for(int years);

struct DemographicProfile {
  Gender gender = Gender::Male;
  AgeGroup age_group = AgeGroup::A21_35;
  Origin origin = Origin::Caucasian;
  std::optional<std::string> country;

  bool operator==(const DemographicProfile&) const = default;
};

enum class QualityTier : std::uint8_t { HQ, SQ, Gen };
enum class Partition : std::uint8_t { All, Train, TrainBalanced, Test };

using LabelMap = std::map<RequirementId, ComplianceLabel>;

struct ImageRecord {
  std::string image_id;
  std::string subject_id;
  QualityTier quality_tier = QualityTier::HQ;
  std::string source_path;
  DemographicProfile demographics;
  LabelMap labels;
  std::map<std::string, std::string> attributes;
  Partition partition = Partition::All;
  std::optional<std::string> generated_from;         // required for Gen tier
  std::vector<RequirementId> restricted_to;          // Gen tier: the only requirements it may serve

  const ComplianceLabel& label(RequirementId id) const;
  bool operator==(const ImageRecord&) const = default;
};

/// Fills every requirement with a Compliant label.
LabelMap all_compliant_labels();

/// Probability of non-compliance for each requirement, index-aligned with RequirementId.
class ScoreVector {
 public:
  ScoreVector() { scores_.fill(0.0); }
  /// Throws DataError unless every score is finite and within [0,1].
  explicit ScoreVector(std::span<const double> scores);

  double operator[](RequirementId id) const noexcept { return scores_[slot_of(id)]; }
  const std::array<double, kRequirementCount>& values() const noexcept { return scores_; }

 private:
  std::array<double, kRequirementCount> scores_;
};

/// Per-requirement loss/evaluation validity flags.
struct GateVector {
  std::array<std::uint8_t, kRequirementCount> gates{};

  GateVector() { gates.fill(1); }
  bool open(RequirementId id) const noexcept { return gates[slot_of(id)] != 0; }
  void close(RequirementId id) noexcept { gates[slot_of(id)] = 0; }
  bool operator==(const GateVector&) const = default;
};

struct Violation {
  std::string image_id;
  std::string message;
};

struct ValidationOptions {
  bool lenient_reasons = false;  // accept reasons outside the registry vocabulary
};

/// Returns every invariant violation of `record`; an empty result means the record is valid.
std::vector<Violation> validate_record(const ImageRecord& record, const ReasonRegistry& registry,
                                       const ValidationOptions& options = {});

// Token conversions used by the manifest format. parse_* return nullopt on unknown tokens.
std::string_view to_string(ComplianceState s) noexcept;
std::string_view to_string(Gender g) noexcept;
std::string_view to_string(AgeGroup a) noexcept;
std::string_view to_string(Origin o) noexcept;
std::string_view to_string(QualityTier t) noexcept;
std::string_view to_string(Partition p) noexcept;
std::optional<ComplianceState> parse_compliance_state(std::string_view s) noexcept;
std::optional<Gender> parse_gender(std::string_view s) noexcept;
std::optional<AgeGroup> parse_age_group(std::string_view s) noexcept;
std::optional<Origin> parse_origin(std::string_view s) noexcept;
std::optional<QualityTier> parse_quality_tier(std::string_view s) noexcept;
std::optional<Partition> parse_partition(std::string_view s) noexcept;

/// Display label used in report headers, e.g. "[21-35]".
std::string_view display_name(AgeGroup a) noexcept;

}  // namespace icao
