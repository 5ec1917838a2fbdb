// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "icao/image.hpp"
#include "icao/records.hpp"

namespace icao {

enum class Effect : std::uint8_t {
  UnnaturalSkinTone,
  RedEyes,
  Pixelation,
  WashedOut,
  InkMarked,
  Posterization,
  ExposureShift,
  GaussianBlur,
  BackgroundSubstitution,
};

std::string_view to_string(Effect e) noexcept;
std::optional<Effect> parse_effect(std::string_view s) noexcept;
/// The requirement an effect makes non-compliant.
RequirementId target_of(Effect e) noexcept;

using ParamValue = std::variant<double, std::string>;

/// An effect plus its parameters. Every effect has a closed parameter set; see effect_schema().
///
///   unnatural_skin_tone      hue_degrees [15,345] = 120, saturation_gain (0,3] = 1.3
///   red_eyes                 strength (0,1] = 0.8                              (needs eyes mask)
///   pixelation               block_factor int [2,64] = 8
///   washed_out               contrast (0,1) = 0.35, mid [0,1] = 0.6
///   ink_marked               strokes int [1,32] = 3, creases int [0,16] = 1,
///                            width (0,0.2] = 0.015, opacity (0,1] = 0.85
///   posterization            levels int [2,64] = 4
///   exposure_shift           exposure_delta [-8,8] = 1.5 (stops, applied in linear light)
///   gaussian_blur            sigma [0,32] = 2
///   background_substitution  pattern token noise|gradient|stripes|checker = noise,
///                            bg_image token (path; overrides pattern)        (needs background mask)
struct EffectSpec {
  Effect effect = Effect::Posterization;
  std::map<std::string, ParamValue> params;
  std::uint64_t seed = 0;
};

struct ParamSchema {
  std::string name;
  bool is_token = false;
  bool integer = false;
  double min = 0.0;
  double max = 0.0;
  bool min_exclusive = false;
  bool max_exclusive = false;
  ParamValue default_value;
};

const std::vector<ParamSchema>& effect_schema(Effect e);

/// Throws ConfigError for unknown parameters, wrong types and out-of-range values.
void validate_effect(const EffectSpec& spec);

/// Severity cut-offs below which a degradation is still considered compliant.
struct EffectThresholds {
  double blur_sigma = 1.0;      // GaussianBlur flips `blurred` when sigma >= this
  double exposure_stops = 1.0;  // ExposureShift flips `too_dark_light` when |delta| >= this
};

struct EffectResult {
  Image image;
  std::map<RequirementId, ComplianceLabel> labels_delta;
};

/// Applies one degradation. Output has the input's shape with values clamped to [0,1]; the
/// result is a pure function of (image, spec, masks). RedEyes needs the eyes region and
/// BackgroundSubstitution the background region of `masks`.
EffectResult apply_effect(const Image& image, const EffectSpec& spec, const MaskSet* masks = nullptr,
                          const EffectThresholds& thresholds = {});

struct RecordFilter {
  std::set<QualityTier> tiers;          // empty = HQ and SQ
  std::set<Partition> partitions;       // empty = any
  std::set<std::string> image_ids;      // empty = any
  std::optional<std::size_t> limit;     // seeded sample of the matching records
};

struct PlanEntry {
  RecordFilter filter;
  EffectSpec spec;
};

/// Plan file: {"entries": [{"filter": {...}, "effect": "pixelation", "params": {...}, "seed": 1}]}
std::vector<PlanEntry> parse_plan(std::string_view json_text);
std::vector<PlanEntry> load_plan(const std::filesystem::path& path);

struct CorpusOptions {
  std::filesystem::path source_root;  // base for relative source paths; generated paths are written relative to it
  std::filesystem::path out_dir;      // generated images go to out_dir/images
  const std::filesystem::path* masks_dir = nullptr;  // sidecar masks, needed by mask-dependent effects
  EffectThresholds thresholds;
};

struct CorpusResult {
  std::vector<ImageRecord> records;  // input records followed by generated ones
  std::vector<std::string> warnings;
};

/// Generates one Gen-tier record per (plan entry, selected source). Sources are non-Gen records
/// whose labels for the effect's target requirement are Compliant.
CorpusResult generate_corpus(const std::vector<ImageRecord>& manifest, const std::vector<PlanEntry>& plan,
                             const CorpusOptions& options, std::uint64_t seed);

/// Sidecar masks for an image: <dir>/<image_id>.<region>.pgm, one file per region.
MaskSet load_mask_sidecar(const std::filesystem::path& dir, std::string_view image_id);
void save_mask_sidecar(const std::filesystem::path& dir, std::string_view image_id, const MaskSet& masks);
bool has_mask_sidecar(const std::filesystem::path& dir, std::string_view image_id);

}  // namespace icao
