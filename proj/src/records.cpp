// SPDX-License-Identifier: Apache-2.0
#include "icao/records.hpp"

#include <charconv>
#include <cmath>

#include "icao/errors.hpp"
#include "icao/reason_registry.hpp"

namespace icao {

std::optional<RequirementId> parse_requirement(std::string_view token) noexcept {
  for (const auto& r : kRequirements) {
    if (r.short_name == token) return r.id;
  }
  int index = 0;
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, index);
  if (ec == std::errc{} && ptr == end) return requirement_from_index(index);
  return std::nullopt;
}

AgeGroup age_group_for(int years) {
  if (years < 0) throw DataError("negative age");
  if (years <= 20) return AgeGroup::A0_20;
  if (years <= 35) return AgeGroup::A21_35;
  if (years <= 50) return AgeGroup::A36_50;
  if (years <= 65) return AgeGroup::A51_65;
  return AgeGroup::A66plus;
}

const ComplianceLabel& ImageRecord::label(RequirementId id) const {
  auto it = labels.find(id);
  if (it == labels.end()) {
    throw DataError("record " + image_id + " has no label for " + std::string(short_name(id)));
  }
  return it->second;
}

LabelMap all_compliant_labels() {
  LabelMap labels;
  for (const auto& r : kRequirements) labels.emplace(r.id, ComplianceLabel::compliant());
  return labels;
}

ScoreVector::ScoreVector(std::span<const double> scores) {
  if (scores.size() != static_cast<std::size_t>(kRequirementCount)) {
    throw ShapeError("score vector needs 26 entries, got " + std::to_string(scores.size()));
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]) || scores[i] < 0.0 || scores[i] > 1.0) {
      throw DataError("score for " + std::string(kRequirements[i].short_name) +
                      " is outside [0,1]");
    }
    scores_[i] = scores[i];
  }
}

std::vector<Violation> validate_record(const ImageRecord& record, const ReasonRegistry& registry,
                                       const ValidationOptions& options) {
  std::vector<Violation> out;
  auto report = [&](std::string msg) { out.push_back({record.image_id, std::move(msg)}); };

  if (record.image_id.empty()) report("empty image_id");
  if (record.subject_id.empty()) report("empty subject_id");

  for (const auto& req : kRequirements) {
    auto it = record.labels.find(req.id);
    if (it == record.labels.end()) {
      report("missing label: " + std::string(req.short_name));
      continue;
    }
    const ComplianceLabel& label = it->second;
    const bool nc = label.state == ComplianceState::NonCompliant;
    if (!nc && label.reason) {
      report("reason on non-NonCompliant label: " + std::string(req.short_name));
    }
    if (!nc && label.severity) {
      report("severity on non-NonCompliant label: " + std::string(req.short_name));
    }
    if (nc && !label.reason) {
      report("missing reason: " + std::string(req.short_name));
    }
    if (nc && label.reason && !options.lenient_reasons && !registry.contains(req.id, *label.reason)) {
      report("unknown reason '" + *label.reason + "' for " + std::string(req.short_name));
    }
  }

  const bool generated = record.quality_tier == QualityTier::Gen;
  if (generated && !record.generated_from) report("missing provenance");
  if (!generated && record.generated_from) report("generated_from on non-Gen record");
  if (!generated && !record.restricted_to.empty()) report("restricted_to on non-Gen record");
  if (record.generated_from && *record.generated_from == record.image_id) {
    report("record is generated from itself");
  }
  return out;
}

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  return std::nullopt;
}

constexpr std::array<std::string_view, 3> kStateNames{"Compliant", "NoWayToConfirm", "NonCompliant"};
constexpr std::array<std::string_view, 2> kGenderNames{"Male", "Female"};
constexpr std::array<std::string_view, 5> kAgeNames{"A0_20", "A21_35", "A36_50", "A51_65", "A66plus"};
constexpr std::array<std::string_view, 5> kAgeDisplay{"[0-20]", "[21-35]", "[36-50]", "[51-65]", "[66+]"};
constexpr std::array<std::string_view, 3> kOriginNames{"Asian", "Caucasian", "African"};
constexpr std::array<std::string_view, 3> kTierNames{"HQ", "SQ", "Gen"};
constexpr std::array<std::string_view, 4> kPartitionNames{"All", "Train", "TrainBalanced", "Test"};

}  // namespace

std::string_view to_string(ComplianceState s) noexcept { return kStateNames[static_cast<int>(s)]; }
std::string_view to_string(Gender g) noexcept { return kGenderNames[static_cast<int>(g)]; }
std::string_view to_string(AgeGroup a) noexcept { return kAgeNames[static_cast<int>(a)]; }
std::string_view to_string(Origin o) noexcept { return kOriginNames[static_cast<int>(o)]; }
std::string_view to_string(QualityTier t) noexcept { return kTierNames[static_cast<int>(t)]; }
std::string_view to_string(Partition p) noexcept { return kPartitionNames[static_cast<int>(p)]; }
std::string_view display_name(AgeGroup a) noexcept { return kAgeDisplay[static_cast<int>(a)]; }

std::optional<ComplianceState> parse_compliance_state(std::string_view s) noexcept {
  return lookup<ComplianceState>(kStateNames, s);
}
std::optional<Gender> parse_gender(std::string_view s) noexcept { return lookup<Gender>(kGenderNames, s); }
std::optional<AgeGroup> parse_age_group(std::string_view s) noexcept {
  return lookup<AgeGroup>(kAgeNames, s);
}
std::optional<Origin> parse_origin(std::string_view s) noexcept { return lookup<Origin>(kOriginNames, s); }
std::optional<QualityTier> parse_quality_tier(std::string_view s) noexcept {
  return lookup<QualityTier>(kTierNames, s);
}
std::optional<Partition> parse_partition(std::string_view s) noexcept {
  return lookup<Partition>(kPartitionNames, s);
}

}  // namespace icao
