// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icao/losses.hpp"
#include "icao/records.hpp"
#include "icao/tensor.hpp"

namespace icao {

/// Demographic distribution over unique subjects plus image counts per quality tier.
struct DistributionTable {
  std::size_t n_images = 0;
  std::size_t n_subjects = 0;
  std::array<std::size_t, 3> images_per_tier{};  // HQ, SQ, Gen
  std::array<std::size_t, kGenderCount> gender{};
  std::array<std::size_t, kOriginCount> origin{};
  std::array<std::size_t, kAgeGroupCount> age{};

  double gender_pct(Gender g) const { return pct(gender[static_cast<int>(g)]); }
  double origin_pct(Origin o) const { return pct(origin[static_cast<int>(o)]); }
  double age_pct(AgeGroup a) const { return pct(age[static_cast<int>(a)]); }

 private:
  double pct(std::size_t n) const { return n_subjects ? 100.0 * n / n_subjects : 0.0; }
};

/// Throws DataError on empty input or when a subject carries conflicting demographics.
DistributionTable distribution_stats(std::span<const ImageRecord> records);

struct RequirementCompliance {
  std::size_t n_compliant = 0;
  std::size_t n_noncompliant = 0;            // natural (HQ/SQ) non-compliant labels
  std::size_t n_generated_noncompliant = 0;  // Gen-tier non-compliant labels
  /// Percentage of non-compliant labels; NaN when the requirement has no decidable labels.
  double pct_noncompliant = 0.0;

  std::size_t n_noncompliant_total() const { return n_noncompliant + n_generated_noncompliant; }
};

using ComplianceDistribution = std::array<RequirementCompliance, kRequirementCount>;

/// NoWayToConfirm labels are excluded. Gen-tier records only count toward their restricted_to
/// requirements. Throws DataError on empty input.
ComplianceDistribution compliance_distribution(std::span<const ImageRecord> records);

/// Positive/negative pixel counts per region, aggregated over a training set.
struct MaskSummary {
  std::array<std::uint64_t, kRegionCount> positive{};
  std::array<std::uint64_t, kRegionCount> negative{};

  /// Accumulates an 8-channel mask tensor; values >= 0.5 count as positive.
  void add(const Tensor3& masks);
};

struct WeightSet {
  std::array<double, kRequirementCount> lambda_r{};
  std::array<double, kRequirementCount> beta_r{};
  std::array<double, kRegionCount> lambda_m{};
  // lambda_r as an exact ratio of gated-in counts, n_compliant / n_noncompliant.
  std::array<std::uint64_t, kRequirementCount> lambda_r_num{};
  std::array<std::uint64_t, kRequirementCount> lambda_r_den{};
  std::vector<std::string> warnings;

  /// Unit weights: lambda = 1, beta = 1.
  static WeightSet uniform();
  std::string to_json() const;
  static WeightSet from_json(std::string_view text);
};

enum class DegeneratePolicy {
  Fail,      // DataError naming the requirement or mask
  Fallback,  // weight 1 for the degenerate entry, recorded in WeightSet::warnings
};

/// lambda_r = n_compliant / n_noncompliant over gated-in samples; beta_r = R * v_r^-1 / sum v^-1
/// with v_r the gated-in sample count; lambda_m = negative / positive pixels.
WeightSet derive_weights(std::span<const ImageRecord> records, const MaskSummary& masks,
                         const RuleSet& rules = RuleSet::defaults(),
                         DegeneratePolicy policy = DegeneratePolicy::Fail);

/// R * v_r^-1 / sum v^-1 for arbitrary R; every count must be positive.
std::vector<double> balance_weights(std::span<const std::uint64_t> counts);

inline constexpr int kDemographicCells = kGenderCount * kOriginCount * kAgeGroupCount;

struct DemographicCell {
  Gender gender;
  Origin origin;
  AgeGroup age;
};

int cell_index(const DemographicProfile& p) noexcept;
DemographicCell cell_at(int index) noexcept;

struct BalanceTargets {
  /// Fraction of selected subjects wanted in each gender x origin x age cell; uniform by default.
  std::array<double, kDemographicCells> fraction;
  /// Upper bound on selected subjects; by default the largest count the pool can realize.
  std::optional<std::size_t> max_subjects;

  BalanceTargets() { fraction.fill(1.0 / kDemographicCells); }
};

struct CellReport {
  DemographicCell cell;
  std::size_t available = 0;
  std::size_t target = 0;
  std::size_t achieved = 0;
};

struct MarginalReport {
  std::string category;  // gender | origin | age
  std::string group;
  double target_pct = 0.0;
  double achieved_pct = 0.0;
};

struct BalanceReport {
  std::size_t subjects_selected = 0;
  std::size_t images_selected = 0;
  std::vector<CellReport> cells;
  std::vector<MarginalReport> marginals;
  bool shortfall = false;

  std::string to_text() const;
};

struct BalanceResult {
  std::vector<ImageRecord> subset;  // pool order preserved
  BalanceReport report;
};

/// Selects whole subjects per demographic cell, sampled with a seeded shuffle.
BalanceResult select_balanced_subset(std::span<const ImageRecord> records, const BalanceTargets& targets,
                                     std::uint64_t seed);

/// Subjects that appear in a training partition (Train/TrainBalanced) and in Test.
std::vector<std::string> subject_leakage(std::span<const ImageRecord> records);

/// Assigns Train/Test partitions at subject granularity; about `test_fraction` of subjects go to Test.
std::vector<ImageRecord> assign_partitions(std::span<const ImageRecord> records, double test_fraction,
                                           std::uint64_t seed);

}  // namespace icao
