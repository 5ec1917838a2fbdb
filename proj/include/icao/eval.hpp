// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icao/records.hpp"

namespace icao {

struct ScoredSample {
  std::string image_id;
  RequirementId requirement = RequirementId::EyesClosed;
  double score = 0.0;  // probability of non-compliance
  bool label = false;  // true = non-compliant
  DemographicProfile group;
  bool gated_in = true;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
};

/// FAR(t) = share of negatives with score >= t, FRR(t) = share of positives with score < t.
/// t sweeps the sorted distinct scores plus one sentinel above the maximum; at the first t where
/// FAR <= FRR the result is exact if they are equal, otherwise both curves are interpolated
/// linearly from the previous candidate and the crossing (and its threshold) is returned.
/// Throws DataError unless both classes are present.
EerResult eer(std::span<const double> positive_scores, std::span<const double> negative_scores);

/// Gated-out samples are ignored. All samples must concern one requirement; the single-class
/// error names it.
EerResult eer(std::span<const ScoredSample> samples);

enum class Category : std::uint8_t { Gender, Origin, Age };
enum class Aggregation : std::uint8_t { Mean, Pooled };

inline constexpr std::array<Category, 3> kCategories{Category::Gender, Category::Origin, Category::Age};

std::string_view to_string(Category c) noexcept;
std::optional<Category> parse_category(std::string_view s) noexcept;
std::string_view to_string(Aggregation a) noexcept;
std::optional<Aggregation> parse_aggregation(std::string_view s) noexcept;

/// Number of groups in a category and their column labels (Male, Female, Asian, ..., [66+]).
int group_count(Category c) noexcept;
std::string_view group_label(Category c, int group) noexcept;
int group_of(Category c, const DemographicProfile& p) noexcept;

struct GroupEer {
  int group = 0;
  double eer = 0.0;
  double delta = 0.0;  // eer - overall
  std::vector<RequirementId> evaluated;
  std::vector<RequirementId> skipped;  // single-class within this group
  bool operator==(const GroupEer&) const = default;
};

struct CategoryEers {
  Category category = Category::Gender;
  double overall = 0.0;
  std::vector<GroupEer> groups;  // groups present in the samples, in label order
  bool operator==(const CategoryEers&) const = default;
};

/// Mean: a group's EER is the unweighted mean of its per-requirement EERs over requirements
/// with both classes in that group; overall is the same mean over all samples.
/// Pooled: one EER over all of a group's gated-in samples regardless of requirement.
/// Throws DataError when there are no samples or a present group has nothing evaluable.
CategoryEers group_eers(std::span<const ScoredSample> samples, Category category,
                        Aggregation aggregation = Aggregation::Mean);

/// Sum over categories of (max group value - min group value). Values may be EERs or deltas
/// against a common overall. Throws DataError when a category is missing or has fewer than two
/// groups.
double bias_index(const std::map<Category, std::vector<double>>& group_values);
double bias_index(std::span<const CategoryEers> categories);

struct RequirementEval {
  std::optional<double> eer;  // absent when single-class
  std::optional<double> threshold;
  std::size_t n_positive = 0;
  std::size_t n_negative = 0;
  bool operator==(const RequirementEval&) const = default;
};

struct EvalReport {
  std::array<RequirementEval, kRequirementCount> requirements{};
  std::optional<double> mean_eer;  // over evaluable requirements
  Aggregation aggregation = Aggregation::Mean;
  std::vector<CategoryEers> categories;
  std::optional<double> bias_index;
  std::vector<std::string> notes;
  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  std::vector<Category> categories{Category::Gender, Category::Origin, Category::Age};
  Aggregation aggregation = Aggregation::Mean;
};

/// Per-requirement EERs, group EERs for the requested categories and the bias index when all
/// three categories have at least two groups. Order of samples does not matter.
EvalReport evaluate(std::span<const ScoredSample> samples, const EvalOptions& options = {});

/// Operating thresholds at the EER points; 0.5 for requirements that were not evaluable.
std::array<double, kRequirementCount> eer_thresholds(const EvalReport& report);

/// Writes tab-separated tables into `dir`:
///   compliance.tsv  Requirement, Rq#, C, NC, %NC (evaluated samples)
///   eer.tsv         Requirement, Rq#, EER, Threshold, then an Average row; "-" when not evaluable
///   groups.tsv      Category, Group, EER, Delta, Evaluated, Skipped
///   bias.tsv        Overall, one delta column per group, Bias Index
///   notes.txt       one line per diagnostic, only when there are any
/// Numbers are rounded to 3 decimals. Without group results the last two tables are not written
/// and notes.txt says so. Returns the written paths.
std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir);

/// Reads the files written by emit_report. Throws DataError on malformed tables.
EvalReport parse_report(const std::filesystem::path& dir);

/// The report as emit_report presents it: every number rounded to 3 decimals.
EvalReport rounded(const EvalReport& report);

}  // namespace icao
