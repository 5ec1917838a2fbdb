// SPDX-License-Identifier: Apache-2.0
#include "icao/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "icao/errors.hpp"
#include "icao/rng.hpp"

namespace icao {

namespace {

bool counts_for(const ImageRecord& r, RequirementId id) {
  if (r.quality_tier != QualityTier::Gen || r.restricted_to.empty()) return true;
  return std::find(r.restricted_to.begin(), r.restricted_to.end(), id) != r.restricted_to.end();
}

}  // namespace

DistributionTable distribution_stats(std::span<const ImageRecord> records) {
  if (records.empty()) throw DataError("distribution_stats: no records");
  DistributionTable t;
  std::map<std::string, DemographicProfile> subjects;
  for (const auto& r : records) {
    ++t.n_images;
    ++t.images_per_tier[static_cast<int>(r.quality_tier)];
    auto [it, inserted] = subjects.emplace(r.subject_id, r.demographics);
    if (!inserted) {
      const auto& d = it->second;
      if (d.gender != r.demographics.gender || d.origin != r.demographics.origin ||
          d.age_group != r.demographics.age_group) {
        throw DataError("subject '" + r.subject_id + "' has conflicting demographics (image " +
                        r.image_id + ")");
      }
    }
  }
  t.n_subjects = subjects.size();
  for (const auto& [id, d] : subjects) {
    ++t.gender[static_cast<int>(d.gender)];
    ++t.origin[static_cast<int>(d.origin)];
    ++t.age[static_cast<int>(d.age_group)];
  }
  return t;
}

ComplianceDistribution compliance_distribution(std::span<const ImageRecord> records) {
  if (records.empty()) throw DataError("compliance_distribution: no records");
  ComplianceDistribution dist{};
  for (const auto& r : records) {
    const bool gen = r.quality_tier == QualityTier::Gen;
    for (const auto& [id, label] : r.labels) {
      if (!counts_for(r, id)) continue;
      auto& row = dist[slot_of(id)];
      switch (label.state) {
        case ComplianceState::Compliant: ++row.n_compliant; break;
        case ComplianceState::NonCompliant: ++(gen ? row.n_generated_noncompliant : row.n_noncompliant); break;
        case ComplianceState::NoWayToConfirm: break;
      }
    }
  }
  for (auto& row : dist) {
    const std::size_t nc = row.n_noncompliant_total();
    const std::size_t total = row.n_compliant + nc;
    row.pct_noncompliant = total ? 100.0 * static_cast<double>(nc) / static_cast<double>(total)
                                 : std::numeric_limits<double>::quiet_NaN();
  }
  return dist;
}

void MaskSummary::add(const Tensor3& masks) {
  if (masks.channels != kRegionCount) throw ShapeError("mask set must have 8 channels");
  for (int m = 0; m < kRegionCount; ++m) {
    for (double v : masks.channel(m)) ++(v >= 0.5 ? positive[m] : negative[m]);
  }
}

WeightSet WeightSet::uniform() {
  WeightSet w;
  w.lambda_r.fill(1.0);
  w.beta_r.fill(1.0);
  w.lambda_m.fill(1.0);
  w.lambda_r_num.fill(1);
  w.lambda_r_den.fill(1);
  return w;
}

std::string WeightSet::to_json() const {
  nlohmann::ordered_json j;
  j["lambda_r"] = lambda_r;
  j["beta_r"] = beta_r;
  j["lambda_m"] = lambda_m;
  j["lambda_r_num"] = lambda_r_num;
  j["lambda_r_den"] = lambda_r_den;
  return j.dump(2) + "\n";
}

WeightSet WeightSet::from_json(std::string_view text) {
  WeightSet w = uniform();
  try {
    auto j = nlohmann::json::parse(text);
    auto take = [&](const char* key, auto& arr) {
      auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != arr.size()) throw ConfigError(std::string("weights: '") + key + "' has wrong length");
      std::copy(v.begin(), v.end(), arr.begin());
    };
    take("lambda_r", w.lambda_r);
    take("beta_r", w.beta_r);
    take("lambda_m", w.lambda_m);
    if (j.contains("lambda_r_num")) {
      w.lambda_r_num = j["lambda_r_num"].get<std::array<std::uint64_t, kRequirementCount>>();
      w.lambda_r_den = j.at("lambda_r_den").get<std::array<std::uint64_t, kRequirementCount>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("weights: ") + e.what());
  }
  auto check = [](std::span<const double> v) {
    for (double x : v) {
      if (!std::isfinite(x) || x <= 0.0) throw ConfigError("weights: every entry must be finite and > 0");
    }
  };
  check(w.lambda_r);
  check(w.beta_r);
  check(w.lambda_m);
  return w;
}

std::vector<double> balance_weights(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw DataError("balance_weights: no counts");
  double inv_sum = 0.0;
  for (auto c : counts) {
    if (c == 0) throw DataError("balance_weights: zero sample count");
    inv_sum += 1.0 / static_cast<double>(c);
  }
  std::vector<double> beta;
  beta.reserve(counts.size());
  const double r = static_cast<double>(counts.size());
  for (auto c : counts) beta.push_back(r * (1.0 / static_cast<double>(c)) / inv_sum);
  return beta;
}

WeightSet derive_weights(std::span<const ImageRecord> records, const MaskSummary& masks, const RuleSet& rules,
                         DegeneratePolicy policy) {
  WeightSet w;
  std::array<std::uint64_t, kRequirementCount> n_c{}, n_nc{};
  for (const auto& r : records) {
    GateVector g = gate_record(r, rules);
    for (const auto& [id, label] : r.labels) {
      if (!g.open(id)) continue;
      ++(label.is_non_compliant() ? n_nc : n_c)[slot_of(id)];
    }
  }

  std::array<std::uint64_t, kRequirementCount> v{};
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string name(kRequirements[i].short_name);
    v[i] = n_c[i] + n_nc[i];
    if (n_c[i] == 0 || n_nc[i] == 0) {
      std::string msg = "degenerate class for requirement " + name + ": " + std::to_string(n_c[i]) +
                        " compliant, " + std::to_string(n_nc[i]) + " non-compliant gated-in samples";
      if (policy == DegeneratePolicy::Fail) throw DataError(msg);
      w.warnings.push_back(msg + "; lambda set to 1");
      w.lambda_r[i] = 1.0;
      w.lambda_r_num[i] = 1;
      w.lambda_r_den[i] = 1;
    } else {
      w.lambda_r_num[i] = n_c[i];
      w.lambda_r_den[i] = n_nc[i];
      w.lambda_r[i] = static_cast<double>(n_c[i]) / static_cast<double>(n_nc[i]);
    }
  }

  // Requirements with no gated-in samples never contribute to the loss; give them the mean
  // inverse count so the remaining weights keep the sum-to-R normalization.
  double inv_sum = 0.0;
  std::size_t populated = 0;
  for (auto c : v) {
    if (c) {
      inv_sum += 1.0 / static_cast<double>(c);
      ++populated;
    }
  }
  if (populated == 0) throw DataError("derive_weights: no gated-in samples at all");
  const double fill_inv = inv_sum / static_cast<double>(populated);
  const double total_inv = inv_sum + fill_inv * static_cast<double>(kRequirementCount - populated);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double inv = v[i] ? 1.0 / static_cast<double>(v[i]) : fill_inv;
    w.beta_r[i] = kRequirementCount * inv / total_inv;
  }

  for (int m = 0; m < kRegionCount; ++m) {
    const auto pos = masks.positive[m];
    const auto neg = masks.negative[m];
    const std::string name(kRegionNames[m]);
    if (pos == 0 || neg == 0) {
      std::string msg = "degenerate mask " + name + ": " + std::to_string(pos) + " positive, " +
                        std::to_string(neg) + " negative pixels";
      if (policy == DegeneratePolicy::Fail) throw DataError(msg);
      w.warnings.push_back(msg + "; lambda set to 1");
      w.lambda_m[m] = 1.0;
    } else {
      w.lambda_m[m] = static_cast<double>(neg) / static_cast<double>(pos);
    }
  }
  return w;
}

int cell_index(const DemographicProfile& p) noexcept {
  return (static_cast<int>(p.gender) * kOriginCount + static_cast<int>(p.origin)) * kAgeGroupCount +
         static_cast<int>(p.age_group);
}

DemographicCell cell_at(int index) noexcept {
  const int age = index % kAgeGroupCount;
  const int origin = (index / kAgeGroupCount) % kOriginCount;
  const int gender = index / (kAgeGroupCount * kOriginCount);
  return {static_cast<Gender>(gender), static_cast<Origin>(origin), static_cast<AgeGroup>(age)};
}

BalanceResult select_balanced_subset(std::span<const ImageRecord> records, const BalanceTargets& targets,
                                     std::uint64_t seed) {
  std::array<std::vector<std::string>, kDemographicCells> by_cell;
  {
    std::map<std::string, int> subject_cell;
    for (const auto& r : records) subject_cell.emplace(r.subject_id, cell_index(r.demographics));
    for (const auto& [id, cell] : subject_cell) by_cell[cell].push_back(id);  // sorted by id
  }

  double fsum = 0.0;
  for (double f : targets.fraction) {
    if (!(f >= 0.0)) throw ConfigError("balance targets must be non-negative");
    fsum += f;
  }
  if (fsum <= 0.0) throw ConfigError("balance targets sum to zero");

  // Largest subject total every populated cell can honour at the requested fractions.
  std::size_t total = std::numeric_limits<std::size_t>::max();
  for (int c = 0; c < kDemographicCells; ++c) {
    const double f = targets.fraction[c] / fsum;
    if (f <= 0.0 || by_cell[c].empty()) continue;
    total = std::min(total, static_cast<std::size_t>(std::floor(by_cell[c].size() / f + 1e-9)));
  }
  if (total == std::numeric_limits<std::size_t>::max()) total = 0;
  if (targets.max_subjects) total = std::min(total, *targets.max_subjects);

  BalanceResult result;
  std::set<std::string> chosen;
  for (int c = 0; c < kDemographicCells; ++c) {
    CellReport cell;
    cell.cell = cell_at(c);
    cell.available = by_cell[c].size();
    cell.target = static_cast<std::size_t>(std::floor(total * targets.fraction[c] / fsum + 1e-9));
    cell.achieved = std::min(cell.target, cell.available);
    if (cell.achieved < cell.target) result.report.shortfall = true;

    std::vector<std::string> pool = by_cell[c];
    Rng rng(seed, static_cast<std::uint64_t>(c));
    rng.shuffle(pool.begin(), pool.end());
    chosen.insert(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cell.achieved));
    result.report.cells.push_back(cell);
  }

  for (const auto& r : records) {
    if (chosen.count(r.subject_id)) result.subset.push_back(r);
  }
  result.report.subjects_selected = chosen.size();
  result.report.images_selected = result.subset.size();

  // Marginals over selected subjects against the marginals implied by the cell targets.
  const double n = static_cast<double>(chosen.size());
  auto marginal = [&](const std::string& category, const std::string& group, auto belongs) {
    double target = 0.0;
    std::size_t achieved = 0;
    for (int c = 0; c < kDemographicCells; ++c) {
      if (!belongs(cell_at(c))) continue;
      target += targets.fraction[c] / fsum;
      achieved += result.report.cells[c].achieved;
    }
    result.report.marginals.push_back(
        {category, group, 100.0 * target, n > 0 ? 100.0 * static_cast<double>(achieved) / n : 0.0});
  };
  for (int g = 0; g < kGenderCount; ++g) {
    marginal("gender", std::string(to_string(static_cast<Gender>(g))),
             [g](const DemographicCell& c) { return static_cast<int>(c.gender) == g; });
  }
  for (int o = 0; o < kOriginCount; ++o) {
    marginal("origin", std::string(to_string(static_cast<Origin>(o))),
             [o](const DemographicCell& c) { return static_cast<int>(c.origin) == o; });
  }
  for (int a = 0; a < kAgeGroupCount; ++a) {
    marginal("age", std::string(to_string(static_cast<AgeGroup>(a))),
             [a](const DemographicCell& c) { return static_cast<int>(c.age) == a; });
  }
  return result;
}

std::string BalanceReport::to_text() const {
  std::ostringstream os;
  char buf[160];
  os << "subjects_selected\t" << subjects_selected << "\nimages_selected\t" << images_selected << "\n";
  os << "gender\torigin\tage\tavailable\ttarget\tachieved\n";
  for (const auto& c : cells) {
    os << to_string(c.cell.gender) << '\t' << to_string(c.cell.origin) << '\t' << to_string(c.cell.age) << '\t'
       << c.available << '\t' << c.target << '\t' << c.achieved << (c.achieved < c.target ? "\tSHORTFALL" : "")
       << '\n';
  }
  os << "category\tgroup\ttarget_pct\tachieved_pct\n";
  for (const auto& m : marginals) {
    std::snprintf(buf, sizeof buf, "%s\t%s\t%.1f\t%.1f\n", m.category.c_str(), m.group.c_str(), m.target_pct,
                  m.achieved_pct);
    os << buf;
  }
  return os.str();
}

std::vector<std::string> subject_leakage(std::span<const ImageRecord> records) {
  std::set<std::string> train, test;
  for (const auto& r : records) {
    if (r.partition == Partition::Train || r.partition == Partition::TrainBalanced) train.insert(r.subject_id);
    if (r.partition == Partition::Test) test.insert(r.subject_id);
  }
  std::vector<std::string> both;
  std::set_intersection(train.begin(), train.end(), test.begin(), test.end(), std::back_inserter(both));
  return both;
}

std::vector<ImageRecord> assign_partitions(std::span<const ImageRecord> records, double test_fraction,
                                           std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ConfigError("test_fraction must be in [0,1]");
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.subject_id);
  std::vector<std::string> subjects(ids.begin(), ids.end());
  Rng rng(seed);
  rng.shuffle(subjects.begin(), subjects.end());
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(subjects.size())));
  std::set<std::string> test(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_test));

  std::vector<ImageRecord> out(records.begin(), records.end());
  for (auto& r : out) r.partition = test.count(r.subject_id) ? Partition::Test : Partition::Train;
  return out;
}

}  // namespace icao
