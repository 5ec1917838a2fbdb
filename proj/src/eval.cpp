// SPDX-License-Identifier: Apache-2.0
#include "icao/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "icao/errors.hpp"

namespace icao {

namespace {

constexpr std::array<std::string_view, 3> kCategoryNames{"gender", "origin", "age"};
constexpr std::array<std::string_view, 2> kGenderLabels{"Male", "Female"};
constexpr std::array<std::string_view, 3> kOriginLabels{"Asian", "Caucasian", "African"};
constexpr std::array<std::string_view, 5> kAgeLabels{"[0-20]", "[21-35]", "[36-50]", "[51-65]", "[66+]"};

double r3(double v) { return std::round(v * 1000.0) / 1000.0; }

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", r3(v) == 0.0 ? 0.0 : v);
  return buf;
}

std::string fmt_delta(double v) {
  const double r = r3(v);
  if (r == 0.0) return "0.000";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.3f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt3(*v) : "-"; }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split(line, '\t'));
  }
  return rows;
}

double parse_number(const std::string& s, const std::filesystem::path& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw DataError("malformed number '" + s + "' in " + path.string());
  }
  return v;
}

std::optional<double> parse_opt(const std::string& s, const std::filesystem::path& path) {
  if (s == "-") return std::nullopt;
  return parse_number(s, path);
}

std::string join_ids(const std::vector<RequirementId>& ids) {
  if (ids.empty()) return "-";
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out += ',';
    out += std::to_string(index_of(id));
  }
  return out;
}

std::vector<RequirementId> parse_ids(const std::string& s, const std::filesystem::path& path) {
  std::vector<RequirementId> out;
  if (s == "-" || s.empty()) return out;
  for (const auto& tok : split(s, ',')) {
    auto id = parse_requirement(tok);
    if (!id) throw DataError("unknown requirement '" + tok + "' in " + path.string());
    out.push_back(*id);
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

EerResult eer(std::span<const double> positive_scores, std::span<const double> negative_scores) {
  const std::size_t np = positive_scores.size(), nn = negative_scores.size();
  if (np == 0 || nn == 0) throw DataError("EER needs both classes");
  std::vector<double> pos(positive_scores.begin(), positive_scores.end());
  std::vector<double> neg(negative_scores.begin(), negative_scores.end());
  for (double v : pos)
    if (!std::isfinite(v)) throw DataError("non-finite score");
  for (double v : neg)
    if (!std::isfinite(v)) throw DataError("non-finite score");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> cand;
  cand.reserve(np + nn + 1);
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(cand));
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  cand.push_back(std::nextafter(cand.back(), std::numeric_limits<double>::infinity()));

  // Walk thresholds upwards; pos_lt = #positives below t, neg_lt = #negatives below t.
  std::size_t pi = 0, ni = 0;
  double prev_far = 1.0, prev_frr = 0.0, prev_t = cand.front();
  for (std::size_t k = 0; k < cand.size(); ++k) {
    const double t = cand[k];
    while (pi < np && pos[pi] < t) ++pi;
    while (ni < nn && neg[ni] < t) ++ni;
    const std::size_t neg_ge = nn - ni;
    const double far = static_cast<double>(neg_ge) / nn;
    const double frr = static_cast<double>(pi) / np;
    // Exact rational comparison of FAR <= FRR.
    if (static_cast<unsigned __int128>(neg_ge) * np <= static_cast<unsigned __int128>(pi) * nn) {
      if (neg_ge * np == pi * nn || k == 0) return {far, t, np, nn};
      const double d_prev = prev_far - prev_frr;
      const double d_cur = far - frr;
      const double s = d_prev / (d_prev - d_cur);
      return {prev_far + s * (far - prev_far), prev_t + s * (t - prev_t), np, nn};
    }
    prev_far = far;
    prev_frr = frr;
    prev_t = t;
  }
  throw std::logic_error("EER sweep found no crossing");
}

EerResult eer(std::span<const ScoredSample> samples) {
  std::vector<double> pos, neg;
  std::optional<RequirementId> req;
  for (const auto& s : samples) {
    if (req && *req != s.requirement) throw DataError("EER samples mix requirements");
    req = s.requirement;
    if (!s.gated_in) continue;
    (s.label ? pos : neg).push_back(s.score);
  }
  if (pos.empty() || neg.empty()) {
    const std::string name = req ? std::string(short_name(*req)) : std::string("(no samples)");
    throw DataError("single-class samples for " + name + ": " + std::to_string(pos.size()) + " non-compliant, " +
                    std::to_string(neg.size()) + " compliant");
  }
  return eer(pos, neg);
}

std::string_view to_string(Category c) noexcept { return kCategoryNames[static_cast<int>(c)]; }

std::optional<Category> parse_category(std::string_view s) noexcept {
  for (int i = 0; i < 3; ++i)
    if (kCategoryNames[i] == s) return static_cast<Category>(i);
  return std::nullopt;
}

std::string_view to_string(Aggregation a) noexcept { return a == Aggregation::Mean ? "mean" : "pooled"; }

std::optional<Aggregation> parse_aggregation(std::string_view s) noexcept {
  if (s == "mean") return Aggregation::Mean;
  if (s == "pooled") return Aggregation::Pooled;
  return std::nullopt;
}

int group_count(Category c) noexcept {
  switch (c) {
    case Category::Gender: return kGenderCount;
    case Category::Origin: return kOriginCount;
    case Category::Age: return kAgeGroupCount;
  }
  return 0;
}

std::string_view group_label(Category c, int g) noexcept {
  switch (c) {
    case Category::Gender: return kGenderLabels[g];
    case Category::Origin: return kOriginLabels[g];
    case Category::Age: return kAgeLabels[g];
  }
  return {};
}

int group_of(Category c, const DemographicProfile& p) noexcept {
  switch (c) {
    case Category::Gender: return static_cast<int>(p.gender);
    case Category::Origin: return static_cast<int>(p.origin);
    case Category::Age: return static_cast<int>(p.age_group);
  }
  return 0;
}

namespace {

struct Split {
  std::vector<double> pos, neg;
  bool evaluable() const { return !pos.empty() && !neg.empty(); }
};

// Mean of per-requirement EERs over requirements with both classes.
std::optional<double> mean_eer(const std::array<Split, kRequirementCount>& by_req, std::vector<RequirementId>* evaluated,
                               std::vector<RequirementId>* skipped) {
  double sum = 0.0;
  int n = 0;
  for (int r = 0; r < kRequirementCount; ++r) {
    const auto& s = by_req[r];
    if (s.pos.empty() && s.neg.empty()) continue;
    if (!s.evaluable()) {
      if (skipped) skipped->push_back(requirement_at_slot(r));
      continue;
    }
    sum += eer(s.pos, s.neg).eer;
    ++n;
    if (evaluated) evaluated->push_back(requirement_at_slot(r));
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace

CategoryEers group_eers(std::span<const ScoredSample> samples, Category category, Aggregation aggregation) {
  std::array<Split, kRequirementCount> all{};
  std::vector<std::array<Split, kRequirementCount>> groups(group_count(category));
  std::vector<bool> present(group_count(category), false);
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (!s.gated_in) continue;
    ++n;
    const int g = group_of(category, s.group);
    present[g] = true;
    auto& a = all[slot_of(s.requirement)];
    auto& b = groups[g][slot_of(s.requirement)];
    (s.label ? a.pos : a.neg).push_back(s.score);
    (s.label ? b.pos : b.neg).push_back(s.score);
  }
  if (n == 0) throw DataError("group evaluation has no gated-in samples");

  auto pooled = [](const std::array<Split, kRequirementCount>& by_req) -> std::optional<double> {
    Split p;
    for (const auto& s : by_req) {
      p.pos.insert(p.pos.end(), s.pos.begin(), s.pos.end());
      p.neg.insert(p.neg.end(), s.neg.begin(), s.neg.end());
    }
    if (!p.evaluable()) return std::nullopt;
    return eer(p.pos, p.neg).eer;
  };

  CategoryEers out;
  out.category = category;
  const auto overall = aggregation == Aggregation::Mean ? mean_eer(all, nullptr, nullptr) : pooled(all);
  if (!overall) throw DataError(std::string(to_string(category)) + ": no requirement has both classes");
  out.overall = *overall;

  for (int g = 0; g < group_count(category); ++g) {
    if (!present[g]) continue;
    GroupEer ge;
    ge.group = g;
    std::optional<double> v;
    if (aggregation == Aggregation::Mean) {
      v = mean_eer(groups[g], &ge.evaluated, &ge.skipped);
    } else {
      for (int r = 0; r < kRequirementCount; ++r) {
        const auto& s = groups[g][r];
        if (s.pos.empty() && s.neg.empty()) continue;
        (s.evaluable() ? ge.evaluated : ge.skipped).push_back(requirement_at_slot(r));
      }
      v = pooled(groups[g]);
    }
    if (!v) {
      throw DataError("empty group: " + std::string(to_string(category)) + " group " +
                      std::string(group_label(category, g)) + " has no requirement with both classes");
    }
    ge.eer = *v;
    ge.delta = ge.eer - out.overall;
    out.groups.push_back(std::move(ge));
  }
  return out;
}

double bias_index(const std::map<Category, std::vector<double>>& group_values) {
  double total = 0.0;
  for (Category c : kCategories) {
    auto it = group_values.find(c);
    if (it == group_values.end()) throw DataError("bias index: missing category " + std::string(to_string(c)));
    if (it->second.size() < 2) {
      throw DataError("bias index: category " + std::string(to_string(c)) + " needs at least two groups");
    }
    const auto [lo, hi] = std::minmax_element(it->second.begin(), it->second.end());
    total += *hi - *lo;
  }
  return total;
}

double bias_index(std::span<const CategoryEers> categories) {
  std::map<Category, std::vector<double>> values;
  for (const auto& c : categories) {
    auto& v = values[c.category];
    for (const auto& g : c.groups) v.push_back(g.eer);
  }
  return bias_index(values);
}

EvalReport evaluate(std::span<const ScoredSample> samples, const EvalOptions& options) {
  EvalReport report;
  report.aggregation = options.aggregation;
  std::array<Split, kRequirementCount> by_req{};
  for (const auto& s : samples) {
    if (!s.gated_in) continue;
    if (!std::isfinite(s.score) || s.score < 0.0 || s.score > 1.0) {
      throw DataError("score for " + s.image_id + " is outside [0,1]");
    }
    auto& b = by_req[slot_of(s.requirement)];
    (s.label ? b.pos : b.neg).push_back(s.score);
  }
  double sum = 0.0;
  int n = 0;
  for (int r = 0; r < kRequirementCount; ++r) {
    auto& re = report.requirements[r];
    re.n_positive = by_req[r].pos.size();
    re.n_negative = by_req[r].neg.size();
    if (!by_req[r].evaluable()) continue;
    const auto e = eer(by_req[r].pos, by_req[r].neg);
    re.eer = e.eer;
    re.threshold = e.threshold;
    sum += e.eer;
    ++n;
  }
  if (n > 0) report.mean_eer = sum / n;

  for (Category c : options.categories) {
    try {
      report.categories.push_back(group_eers(samples, c, options.aggregation));
    } catch (const DataError& e) {
      report.notes.push_back(std::string(to_string(c)) + " groups omitted: " + e.what());
    }
  }
  try {
    report.bias_index = bias_index(report.categories);
  } catch (const DataError& e) {
    report.notes.push_back(std::string("bias index not computed: ") + e.what());
  }
  return report;
}

std::array<double, kRequirementCount> eer_thresholds(const EvalReport& report) {
  std::array<double, kRequirementCount> t{};
  const double lo = std::nextafter(0.0, 1.0), hi = std::nextafter(1.0, 0.0);
  for (int r = 0; r < kRequirementCount; ++r) {
    const auto& th = report.requirements[r].threshold;
    t[r] = th ? std::clamp(*th, lo, hi) : 0.5;
  }
  return t;
}

EvalReport rounded(const EvalReport& report) {
  EvalReport out = report;
  auto ro = [](std::optional<double>& v) {
    if (v) v = r3(*v);
  };
  for (auto& r : out.requirements) {
    ro(r.eer);
    ro(r.threshold);
  }
  ro(out.mean_eer);
  ro(out.bias_index);
  for (auto& c : out.categories) {
    c.overall = r3(c.overall);
    for (auto& g : c.groups) {
      g.eer = r3(g.eer);
      g.delta = r3(g.delta);
    }
  }
  return out;
}

std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;

  {
    std::ostringstream os;
    os << "Requirement\tRq#\tC\tNC\t%NC\n";
    for (int r = 0; r < kRequirementCount; ++r) {
      const auto& re = report.requirements[r];
      const auto id = requirement_at_slot(r);
      const std::size_t total = re.n_positive + re.n_negative;
      char pct[32] = "-";
      if (total > 0) std::snprintf(pct, sizeof pct, "%.2f", 100.0 * re.n_positive / total);
      os << info(id).display_name << '\t' << index_of(id) << '\t' << re.n_negative << '\t' << re.n_positive << '\t'
         << pct << '\n';
    }
    written.push_back(dir / "compliance.tsv");
    write_file(written.back(), os.str());
  }
  {
    std::ostringstream os;
    os << "Requirement\tRq#\tEER\tThreshold\n";
    for (int r = 0; r < kRequirementCount; ++r) {
      const auto& re = report.requirements[r];
      const auto id = requirement_at_slot(r);
      os << info(id).display_name << '\t' << index_of(id) << '\t' << fmt_opt(re.eer) << '\t' << fmt_opt(re.threshold)
         << '\n';
    }
    os << "Average\t-\t" << fmt_opt(report.mean_eer) << "\t-\n";
    written.push_back(dir / "eer.tsv");
    write_file(written.back(), os.str());
  }

  std::vector<std::string> notes = report.notes;
  const auto groups_path = dir / "groups.tsv";
  const auto bias_path = dir / "bias.tsv";
  if (report.categories.empty()) {
    std::filesystem::remove(groups_path);
    std::filesystem::remove(bias_path);
    notes.push_back("bias section omitted: no per-group results");
  } else {
    std::ostringstream g;
    g << "# aggregation: " << to_string(report.aggregation) << '\n';
    g << "Category\tGroup\tEER\tDelta\tEvaluated\tSkipped\n";
    for (const auto& c : report.categories) {
      g << to_string(c.category) << "\tOverall\t" << fmt3(c.overall) << "\t0.000\t-\t-\n";
      for (const auto& ge : c.groups) {
        g << to_string(c.category) << '\t' << group_label(c.category, ge.group) << '\t' << fmt3(ge.eer) << '\t'
          << fmt_delta(ge.delta) << '\t' << join_ids(ge.evaluated) << '\t' << join_ids(ge.skipped) << '\n';
      }
    }
    written.push_back(groups_path);
    write_file(groups_path, g.str());

    std::ostringstream b;
    std::ostringstream vals;
    b << "Overall";
    vals << fmt3(report.categories.front().overall);
    for (Category c : kCategories) {
      const CategoryEers* ce = nullptr;
      for (const auto& x : report.categories)
        if (x.category == c) ce = &x;
      for (int gi = 0; gi < group_count(c); ++gi) {
        b << '\t' << group_label(c, gi);
        const GroupEer* found = nullptr;
        if (ce)
          for (const auto& ge : ce->groups)
            if (ge.group == gi) found = &ge;
        vals << '\t' << (found ? fmt_delta(found->delta) : std::string("-"));
      }
    }
    b << "\tBias Index\n";
    vals << '\t' << fmt_opt(report.bias_index) << '\n';
    written.push_back(bias_path);
    write_file(bias_path, b.str() + vals.str());
  }

  const auto notes_path = dir / "notes.txt";
  if (notes.empty()) {
    std::filesystem::remove(notes_path);
  } else {
    std::string text;
    for (const auto& n : notes) text += n + '\n';
    written.push_back(notes_path);
    write_file(notes_path, text);
  }
  return written;
}

EvalReport parse_report(const std::filesystem::path& dir) {
  EvalReport report;

  const auto cpath = dir / "compliance.tsv";
  const auto crows = read_tsv(cpath);
  if (crows.size() != kRequirementCount + 1) throw DataError("compliance.tsv must have 26 rows and a header");
  for (int r = 0; r < kRequirementCount; ++r) {
    const auto& row = crows[r + 1];
    if (row.size() != 5 || row[1] != std::to_string(index_of(requirement_at_slot(r)))) {
      throw DataError("malformed row " + std::to_string(r + 2) + " in " + cpath.string());
    }
    report.requirements[r].n_negative = static_cast<std::size_t>(parse_number(row[2], cpath));
    report.requirements[r].n_positive = static_cast<std::size_t>(parse_number(row[3], cpath));
  }

  const auto epath = dir / "eer.tsv";
  const auto erows = read_tsv(epath);
  if (erows.size() != kRequirementCount + 2) throw DataError("eer.tsv must have 26 rows, an Average row and a header");
  for (int r = 0; r < kRequirementCount; ++r) {
    const auto& row = erows[r + 1];
    if (row.size() != 4) throw DataError("malformed row " + std::to_string(r + 2) + " in " + epath.string());
    report.requirements[r].eer = parse_opt(row[2], epath);
    report.requirements[r].threshold = parse_opt(row[3], epath);
  }
  if (erows.back().size() != 4 || erows.back()[0] != "Average") throw DataError("eer.tsv lacks the Average row");
  report.mean_eer = parse_opt(erows.back()[2], epath);

  const auto gpath = dir / "groups.tsv";
  if (std::filesystem::exists(gpath)) {
    std::ifstream in(gpath);
    std::string first;
    std::getline(in, first);
    const std::string prefix = "# aggregation: ";
    if (first.rfind(prefix, 0) != 0) throw DataError("groups.tsv lacks the aggregation line");
    auto agg = parse_aggregation(first.substr(prefix.size()));
    if (!agg) throw DataError("groups.tsv has an unknown aggregation");
    report.aggregation = *agg;
    auto rows = read_tsv(gpath);
    for (std::size_t i = 2; i < rows.size(); ++i) {
      const auto& row = rows[i];
      if (row.size() != 6) throw DataError("malformed row in " + gpath.string());
      auto cat = parse_category(row[0]);
      if (!cat) throw DataError("unknown category '" + row[0] + "' in " + gpath.string());
      if (row[1] == "Overall") {
        CategoryEers ce;
        ce.category = *cat;
        ce.overall = parse_number(row[2], gpath);
        report.categories.push_back(ce);
        continue;
      }
      if (report.categories.empty() || report.categories.back().category != *cat) {
        throw DataError("group row before its Overall row in " + gpath.string());
      }
      GroupEer ge;
      ge.group = -1;
      for (int g = 0; g < group_count(*cat); ++g)
        if (group_label(*cat, g) == row[1]) ge.group = g;
      if (ge.group < 0) throw DataError("unknown group '" + row[1] + "' in " + gpath.string());
      ge.eer = parse_number(row[2], gpath);
      ge.delta = parse_number(row[3], gpath);
      ge.evaluated = parse_ids(row[4], gpath);
      ge.skipped = parse_ids(row[5], gpath);
      report.categories.back().groups.push_back(std::move(ge));
    }
  }

  const auto bpath = dir / "bias.tsv";
  if (std::filesystem::exists(bpath)) {
    const auto rows = read_tsv(bpath);
    if (rows.size() != 2 || rows[0].back() != "Bias Index" || rows[1].size() != rows[0].size()) {
      throw DataError("malformed " + bpath.string());
    }
    report.bias_index = parse_opt(rows[1].back(), bpath);
  }

  const auto npath = dir / "notes.txt";
  if (std::filesystem::exists(npath)) {
    std::ifstream in(npath);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) report.notes.push_back(line);
    }
    if (report.categories.empty() && !report.notes.empty() &&
        report.notes.back() == "bias section omitted: no per-group results") {
      report.notes.pop_back();
    }
  }
  return report;
}

}  // namespace icao
