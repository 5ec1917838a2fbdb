// SPDX-License-Identifier: Apache-2.0
#include "icao/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "icao/dataset.hpp"
#include "icao/degradation.hpp"
#include "icao/errors.hpp"
#include "icao/eval.hpp"
#include "icao/gaze.hpp"
#include "icao/losses.hpp"
#include "icao/manifest.hpp"
#include "icao/training.hpp"

namespace icao {

namespace fs = std::filesystem;

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

fs::path out_path(const std::string& value, std::string_view leaf) {
  if (!value.empty()) return value;
  if (const char* env = std::getenv("ICAO_OUT_DIR"); env && *env) return fs::path(env) / leaf;
  throw ConfigError("--out is required (or set ICAO_OUT_DIR)");
}

fs::path dir_of(const fs::path& file) {
  return file.has_parent_path() ? file.parent_path() : fs::path(".");
}

// Rewrites relative source paths so they resolve from `to` instead of `from`.
void rebase_sources(std::vector<ImageRecord>& records, const fs::path& from, const fs::path& to) {
  const fs::path base = fs::weakly_canonical(fs::absolute(to));
  for (auto& r : records) {
    fs::path p(r.source_path);
    if (p.is_absolute()) continue;
    const fs::path abs = fs::weakly_canonical(fs::absolute(from / p));
    const fs::path rel = abs.lexically_relative(base);
    r.source_path = (rel.empty() ? abs : rel).generic_string();
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string compliance_table(const ComplianceDistribution& dist) {
  std::string t = "Requirement\tRq#\tC\tNC\tGen\t%NC\n";
  for (int k = 0; k < kRequirementCount; ++k) {
    const RequirementId id = requirement_at_slot(k);
    const auto& d = dist[k];
    t += std::string(info(id).display_name) + '\t' + std::to_string(index_of(id)) + '\t' +
         std::to_string(d.n_compliant) + '\t' + std::to_string(d.n_noncompliant) + '\t' +
         std::to_string(d.n_generated_noncompliant) + '\t' + fmt("%.2f", d.pct_noncompliant) + '\n';
  }
  return t;
}

std::string distribution_table(const DistributionTable& s) {
  std::string t = "Category\tGroup\tCount\t%\n";
  auto row = [&](std::string_view cat, std::string_view group, std::size_t n, double pct) {
    t += std::string(cat) + '\t' + std::string(group) + '\t' + std::to_string(n) + '\t' + fmt("%.2f", pct) + '\n';
  };
  row("Images", "All", s.n_images, 100.0);
  for (int i = 0; i < 3; ++i) {
    const auto tier = static_cast<QualityTier>(i);
    row("Tier", to_string(tier), s.images_per_tier[i],
        s.n_images ? 100.0 * s.images_per_tier[i] / s.n_images : 0.0);
  }
  row("Subjects", "All", s.n_subjects, 100.0);
  for (int g = 0; g < kGenderCount; ++g)
    row("Gender", group_label(Category::Gender, g), s.gender[g], s.gender_pct(static_cast<Gender>(g)));
  for (int o = 0; o < kOriginCount; ++o)
    row("Origin", group_label(Category::Origin, o), s.origin[o], s.origin_pct(static_cast<Origin>(o)));
  for (int a = 0; a < kAgeGroupCount; ++a)
    row("Age", group_label(Category::Age, a), s.age[a], s.age_pct(static_cast<AgeGroup>(a)));
  return t;
}

std::string thresholds_json(const ThresholdVector& t) {
  nlohmann::ordered_json j;
  auto& m = j["thresholds"] = nlohmann::ordered_json::object();
  for (int k = 0; k < kRequirementCount; ++k) m[std::string(short_name(requirement_at_slot(k)))] = t[k];
  return j.dump(2) + '\n';
}

ThresholdVector load_thresholds(const fs::path& path) {
  ThresholdVector t{};
  std::array<bool, kRequirementCount> seen{};
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    for (const auto& [k, v] : j.at("thresholds").items()) {
      auto id = parse_requirement(k);
      if (!id) throw ConfigError("thresholds: unknown requirement '" + k + "'");
      t[slot_of(*id)] = v.get<double>();
      seen[slot_of(*id)] = true;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("thresholds " + path.string() + ": " + e.what());
  }
  for (int k = 0; k < kRequirementCount; ++k) {
    if (!seen[k]) throw ConfigError("thresholds: missing " + std::string(short_name(requirement_at_slot(k))));
  }
  validate_thresholds(t);
  return t;
}

std::vector<Category> parse_groups(const std::string& text) {
  std::vector<Category> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    auto c = parse_category(tok);
    if (!c) throw ConfigError("--groups: unknown category '" + tok + "'");
    out.push_back(*c);
  }
  return out;
}

struct Args {
  // shared
  std::string manifest, out, config, masks;
  std::optional<std::uint64_t> seed;
  // audit-dataset
  std::string partition, emit_tables;
  // balance
  std::optional<std::size_t> max_subjects;
  std::optional<double> test_fraction;
  // forge
  std::string plan;
  // train
  std::string resume;
  std::optional<int> epochs;
  // score / evaluate / refine-gaze
  std::string ckpt, scores, groups = "gender,origin,age", aggregation = "mean", rules, thresholds, landmarks;
  double tau = kDefaultGazeTau;
  bool dump_rules = false;
};

CommandResult cmd_audit(const Args& a, std::ostream& out, std::ostream& err) {
  auto records = load_manifest(a.manifest);
  if (!a.partition.empty()) {
    auto p = parse_partition(a.partition);
    if (!p) throw ConfigError("--partition: unknown partition '" + a.partition + "'");
    std::erase_if(records, [&](const ImageRecord& r) { return r.partition != *p; });
  }
  const std::string comp = compliance_table(compliance_distribution(records));
  const std::string dist = distribution_table(distribution_stats(records));
  out << comp << '\n' << dist;
  for (const auto& s : subject_leakage(records)) err << "warning: subject " << s << " appears in train and test\n";
  CommandResult res{kExitOk, "audited " + std::to_string(records.size()) + " records", {}};
  if (!a.emit_tables.empty()) {
    const fs::path dir(a.emit_tables);
    write_file(dir / "compliance.tsv", comp);
    write_file(dir / "distribution.tsv", dist);
    res.artifacts = {dir / "compliance.tsv", dir / "distribution.tsv"};
  }
  return res;
}

CommandResult cmd_balance(const Args& a, std::ostream& out, std::ostream&) {
  const fs::path manifest(a.manifest);
  const fs::path dest = out_path(a.out, "subset.manifest");
  const auto records = load_manifest(manifest);
  BalanceTargets targets;
  targets.max_subjects = a.max_subjects;
  auto result = select_balanced_subset(records, targets, *a.seed);
  if (a.test_fraction) result.subset = assign_partitions(result.subset, *a.test_fraction, *a.seed);
  rebase_sources(result.subset, dir_of(manifest), dir_of(dest));
  write_manifest(dest, result.subset);
  out << result.report.to_text();
  return {kExitOk, "selected " + std::to_string(result.subset.size()) + " images", {dest}};
}

CommandResult cmd_forge(const Args& a, std::ostream& out, std::ostream& err) {
  const fs::path manifest(a.manifest);
  const fs::path dir = out_path(a.out, "forge");
  const auto records = load_manifest(manifest);
  const auto plan = load_plan(a.plan);
  const fs::path masks(a.masks);
  CorpusOptions opts;
  opts.source_root = dir_of(manifest);
  opts.out_dir = dir;
  if (!a.masks.empty()) opts.masks_dir = &masks;
  auto result = generate_corpus(records, plan, opts, *a.seed);
  for (const auto& w : result.warnings) err << "warning: " << one_line(w) << '\n';
  rebase_sources(result.records, opts.source_root, dir);
  write_manifest(dir / "manifest.ndjson", result.records);
  const std::size_t generated = result.records.size() - records.size();
  out << "generated " << generated << " records\n";
  return {kExitOk, "generated " + std::to_string(generated) + " records", {dir / "manifest.ndjson"}};
}

CommandResult cmd_train(const Args& a, std::ostream& out, std::ostream&) {
  const fs::path manifest(a.manifest);
  const fs::path dir = out_path(a.out, "train");
  const fs::path cfg_path(a.config);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(cfg_path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("training config: " + std::string(e.what()));
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  if (!j.is_object()) throw ConfigError("training config must be an object");
  if (a.seed) j["seed"] = *a.seed;
  if (a.epochs) j["epochs"] = *a.epochs;
  TrainConfig config = TrainConfig::from_json(j.dump());
  if (config.rules && fs::path(*config.rules).is_relative()) config.rules = (dir_of(cfg_path) / *config.rules).string();
  if (config.weights != "derived" && fs::path(config.weights).is_relative()) {
    config.weights = (dir_of(cfg_path) / config.weights).string();
  }

  const auto records = load_manifest(manifest);
  std::optional<LoadedCheckpoint> resume;
  if (!a.resume.empty()) resume.emplace(load_checkpoint(a.resume));
  TrainOptions opts;
  opts.resume = resume ? &*resume : nullptr;
  opts.out_dir = dir;
  opts.on_epoch = [&](const EpochLog& e) {
    out << "epoch " << e.epoch << " lr " << fmt("%.6g", e.lr) << " seg " << fmt("%.6f", e.loss.seg) << " cls "
        << fmt("%.6f", e.loss.cls) << " total " << fmt("%.6f", e.loss.total) << '\n';
  };
  const auto result = train(records, dir_of(manifest), SidecarMaskSource(a.masks), config, opts);
  out << "initial " << fmt("%.6f", result.log.initial.total) << " final " << fmt("%.6f", result.log.final_pass.total)
      << '\n';
  return {kExitOk,
          "trained " + std::to_string(result.state.epoch) + " epochs",
          {dir / "checkpoint.ckpt", dir / "train_log.ndjson", dir / "weights.json"}};
}

CommandResult cmd_score(const Args& a, std::ostream& out, std::ostream&) {
  const fs::path manifest(a.manifest);
  const fs::path dest = out_path(a.out, "scores.ndjson");
  const auto ckpt = load_checkpoint(a.ckpt);
  const auto records = load_manifest(manifest);
  const auto scores = score_records(ckpt.model, records, dir_of(manifest));
  write_scores(dest, scores);
  out << "scored " << records.size() << " images\n";
  return {kExitOk, "scored " + std::to_string(records.size()) + " images", {dest}};
}

CommandResult cmd_evaluate(const Args& a, std::ostream& out, std::ostream&) {
  const fs::path dir = out_path(a.out, "report");
  EvalOptions opts;
  opts.categories = parse_groups(a.groups);
  auto agg = parse_aggregation(a.aggregation);
  if (!agg) throw ConfigError("--aggregation: expected mean or pooled");
  opts.aggregation = *agg;
  const RuleSet rules = a.rules.empty() ? RuleSet::defaults() : RuleSet::load(a.rules);

  const auto records = load_manifest(a.manifest);
  const auto scores = read_scores(a.scores);
  const auto report = evaluate(join_scores(records, scores, rules), opts);
  auto paths = emit_report(report, dir);
  write_file(dir / "thresholds.json", thresholds_json(eer_thresholds(report)));
  paths.push_back(dir / "thresholds.json");

  if (report.mean_eer) out << "mean EER " << fmt("%.3f", *report.mean_eer) << '\n';
  if (report.bias_index) out << "Bias Index " << fmt("%.3f", *report.bias_index) << '\n';
  for (const auto& n : report.notes) out << "note: " << n << '\n';
  return {kExitOk, "report written to " + dir.string(), paths};
}

CommandResult cmd_refine_gaze(const Args& a, std::ostream& out, std::ostream&) {
  const fs::path dest = out_path(a.out, "refined.ndjson");
  const auto thresholds = load_thresholds(a.thresholds);
  const auto detector = SidecarLandmarkDetector::load(a.landmarks);
  const auto entries = read_scores(a.scores);

  std::vector<std::string> order;
  std::map<std::string, std::pair<std::array<double, kRequirementCount>, std::array<bool, kRequirementCount>>> by_id;
  for (const auto& e : entries) {
    auto [it, fresh] = by_id.try_emplace(e.image_id);
    if (fresh) order.push_back(e.image_id);
    auto& [vals, seen] = it->second;
    const int s = slot_of(e.requirement);
    if (seen[s]) throw DataError("duplicate score for '" + e.image_id + "' / " + std::string(short_name(e.requirement)));
    vals[s] = e.score;
    seen[s] = true;
  }

  std::string text;
  std::size_t flipped = 0;
  for (const auto& id : order) {
    const auto& [vals, seen] = by_id.at(id);
    for (int k = 0; k < kRequirementCount; ++k) {
      if (!seen[k]) throw DataError("image '" + id + "' lacks a score for " + std::string(short_name(requirement_at_slot(k))));
    }
    const ScoreVector sv(vals);
    const auto outcome = refine_looking_away(sv, decide(sv, thresholds), detector.detect(id), a.tau);
    flipped += outcome.flipped;
    nlohmann::ordered_json j{{"image_id", id},
                             {"looking_away", outcome.looking_away.verdict == Verdict::NonCompliant ? "non_compliant"
                                                                                                  : "compliant"}};
    j["reason"] = outcome.looking_away.reason ? nlohmann::ordered_json(*outcome.looking_away.reason)
                                              : nlohmann::ordered_json();
    j["flipped"] = outcome.flipped;
    j["deviation"] = outcome.deviation ? nlohmann::ordered_json(*outcome.deviation) : nlohmann::ordered_json();
    if (!outcome.note.empty()) j["note"] = outcome.note;
    text += j.dump() + '\n';
  }
  write_file(dest, text);
  out << "refined " << order.size() << " images, " << flipped << " flipped\n";
  return {kExitOk, "refined " + std::to_string(order.size()) + " images", {dest}};
}

CommandResult cmd_dump_rules(const Args& a, std::ostream& out) {
  const std::string text = RuleSet::defaults().to_json() + '\n';
  if (a.out.empty()) {
    out << text;
    return {kExitOk, "default rules", {}};
  }
  write_file(a.out, text);
  return {kExitOk, "default rules", {fs::path(a.out)}};
}

CommandResult fail(std::ostream& err, int code, std::string_view kind, const std::string& what) {
  const std::string msg = one_line(what);
  err << "error[" << kind << "]: " << msg << '\n';
  return {code, msg, {}};
}

}  // namespace

CommandResult dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Args a;
  CLI::App app{"ICAO portrait compliance toolkit", args.empty() ? "icaoctl" : args[0]};
  app.add_flag("--dump-default-rules", a.dump_rules, "Print the shipped conflict-rule table and exit");

  auto* audit = app.add_subcommand("audit-dataset", "Validate a manifest and print its distribution tables");
  audit->add_option("manifest", a.manifest, "Manifest file")->required();
  audit->add_option("--partition", a.partition, "Restrict to one partition");
  audit->add_option("--emit-tables", a.emit_tables, "Directory for compliance.tsv and distribution.tsv");

  auto* balance = app.add_subcommand("balance", "Select a demographically balanced subject subset");
  balance->add_option("manifest", a.manifest, "Manifest file")->required();
  balance->add_option("--seed", a.seed, "Random seed")->required();
  balance->add_option("--out", a.out, "Output manifest");
  balance->add_option("--max-subjects", a.max_subjects, "Cap on selected subjects");
  balance->add_option("--test-fraction", a.test_fraction, "Assign a subject-disjoint test partition");

  auto* forge = app.add_subcommand("forge", "Generate artificial non-compliant images");
  forge->add_option("manifest", a.manifest, "Manifest file")->required();
  forge->add_option("--plan", a.plan, "Plan file")->required();
  forge->add_option("--seed", a.seed, "Random seed")->required();
  forge->add_option("--out", a.out, "Output directory");
  forge->add_option("--masks", a.masks, "Mask sidecar directory");

  auto* train_cmd = app.add_subcommand("train", "Train the segmentation/classification model");
  train_cmd->add_option("--manifest", a.manifest, "Manifest file")->required();
  train_cmd->add_option("--masks", a.masks, "Mask sidecar directory")->required();
  train_cmd->add_option("--config", a.config, "Training config (JSON)")->required();
  train_cmd->add_option("--out", a.out, "Output directory");
  train_cmd->add_option("--seed", a.seed, "Random seed (overrides the config)");
  train_cmd->add_option("--epochs", a.epochs, "Epoch count (overrides the config)");
  train_cmd->add_option("--resume", a.resume, "Checkpoint to resume from");

  auto* score = app.add_subcommand("score", "Score every image of a manifest");
  score->add_option("--ckpt", a.ckpt, "Checkpoint")->required();
  score->add_option("--manifest", a.manifest, "Manifest file")->required();
  score->add_option("--out", a.out, "Output scores (NDJSON)");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "EER, per-group EER and Bias Index report");
  evaluate_cmd->add_option("--manifest", a.manifest, "Manifest file")->required();
  evaluate_cmd->add_option("--scores", a.scores, "Scores (NDJSON)")->required();
  evaluate_cmd->add_option("--groups", a.groups, "Comma list of gender, origin, age, or none");
  evaluate_cmd->add_option("--aggregation", a.aggregation, "mean or pooled");
  evaluate_cmd->add_option("--rules", a.rules, "Conflict-rule file");
  evaluate_cmd->add_option("--out", a.out, "Report directory");

  auto* refine = app.add_subcommand("refine-gaze", "Landmark-based Looking Away refinement");
  refine->add_option("--scores", a.scores, "Scores (NDJSON)")->required();
  refine->add_option("--thresholds", a.thresholds, "Thresholds (JSON, as written by evaluate)")->required();
  refine->add_option("--landmarks", a.landmarks, "Landmarks (NDJSON)")->required();
  refine->add_option("--tau", a.tau, "Deviation threshold");
  refine->add_option("--out", a.out, "Output decisions (NDJSON)");

  auto* dump = app.add_subcommand("dump-default-rules", "Print the shipped conflict-rule table");
  dump->add_option("--out", a.out, "Write to a file instead of stdout");

  for (auto* sub : {audit, balance, forge, score, evaluate_cmd, refine}) {
    sub->set_config("--config", "", "Read options from an INI/TOML file");
  }

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  if (argv.empty()) argv.push_back("icaoctl");

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return {kExitOk, "help", {}};
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return {kExitOk, "help", {}};
  } catch (const CLI::ParseError& e) {
    return fail(err, kExitConfig, "config", e.what());
  }

  try {
    if (a.dump_rules || dump->parsed()) return cmd_dump_rules(a, out);
    if (audit->parsed()) return cmd_audit(a, out, err);
    if (balance->parsed()) return cmd_balance(a, out, err);
    if (forge->parsed()) return cmd_forge(a, out, err);
    if (train_cmd->parsed()) return cmd_train(a, out, err);
    if (score->parsed()) return cmd_score(a, out, err);
    if (evaluate_cmd->parsed()) return cmd_evaluate(a, out, err);
    if (refine->parsed()) return cmd_refine_gaze(a, out, err);
    err << app.help();
    return fail(err, kExitConfig, "config", "a subcommand is required");
  } catch (const DataError& e) {
    return fail(err, kExitData, "data", e.what());
  } catch (const ConfigError& e) {
    return fail(err, kExitConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(err, kExitRuntime, "runtime", e.what());
  }
}

}  // namespace icao
