// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "icao/cli.hpp"
#include "icao/manifest.hpp"
#include "icao/training.hpp"
#include "toy.hpp"

using namespace icao;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "icaoctl");
  std::ostringstream out, err;
  const auto res = dispatch(args, out, err);
  return {res.exit_code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

constexpr const char* kTinyTrainConfig = R"({
  "model": {"encoder_channels": [4], "input_size": [16, 16],
            "aspp_channels": 4, "dilation_rates": [2], "reduction_ratio": 4},
  "batch_size": 4, "epochs": 3, "lr": 0.01, "seed": 3
})";

}  // namespace

TEST_CASE("argument handling") {
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"train", "--help"}).out.find("--manifest") != std::string::npos);

  const auto unknown = run({"bogus"});
  CHECK(unknown.code == kExitConfig);
  CHECK(unknown.err.rfind("error[config]:", 0) == 0);

  const auto none = run({});
  CHECK(none.code == kExitConfig);

  const auto missing = run({"score", "--manifest", "m.ndjson"});
  CHECK(missing.code == kExitConfig);
  CHECK(missing.err.find("--ckpt") != std::string::npos);
}

TEST_CASE("data errors exit with code 1 and name the problem") {
  const auto dir = toy::scratch_dir("cli_data_error");
  ImageRecord r;
  r.image_id = "twin";
  r.subject_id = "s";
  r.source_path = "x.ppm";
  r.labels = all_compliant_labels();
  spit(dir / "m.ndjson", serialize_record(r) + "\n" + serialize_record(r) + "\n");
  const auto res = run({"audit-dataset", (dir / "m.ndjson").string()});
  CHECK(res.code == kExitData);
  CHECK(res.err.rfind("error[data]:", 0) == 0);
  CHECK(res.err.find("twin") != std::string::npos);
  CHECK(res.err.find('\n') == res.err.size() - 1);

  CHECK(run({"audit-dataset", (dir / "absent.ndjson").string()}).code == kExitData);
}

TEST_CASE("audit writes its tables") {
  const auto dir = toy::scratch_dir("cli_audit");
  const auto corpus = toy::make_toy_corpus(dir, 1);
  const auto res = run({"audit-dataset", corpus.manifest.string(), "--emit-tables", (dir / "tables").string()});
  CHECK(res.code == kExitOk);
  const auto compliance = slurp(dir / "tables" / "compliance.tsv");
  CHECK(compliance.rfind("Requirement\tRq#\tC\tNC\tGen\t%NC", 0) == 0);
  CHECK(fs::exists(dir / "tables" / "distribution.tsv"));
}

TEST_CASE("the default rules file matches the built-in table") {
  const auto res = run({"dump-default-rules"});
  CHECK(res.code == kExitOk);
  CHECK(RuleSet::from_json(res.out).rules() == RuleSet::defaults().rules());
  const auto shipped = slurp(fs::path(ICAO_SOURCE_DIR) / "data" / "default_rules.json");
  CHECK(RuleSet::from_json(shipped).rules() == RuleSet::defaults().rules());
  CHECK(run({"--dump-default-rules"}).out == res.out);
}

TEST_CASE("train, score, evaluate and refine end to end") {
  const auto dir = toy::scratch_dir("cli_pipeline");
  const auto corpus = toy::make_balanced_set(dir / "data", 16, 4);
  spit(dir / "train.json", kTinyTrainConfig);

  const auto trained = run({"train", "--manifest", corpus.manifest.string(), "--masks", corpus.masks.string(),
                            "--config", (dir / "train.json").string(), "--out", (dir / "run").string()});
  REQUIRE_MESSAGE(trained.code == kExitOk, trained.err);
  CHECK(fs::exists(dir / "run" / "checkpoint.ckpt"));
  CHECK(fs::exists(dir / "run" / "train_log.ndjson"));

  const auto scored = run({"score", "--ckpt", (dir / "run" / "checkpoint.ckpt").string(), "--manifest",
                           corpus.manifest.string(), "--out", (dir / "scores.ndjson").string()});
  REQUIRE_MESSAGE(scored.code == kExitOk, scored.err);
  CHECK(read_scores(dir / "scores.ndjson").size() == 16u * kRequirementCount);

  const std::vector<std::string> eval_args{"evaluate", "--manifest", corpus.manifest.string(), "--scores",
                                           (dir / "scores.ndjson").string(), "--groups", "none"};
  auto first = eval_args;
  first.insert(first.end(), {"--out", (dir / "report1").string()});
  auto second = eval_args;
  second.insert(second.end(), {"--out", (dir / "report2").string()});
  REQUIRE(run(first).code == kExitOk);
  REQUIRE(run(second).code == kExitOk);
  for (const char* f : {"eer.tsv", "compliance.tsv", "thresholds.json"}) {
    CHECK(slurp(dir / "report1" / f) == slurp(dir / "report2" / f));
    CHECK_FALSE(slurp(dir / "report1" / f).empty());
  }

  spit(dir / "landmarks.ndjson",
       R"({"image_id":"bal0","left":{"iris":[10,0],"inner":[0,0],"outer":[10,0]},"right":{"iris":[30,0],"inner":[20,0],"outer":[30,0]}})"
       "\n");
  const auto refined = run({"refine-gaze", "--scores", (dir / "scores.ndjson").string(), "--thresholds",
                            (dir / "report1" / "thresholds.json").string(), "--landmarks",
                            (dir / "landmarks.ndjson").string(), "--out", (dir / "refined.ndjson").string()});
  REQUIRE_MESSAGE(refined.code == kExitOk, refined.err);
  std::istringstream lines(slurp(dir / "refined.ndjson"));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ++n;
    if (line.find("\"bal1\"") != std::string::npos) CHECK(line.find("\"flipped\":false") != std::string::npos);
  }
  CHECK(n == 16);

  const auto bad_cfg = run({"train", "--manifest", corpus.manifest.string(), "--masks", corpus.masks.string(),
                            "--config", (dir / "nowhere.json").string(), "--out", (dir / "run2").string()});
  CHECK(bad_cfg.code == kExitConfig);
}

TEST_CASE("output directory falls back to ICAO_OUT_DIR") {
  const auto dir = toy::scratch_dir("cli_out_dir");
  const auto corpus = toy::make_balanced_set(dir / "data", 10, 5);

  ::unsetenv("ICAO_OUT_DIR");
  const auto without = run({"balance", corpus.manifest.string(), "--seed", "1"});
  CHECK(without.code == kExitConfig);
  CHECK(without.err.find("ICAO_OUT_DIR") != std::string::npos);

  ::setenv("ICAO_OUT_DIR", (dir / "env").string().c_str(), 1);
  fs::create_directories(dir / "env");
  const auto with = run({"balance", corpus.manifest.string(), "--seed", "1"});
  ::unsetenv("ICAO_OUT_DIR");
  REQUIRE_MESSAGE(with.code == kExitOk, with.err);
  CHECK(fs::exists(dir / "env" / "subset.manifest"));
  CHECK_NOTHROW(load_manifest(dir / "env" / "subset.manifest"));
}

TEST_CASE("forge writes a manifest with resolvable generated images") {
  const auto dir = toy::scratch_dir("cli_forge");
  const auto corpus = toy::make_balanced_set(dir / "data", 4, 6);
  spit(dir / "plan.json", R"({"entries":[{"effect":"posterization","params":{"levels":3},"seed":1}]})");
  const auto res = run({"forge", corpus.manifest.string(), "--plan", (dir / "plan.json").string(), "--seed", "2",
                        "--masks", corpus.masks.string(), "--out", (dir / "forged").string()});
  REQUIRE_MESSAGE(res.code == kExitOk, res.err);
  const auto m = dir / "forged" / "manifest.ndjson";
  const auto recs = load_manifest(m);
  std::size_t gen = 0;
  for (const auto& r : recs) {
    CHECK(fs::exists(resolve_source(m, r)));
    gen += r.quality_tier == QualityTier::Gen;
  }
  // Balanced-set records are half non-compliant for posterization already.
  CHECK(gen == 2);
}
