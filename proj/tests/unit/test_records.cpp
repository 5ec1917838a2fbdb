// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "icao/errors.hpp"
#include "icao/manifest.hpp"
#include "icao/reason_registry.hpp"
#include "icao/records.hpp"
#include "toy.hpp"

using namespace icao;

namespace {

ImageRecord valid_record(const std::string& id) {
  ImageRecord r;
  r.image_id = id;
  r.subject_id = "subj_" + id;
  r.source_path = id + ".ppm";
  r.labels = all_compliant_labels();
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("requirement ids and indices are a bijection on 1..26") {
  std::set<RequirementId> seen;
  for (int i = 1; i <= kRequirementCount; ++i) {
    auto id = requirement_from_index(i);
    REQUIRE(id);
    CHECK(index_of(*id) == i);
    CHECK(parse_requirement(short_name(*id)) == id);
    CHECK(parse_requirement(std::to_string(i)) == id);
    seen.insert(*id);
  }
  CHECK(seen.size() == 26);
  CHECK_FALSE(requirement_from_index(0));
  CHECK_FALSE(requirement_from_index(27));
  CHECK_FALSE(parse_requirement("no_such_requirement"));
}

TEST_CASE("only requirements 24-26 are extended") {
  for (const auto& r : kRequirements) CHECK(r.extended == (index_of(r.id) >= 24));
}

TEST_CASE("age groups have fixed boundaries") {
  CHECK(age_group_for(0) == AgeGroup::A0_20);
  CHECK(age_group_for(20) == AgeGroup::A0_20);
  CHECK(age_group_for(21) == AgeGroup::A21_35);
  CHECK(age_group_for(35) == AgeGroup::A21_35);
  CHECK(age_group_for(36) == AgeGroup::A36_50);
  CHECK(age_group_for(50) == AgeGroup::A36_50);
  CHECK(age_group_for(51) == AgeGroup::A51_65);
  CHECK(age_group_for(65) == AgeGroup::A51_65);
  CHECK(age_group_for(66) == AgeGroup::A66plus);
  CHECK(age_group_for(104) == AgeGroup::A66plus);
}

TEST_CASE("score vectors reject out-of-range entries") {
  std::array<double, 26> v{};
  v.fill(0.5);
  CHECK_NOTHROW(ScoreVector{v});
  v[3] = 1.5;
  CHECK_THROWS_AS(ScoreVector{v}, DataError);
  v[3] = std::nan("");
  CHECK_THROWS_AS(ScoreVector{v}, DataError);
}

TEST_CASE("record validation") {
  const auto& reg = ReasonRegistry::builtin();
  SUBCASE("fully populated record is valid") { CHECK(validate_record(valid_record("a"), reg).empty()); }
  SUBCASE("missing label is named") {
    auto r = valid_record("a");
    r.labels.erase(RequirementId::Posterization);
    const auto v = validate_record(r, reg);
    REQUIRE(v.size() == 1);
    CHECK(v[0].message == "missing label: posterization");
  }
  SUBCASE("Gen record without provenance") {
    auto r = valid_record("a");
    r.quality_tier = QualityTier::Gen;
    r.restricted_to = {RequirementId::Pixelation};
    const auto v = validate_record(r, reg);
    REQUIRE(v.size() == 1);
    CHECK(v[0].message == "missing provenance");
  }
  SUBCASE("reason only on non-compliant labels, from the registry") {
    auto r = valid_record("a");
    r.labels[RequirementId::ShadowsAcrossFace] = ComplianceLabel::non_compliant("strong_shadow");
    CHECK(validate_record(r, reg).empty());
    r.labels[RequirementId::ShadowsAcrossFace] = ComplianceLabel::non_compliant("purple_shadow");
    CHECK(validate_record(r, reg).size() == 1);
    CHECK(validate_record(r, reg, {true}).empty());
    r.labels[RequirementId::ShadowsAcrossFace] = {ComplianceState::Compliant, "strong_shadow", std::nullopt};
    CHECK(validate_record(r, reg).size() == 1);
  }
}

TEST_CASE("manifest lines round-trip through serialization") {
  auto r = valid_record("img_1");
  r.demographics = {Gender::Female, AgeGroup::A51_65, Origin::African, "KE"};
  r.attributes = {{"hair_color", "black"}, {"earrings", "yes"}};
  r.labels[RequirementId::HeadCoverings] = ComplianceLabel::non_compliant("turban");
  r.labels[RequirementId::RedEyes] = ComplianceLabel::no_way_to_confirm();
  r.partition = Partition::TrainBalanced;
  const std::string line = serialize_record(r);
  CHECK(parse_record(line) == r);
  CHECK(serialize_record(parse_record(line)) == line);

  auto g = valid_record("img_2");
  g.quality_tier = QualityTier::Gen;
  g.generated_from = "img_1";
  g.restricted_to = {RequirementId::Pixelation};
  CHECK(parse_record(serialize_record(g)) == g);
}

TEST_CASE("manifest parsing") {
  std::string text;
  for (const char* id : {"a", "b", "c"}) text += serialize_record(valid_record(id)) + "\n";

  SUBCASE("three valid lines") { CHECK(parse_manifest(text).size() == 3); }
  SUBCASE("blank lines are skipped") { CHECK(parse_manifest("\n" + text + "\n\n").size() == 3); }
  SUBCASE("malformed age group names the line and the field") {
    std::string bad = serialize_record(valid_record("d"));
    const auto pos = bad.find("A21_35");
    REQUIRE(pos != std::string::npos);
    bad.replace(pos, 6, "twenty");
    try {
      parse_manifest(text + bad + "\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 4);
      CHECK(std::string(e.what()).find("age_group") != std::string::npos);
    }
  }
  SUBCASE("duplicate ids are rejected with the id named") {
    try {
      parse_manifest(text + serialize_record(valid_record("b")) + "\n");
      FAIL("expected a duplicate id error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("duplicate id") != std::string::npos);
      CHECK(msg.find("'b'") != std::string::npos);
    }
  }
  SUBCASE("a third gender value is rejected") {
    std::string bad = serialize_record(valid_record("d"));
    const auto pos = bad.find("\"Male\"");
    REQUIRE(pos != std::string::npos);
    bad.replace(pos, 6, "\"Other\"");
    CHECK_THROWS_WITH_AS(parse_manifest(bad), doctest::Contains("two classes"), ParseError);
  }
  SUBCASE("unknown keys are rejected") {
    std::string bad = serialize_record(valid_record("d"));
    bad.insert(1, "\"colour\":\"red\",");
    CHECK_THROWS_AS(parse_manifest(bad), ParseError);
  }
}

TEST_CASE("manifest file round-trip and source resolution") {
  const auto dir = toy::scratch_dir("records_file");
  std::vector<ImageRecord> recs{valid_record("a"), valid_record("b")};
  write_manifest(dir / "m.ndjson", recs);
  const auto back = load_manifest(dir / "m.ndjson");
  CHECK(back == recs);
  CHECK(resolve_source(dir / "m.ndjson", back[0]) == dir / "a.ppm");
}

TEST_CASE("shipped reason registry file matches the built-in vocabulary") {
  const auto text = slurp(std::filesystem::path(ICAO_SOURCE_DIR) / "data" / "reason_registry.json");
  const auto loaded = ReasonRegistry::from_json(text);
  for (const auto& r : kRequirements) CHECK(loaded.reasons(r.id) == ReasonRegistry::builtin().reasons(r.id));
  CHECK(loaded.version() == ReasonRegistry::builtin().version());
}

TEST_CASE("registry JSON errors are config errors") {
  CHECK_THROWS_AS(ReasonRegistry::from_json("{"), ConfigError);
  CHECK_THROWS_AS(ReasonRegistry::from_json(R"({"version":1,"reasons":{"nope":[]}})"), ConfigError);
}
