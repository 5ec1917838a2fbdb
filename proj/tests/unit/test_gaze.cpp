// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "icao/errors.hpp"
#include "icao/gaze.hpp"
#include "icao/rng.hpp"

using namespace icao;

namespace {

EyeLandmarks eye(double inner_x, double outer_x, double iris_x, double y = 0.0) {
  return {{iris_x, y}, {inner_x, y}, {outer_x, y}};
}

FaceLandmarks face_with_deviation(double d) {
  // Corner distance 10; iris displaced by 10*d from the midpoint on both eyes.
  return {eye(0, 10, 5 + 10 * d), eye(30, 20, 25 - 10 * d)};
}

DecisionMap all_compliant() {
  DecisionMap d;
  for (const auto& r : kRequirements) d[r.id] = {};
  return d;
}

ScoreVector flat_scores() {
  std::array<double, kRequirementCount> s{};
  s.fill(0.1);
  return ScoreVector{s};
}

}  // namespace

TEST_CASE("gaze deviation hand geometry") {
  CHECK(gaze_deviation({eye(0, 10, 5), eye(20, 30, 25)}) == 0.0);
  CHECK(gaze_deviation({eye(0, 10, 10), eye(20, 30, 30)}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(gaze_deviation({eye(0, 10, 7), eye(20, 30, 25)}) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("vertical displacement does not count") {
  FaceLandmarks f{eye(0, 10, 5), eye(20, 30, 25)};
  f.left->iris_center.y = 3.0;
  CHECK(gaze_deviation(f) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gaze deviation is similarity invariant") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    FaceLandmarks f;
    auto random_eye = [&] {
      return EyeLandmarks{{rng.uniform(-5, 5), rng.uniform(-5, 5)},
                          {rng.uniform(-20, -10), rng.uniform(-3, 3)},
                          {rng.uniform(10, 20), rng.uniform(-3, 3)}};
    };
    f.left = random_eye();
    f.right = random_eye();
    const double base = gaze_deviation(f);
    const double scale = rng.uniform(0.1, 10.0), angle = rng.uniform(0.0, 6.283);
    const double tx = rng.uniform(-100, 100), ty = rng.uniform(-100, 100);
    auto map = [&](Point2& p) {
      const double x = p.x, y = p.y;
      p = {scale * (std::cos(angle) * x - std::sin(angle) * y) + tx,
           scale * (std::sin(angle) * x + std::cos(angle) * y) + ty};
    };
    for (auto* e : {&*f.left, &*f.right}) {
      map(e->iris_center);
      map(e->corner_inner);
      map(e->corner_outer);
    }
    CHECK(gaze_deviation(f) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("gaze deviation errors") {
  CHECK_THROWS_AS(gaze_deviation({eye(0, 10, 5), std::nullopt}), DataError);
  CHECK_THROWS_AS(gaze_deviation({eye(0, 0, 5), eye(20, 30, 25)}), DataError);
}

TEST_CASE("refinement") {
  const auto scores = flat_scores();

  SUBCASE("centered gaze leaves the decision alone") {
    const auto out = refine_looking_away(scores, all_compliant(), face_with_deviation(0.0));
    CHECK_FALSE(out.flipped);
    CHECK(out.looking_away.verdict == Verdict::Compliant);
    CHECK(*out.deviation == 0.0);
  }
  SUBCASE("deviation above tau flips to non-compliant") {
    const auto out = refine_looking_away(scores, all_compliant(), face_with_deviation(0.3), 0.15);
    CHECK(out.flipped);
    CHECK(out.looking_away.verdict == Verdict::NonCompliant);
    CHECK(out.looking_away.reason == std::optional<std::string>("gaze_refinement"));
    CHECK(*out.deviation == doctest::Approx(0.3).epsilon(1e-12));
  }
  SUBCASE("an existing non-compliant decision is never changed") {
    auto d = all_compliant();
    d[RequirementId::LookingAway] = {Verdict::NonCompliant, std::string("model")};
    for (const auto& lm : {std::optional<FaceLandmarks>{}, std::optional{face_with_deviation(0.0)},
                           std::optional{face_with_deviation(0.4)}}) {
      const auto out = refine_looking_away(scores, d, lm);
      CHECK_FALSE(out.flipped);
      CHECK(out.looking_away == d[RequirementId::LookingAway]);
    }
  }
  SUBCASE("a non-frontal pose disables refinement") {
    auto d = all_compliant();
    d[RequirementId::RollPitchYaw] = {Verdict::NonCompliant, std::nullopt};
    const auto out = refine_looking_away(scores, d, face_with_deviation(0.4));
    CHECK_FALSE(out.flipped);
    CHECK_FALSE(out.note.empty());
  }
  SUBCASE("absent landmarks leave a note") {
    const auto out = refine_looking_away(scores, all_compliant(), std::nullopt);
    CHECK_FALSE(out.flipped);
    CHECK_FALSE(out.deviation);
    CHECK_FALSE(out.note.empty());
  }
  SUBCASE("tau must be positive") {
    CHECK_THROWS_AS(refine_looking_away(scores, all_compliant(), std::nullopt, 0.0), ConfigError);
  }
}

TEST_CASE("landmark sidecar") {
  const auto det = SidecarLandmarkDetector::parse(
      R"({"image_id":"a","left":{"iris":[7,0],"inner":[0,0],"outer":[10,0]},"right":{"iris":[25,0],"inner":[20,0],"outer":[30,0]}}
{"image_id":"b","left":null}
)");
  CHECK(det.size() == 2);
  const auto a = det.detect("a");
  REQUIRE(a);
  CHECK(gaze_deviation(*a) == doctest::Approx(0.1).epsilon(1e-12));
  const auto b = det.detect("b");
  REQUIRE(b);
  CHECK_FALSE(b->left);
  CHECK_FALSE(det.detect("c"));

  CHECK_THROWS_AS(SidecarLandmarkDetector::parse("{\"image_id\":\"a\"}\nnot json\n"), ParseError);
  CHECK_THROWS_AS(SidecarLandmarkDetector::parse(R"({"image_id":"a","left":{"iris":[1]}})"), ParseError);
  CHECK_THROWS_AS(SidecarLandmarkDetector::parse("{\"image_id\":\"a\"}\n{\"image_id\":\"a\"}\n"), DataError);
}
