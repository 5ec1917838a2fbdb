// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "icao/checkpoint.hpp"
#include "icao/errors.hpp"
#include "icao/model.hpp"
#include "icao/rng.hpp"
#include "toy.hpp"

using namespace icao;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.encoder_channels = {4, 8};
  c.aspp_channels = 8;
  c.dilation_rates = {2, 4};
  c.reduction_ratio = 4;
  return c;
}

Tensor3 random_input(int h, int w, std::uint64_t seed) {
  Tensor3 t(3, h, w);
  Rng rng(seed);
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

std::string slurp_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("mask-weighted pooling hand example") {
  Tensor3 f(1, 2, 2), m(1, 2, 2);
  f.data = {1, 2, 3, 4};
  m.data = {1, 0, 0, 1};
  CHECK(mssam(f, m)[0] == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(mssam(f, m, true)[0] == doctest::Approx(5.0 / (2.0 + 1e-6)).epsilon(1e-12));

  SUBCASE("all-zero mask gives zero") {
    Tensor3 z(1, 2, 2, 0.0);
    CHECK(mssam(f, z)[0] == 0.0);
    CHECK(mssam(f, z, true)[0] == 0.0);
  }
  SUBCASE("all-one mask is the plain average") {
    Tensor3 one(1, 2, 2, 1.0);
    CHECK(mssam(f, one)[0] == doctest::Approx(2.5).epsilon(1e-12));
  }
  SUBCASE("resolution mismatch") {
    Tensor3 wrong(1, 3, 2, 1.0);
    CHECK_THROWS_AS(mssam(f, wrong), ShapeError);
  }
}

TEST_CASE("input validation") {
  const SegClsModel model(small_config(), 1);
  CHECK_THROWS_AS(model.forward(Tensor3(1, 32, 32, 0.5)), ShapeError);
  CHECK_THROWS_AS(model.forward(Tensor3(3, 8, 32, 0.5)), ShapeError);
  auto bad = random_input(32, 32, 1);
  bad.data[10] = 1.5;
  CHECK_THROWS_AS(model.forward(bad), DataError);
  bad.data[10] = std::nan("");
  CHECK_THROWS_AS(model.forward(bad), DataError);
}

TEST_CASE("output shapes follow the input") {
  const SegClsModel model(small_config(), 2);
  for (auto [h, w] : {std::pair{32, 32}, std::pair{48, 40}, std::pair{17, 23}}) {
    const auto out = model.forward(random_input(h, w, 2));
    CHECK(out.seg_logits.channels == kRegionCount);
    CHECK(out.seg_logits.height == h);
    CHECK(out.seg_logits.width == w);
    CHECK(out.region_features.size() == kRegionCount);
    CHECK(out.attended.size() == static_cast<std::size_t>(kRegionCount * model.feature_channels()));
    const auto [fh, fw] = model.feature_size(h, w);
    CHECK(fh == (h + 3) / 4);
    CHECK(fw == (w + 3) / 4);
  }
}

TEST_CASE("numeric health over many seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SegClsModel model(small_config(), seed);
    const auto out = model.forward(random_input(32, 32, seed + 1000));
    for (double v : out.seg_logits.data) REQUIRE(std::isfinite(v));
    for (double s : out.cls_scores()) REQUIRE((s >= 0.0 && s <= 1.0));
    for (double g : out.gates) REQUIRE((g > 0.0 && g < 1.0));
  }
}

TEST_CASE("channel attention") {
  SegClsModel model(small_config(), 3);
  const std::size_t n = kRegionCount * static_cast<std::size_t>(model.feature_channels());
  std::vector<double> z(n);
  Rng rng(3);
  for (auto& v : z) v = rng.normal();

  SUBCASE("output is bounded by the input magnitude") {
    const auto y = model.channel_attention(z);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y[i]) <= std::abs(z[i]));
  }
  SUBCASE("zero input gives zero output") {
    const std::vector<double> zero(n, 0.0);
    for (double v : model.channel_attention(zero)) CHECK(v == 0.0);
  }
  SUBCASE("saturated gates pass the input through") {
    model.saturate_se_gates();
    std::vector<double> gates;
    const auto y = model.channel_attention(z, &gates);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(y[i] == doctest::Approx(z[i]).epsilon(1e-3));
      CHECK(gates[i] == doctest::Approx(1.0 / (1.0 + std::exp(-20.0))).epsilon(1e-12));
    }
  }
}

TEST_CASE("zeroing a mask removes its region features") {
  const SegClsModel model(small_config(), 4);
  ForwardOptions opts;
  opts.zero_masks = {Region::Eyes};
  const auto out = model.forward(random_input(32, 32, 4), opts);
  for (double v : out.region_features[slot_of(Region::Eyes)]) CHECK(v == 0.0);
}

TEST_CASE("classifier parameters sit after the segmentation branch") {
  const SegClsModel model(small_config(), 5);
  bool seen_cls = false;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    if (model.is_classifier_param(i)) seen_cls = true;
    else REQUIRE_FALSE(seen_cls);
  }
  CHECK(seen_cls);
  std::size_t expected = 0;
  for (const auto& e : model.layout()) {
    CHECK(e.offset == expected);
    expected += e.size;
  }
  CHECK(expected == model.parameters().size());
}

TEST_CASE("forward is deterministic and seeds differ") {
  const auto x = random_input(32, 32, 6);
  const SegClsModel a(small_config(), 6), b(small_config(), 6), c(small_config(), 7);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters() != c.parameters());
  CHECK(a.forward(x).cls_logits == b.forward(x).cls_logits);
}

TEST_CASE("external encoders are frozen adapters") {
  auto enc = std::make_shared<ExternalEncoder>("avg", 3, 4, [](const Tensor3& x) {
    Tensor3 out(3, (x.height + 3) / 4, (x.width + 3) / 4);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < x.height; ++y)
        for (int xx = 0; xx < x.width; ++xx) out.at(c, y / 4, xx / 4) += x.at(c, y, xx) / 16.0;
    return out;
  });
  auto cfg = small_config();
  cfg.encoder = "external:avg";
  const SegClsModel model(cfg, enc, 8);
  CHECK(model.feature_channels() == 3);
  const auto out = model.forward(random_input(32, 32, 8));
  CHECK(out.seg_logits.height == 32);
  CHECK_THROWS_AS(make_encoder(cfg), ConfigError);
}

TEST_CASE("model config JSON") {
  const auto c = small_config();
  CHECK(ModelConfig::from_json(c.to_json()) == c);
  CHECK(ModelConfig::from_json("{}") == ModelConfig{});
  CHECK_THROWS_AS(ModelConfig::from_json(R"({"encoder_chanels":[4]})"), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json(R"({"dilation_rates":[]})"), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_json(R"({"input_size":[4,4]})"), ConfigError);
}

TEST_CASE("decisions") {
  std::array<double, kRequirementCount> s{};
  ThresholdVector t{};
  for (int r = 0; r < kRequirementCount; ++r) {
    s[r] = r % 3 == 0 ? 0.4 : (r % 3 == 1 ? 0.5 : 0.6);
    t[r] = 0.5;
  }
  const auto d = decide(ScoreVector{s}, t);
  for (const auto& req : kRequirements) {
    const int k = static_cast<int>(slot_of(req.id));
    CHECK((d.at(req.id).verdict == Verdict::NonCompliant) == (s[k] >= 0.5));
  }

  t[0] = 0.0;
  CHECK_THROWS_AS(validate_thresholds(t), ConfigError);
  t[0] = 1.0;
  CHECK_THROWS_AS(validate_thresholds(t), ConfigError);

  SegClsModel model(small_config(), 9);
  const auto x = random_input(32, 32, 9);
  CHECK_THROWS_AS(predict_compliance(model, x), ConfigError);
  t[0] = 0.5;
  CHECK(predict_compliance(model, x, &t).decisions.size() == kRequirementCount);
  model.set_thresholds(t);
  CHECK_NOTHROW(predict_compliance(model, x));
}

TEST_CASE("checkpoints") {
  const auto dir = toy::scratch_dir("model_ckpt");
  SegClsModel model(small_config(), 10);
  ThresholdVector t{};
  t.fill(0.3);
  model.set_thresholds(t);
  TrainingState state;
  state.epoch = 3;
  state.adam_step = 12;
  state.adam_m.assign(model.parameters().size(), 0.25);
  state.adam_v.assign(model.parameters().size(), 0.125);
  state.metadata_json = R"({"seed":1})";
  save_checkpoint(dir / "a.ckpt", model, &state);

  SUBCASE("bit-identical round trip") {
    const auto loaded = load_checkpoint(dir / "a.ckpt");
    CHECK(loaded.model.parameters() == model.parameters());
    CHECK(loaded.model.config() == model.config());
    CHECK(loaded.model.thresholds() == model.thresholds());
    REQUIRE(loaded.training);
    CHECK(loaded.training->epoch == 3);
    CHECK(loaded.training->adam_step == 12);
    CHECK(loaded.training->adam_m == state.adam_m);
    CHECK(loaded.training->adam_v == state.adam_v);
    save_checkpoint(dir / "b.ckpt", loaded.model, &*loaded.training);
    CHECK(slurp_bytes(dir / "a.ckpt") == slurp_bytes(dir / "b.ckpt"));
    const auto x = random_input(32, 32, 10);
    CHECK(loaded.model.forward(x).cls_logits == model.forward(x).cls_logits);
  }
  SUBCASE("bad magic") {
    auto bytes = slurp_bytes(dir / "a.ckpt");
    bytes[0] = 'X';
    spit_bytes(dir / "bad.ckpt", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), DataError);
  }
  SUBCASE("schema version mismatch") {
    auto bytes = slurp_bytes(dir / "a.ckpt");
    const auto pos = bytes.find("\"schema_version\":1");
    REQUIRE(pos != std::string::npos);
    bytes[pos + 17] = '9';
    spit_bytes(dir / "bad.ckpt", bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.ckpt"), doctest::Contains("schema"), DataError);
  }
  SUBCASE("truncated data") {
    auto bytes = slurp_bytes(dir / "a.ckpt");
    bytes.resize(bytes.size() - 8);
    spit_bytes(dir / "bad.ckpt", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), DataError);
  }
  SUBCASE("header is readable on its own") {
    CHECK(read_checkpoint_header(dir / "a.ckpt").find("\"tensors\"") != std::string::npos);
  }
}
