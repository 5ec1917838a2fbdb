// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is non-zero when any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "icao/dataset.hpp"
#include "icao/degradation.hpp"
#include "icao/eval.hpp"
#include "icao/losses.hpp"
#include "icao/manifest.hpp"
#include "icao/model.hpp"
#include "icao/rng.hpp"
#include "icao/training.hpp"
#include "toy.hpp"

using namespace icao;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

long long round3(double v) { return std::llround(v * 1000.0); }

// ------------------------------------------------------------------------------------------
// 1

Outcome bias_index_exactness() {
  struct Row {
    const char* method;
    std::array<double, 10> d;
    double expected;
  };
  const std::array<Row, 7> rows{{
      {"ICAONet", {+0.023, -0.017, -0.002, -0.039, +0.013, -0.006, -0.017, 0.000, -0.028, +0.054}, 0.174},
      {"ICAONet*", {+0.001, +0.004, +0.004, -0.029, +0.018, -0.004, -0.024, -0.012, -0.007, +0.034}, 0.108},
      {"ICAONet*-Bal", {-0.003, -0.002, +0.012, -0.023, +0.025, -0.011, -0.011, -0.005, -0.020, +0.023}, 0.092},
      {"Biogaze", {-0.019, -0.028, -0.033, -0.005, +0.019, -0.007, -0.001, -0.025, -0.023, +0.004}, 0.090},
      {"OFIQ", {-0.019, +0.005, -0.003, -0.006, +0.013, -0.002, -0.009, -0.019, -0.034, +0.012}, 0.089},
      {"SegCls", {+0.002, +0.002, +0.005, -0.013, -0.002, +0.001, -0.012, -0.004, -0.010, +0.017}, 0.047},
      {"SegCls-Bal", {+0.001, -0.001, +0.003, -0.009, -0.004, -0.009, -0.007, -0.006, -0.009, +0.015}, 0.038},
  }};
  Outcome o{true, ""};
  for (const auto& r : rows) {
    std::map<Category, std::vector<double>> groups{
        {Category::Gender, {r.d[0], r.d[1]}},
        {Category::Origin, {r.d[2], r.d[3], r.d[4]}},
        {Category::Age, {r.d[5], r.d[6], r.d[7], r.d[8], r.d[9]}},
    };
    const double bi = bias_index(groups);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s=%.3f ", r.method, bi);
    o.detail += buf;
    if (round3(bi) != round3(r.expected)) o.pass = false;
  }
  return o;
}

// ------------------------------------------------------------------------------------------
// 2

// Direct-count sweep: FAR/FRR at every candidate threshold, then the minimum over each segment
// of max(FAR, FRR) with both curves linear in between.
double brute_force_eer(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<double> t(pos);
  t.insert(t.end(), neg.begin(), neg.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  t.push_back(std::nextafter(t.back(), INFINITY));
  std::vector<double> far(t.size()), frr(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    std::size_t fa = 0, fr = 0;
    for (double s : neg) fa += s >= t[k];
    for (double s : pos) fr += s < t[k];
    far[k] = static_cast<double>(fa) / neg.size();
    frr[k] = static_cast<double>(fr) / pos.size();
  }
  double best = std::max(far[0], frr[0]);
  for (std::size_t k = 1; k < t.size(); ++k) {
    best = std::min(best, std::max(far[k], frr[k]));
    const double d0 = far[k - 1] - frr[k - 1], d1 = far[k] - frr[k];
    if (d0 > 0 && d1 < 0) {
      const double s = d0 / (d0 - d1);
      best = std::min(best, far[k - 1] + s * (far[k] - far[k - 1]));
    }
  }
  return best;
}

Outcome eer_oracle_equivalence() {
  Rng rng(20240611);
  double worst = 0.0;
  int failures = 0;
  for (int f = 0; f < 500; ++f) {
    const int n = static_cast<int>(std::lround(std::exp(rng.uniform(std::log(10.0), std::log(10000.0)))));
    const int grid = rng.uniform() < 0.5 ? 0 : 2 + static_cast<int>(rng.below(40));
    const double sep = rng.uniform(0.0, 2.0);
    std::vector<double> pos, neg;
    for (int i = 0; i < n; ++i) {
      const bool is_pos = (i == 0) ? true : (i == 1) ? false : rng.uniform() < 0.5;
      double s = 1.0 / (1.0 + std::exp(-(rng.normal() + (is_pos ? sep : 0.0))));
      if (grid) s = std::round(s * grid) / grid;
      (is_pos ? pos : neg).push_back(s);
    }
    const double got = eer(pos, neg).eer;
    const double want = brute_force_eer(pos, neg);
    const double err = std::abs(got - want);
    worst = std::max(worst, err);
    if (!(err <= 1e-9)) ++failures;
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "500 fixtures, max |diff| = %.3g, failures = %d", worst, failures);
  return {failures == 0, buf};
}

// ------------------------------------------------------------------------------------------
// 3

bool close_rel(double a, double b, double rel) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-6});
}

Outcome loss_correctness() {
  Outcome o{true, ""};
  // Hand-evaluated values.
  {
    Tensor3 x(1, 1, 1, 0.5), y(1, 1, 1, 1.0);
    const double lam[] = {1.0};
    const double v = seg_loss(x, y, lam);
    if (std::abs(v - std::log(2.0)) > 1e-9) o.pass = false, o.detail += "seg ln2 mismatch; ";
    const double p[] = {0.5}, t[] = {1.0}, l2[] = {2.0}, b[] = {1.0};
    const std::uint8_t g[] = {1};
    const double c = cls_loss(p, t, g, l2, b);
    if (std::abs(c - 2.0 * std::log(2.0)) > 1e-9) o.pass = false, o.detail += "cls 2ln2 mismatch; ";
  }

  Rng rng(77);
  // Loss gradients against central differences.
  {
    Tensor3 logits(8, 3, 3), targets(8, 3, 3), grad;
    for (auto& v : logits.data) v = rng.normal();
    for (auto& v : targets.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    std::array<double, 8> lam{};
    for (auto& v : lam) v = rng.uniform(0.5, 3.0);
    seg_loss_from_logits(logits, targets, lam, &grad);
    for (std::size_t i = 0; i < logits.size(); i += 7) {
      Tensor3 a = logits, b = logits;
      a.data[i] += 1e-5;
      b.data[i] -= 1e-5;
      const double fd = (seg_loss_from_logits(a, targets, lam) - seg_loss_from_logits(b, targets, lam)) / 2e-5;
      if (!close_rel(grad.data[i], fd, 1e-4)) o.pass = false, o.detail += "seg gradient; ";
    }
  }
  std::array<double, kRequirementCount> logits{}, targets{}, lambda{}, beta{}, grad{};
  std::array<std::uint8_t, kRequirementCount> gates{};
  for (int r = 0; r < kRequirementCount; ++r) {
    logits[r] = rng.normal();
    targets[r] = rng.uniform() < 0.5;
    lambda[r] = rng.uniform(0.5, 10.0);
    beta[r] = rng.uniform(0.5, 1.5);
    gates[r] = r % 5 != 0;
  }
  cls_loss_from_logits(logits, targets, gates, lambda, beta, grad);
  int gated_nonzero = 0;
  for (int r = 0; r < kRequirementCount; ++r) {
    auto a = logits, b = logits;
    a[r] += 1e-5;
    b[r] -= 1e-5;
    const double fd = (cls_loss_from_logits(a, targets, gates, lambda, beta) -
                       cls_loss_from_logits(b, targets, gates, lambda, beta)) / 2e-5;
    if (!close_rel(grad[r], fd, 1e-4) && std::abs(grad[r] - fd) > 1e-10) o.pass = false, o.detail += "cls gradient; ";
    if (!gates[r] && grad[r] != 0.0) ++gated_nonzero;
  }

  // Whole-model gradient on a one-layer stub encoder.
  ModelConfig mc;
  mc.encoder_channels = {4};
  mc.input_height = mc.input_width = 16;
  mc.aspp_channels = 4;
  mc.dilation_rates = {2};
  mc.mask_gradient = true;
  SegClsModel model(mc, 5);
  // Zero biases over zero activations sit exactly on ReLU corners; check at a generic point.
  for (double& v : model.parameters()) v += 0.05 * rng.normal();
  Tensor3 image(3, 16, 16), masks(8, 16, 16);
  for (auto& v : image.data) v = rng.uniform();
  for (auto& v : masks.data) v = rng.uniform() < 0.3;
  GateVector gv;
  gv.gates = gates;
  WeightSet w = WeightSet::uniform();
  w.lambda_r = lambda;
  std::vector<double> g(model.parameters().size(), 0.0);
  sample_loss(model, image, masks, targets, gv, w, 0.5, g);
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    const std::size_t i = rng.below(g.size());
    const double keep = model.parameters()[i];
    const double h = 1e-6;
    model.parameters()[i] = keep + h;
    const double up = sample_loss(model, image, masks, targets, gv, w, 0.5).total;
    model.parameters()[i] = keep - h;
    const double down = sample_loss(model, image, masks, targets, gv, w, 0.5).total;
    model.parameters()[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double rel = std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), 1e-8});
    worst = std::max(worst, rel);
  }
  if (worst > 1e-4) o.pass = false;

  // Gated requirements: their classifier rows receive exactly zero gradient.
  std::fill(g.begin(), g.end(), 0.0);
  sample_loss(model, image, masks, targets, gv, w, 0.0, g);
  const auto& fc = model.entry("fc.weight");
  const std::size_t d = fc.shape[1];
  for (int r = 0; r < kRequirementCount; ++r) {
    if (gates[r]) continue;
    for (std::size_t j = 0; j < d; ++j) gated_nonzero += g[fc.offset + r * d + j] != 0.0;
    gated_nonzero += g[model.entry("fc.bias").offset + r] != 0.0;
  }
  if (gated_nonzero) o.pass = false;

  char buf[128];
  std::snprintf(buf, sizeof buf, "model FD worst rel = %.2e, gated non-zero grads = %d", worst, gated_nonzero);
  o.detail += buf;
  return o;
}

// ------------------------------------------------------------------------------------------
// 4

Outcome architecture_contracts() {
  Outcome o{true, ""};
  ModelConfig mc;
  SegClsModel model(mc, 11);
  Rng rng(3);
  for (int side : {256, 320}) {
    Tensor3 img(3, side, side);
    for (auto& v : img.data) v = rng.uniform();
    const auto out = model.forward(img);
    const auto [h, w] = model.feature_size(side, side);
    const bool shape_ok = out.seg_logits.channels == 8 && out.seg_logits.height == side &&
                          out.seg_logits.width == side && out.cls_logits.size() == 26 &&
                          h == (side + 3) / 4 && w == (side + 3) / 4;
    if (!shape_ok) o.pass = false, o.detail += "shape@" + std::to_string(side) + "; ";
  }

  Tensor3 img(3, 64, 64);
  for (auto& v : img.data) v = rng.uniform();
  const std::size_t c = model.feature_channels();
  const auto open = model.forward(img, {nullptr, {}, SeMode::Open});
  for (int m = 0; m < kRegionCount; ++m) {
    const auto z = model.forward(img, {nullptr, {static_cast<Region>(m)}, SeMode::Open});
    for (int s = 0; s < kRegionCount; ++s) {
      for (std::size_t k = 0; k < c; ++k) {
        const double v = z.attended[s * c + k];
        if (s == m ? v != 0.0 : v != open.attended[s * c + k]) {
          o.pass = false;
        }
      }
    }
  }
  if (!o.pass) o.detail += "causality; ";

  std::size_t violations = 0;
  for (int n = 0; n < 1000; ++n) {
    std::vector<double> z(8 * c);
    for (auto& v : z) v = rng.normal() * 3.0;
    const auto y = model.channel_attention(z);
    for (std::size_t i = 0; i < z.size(); ++i) violations += std::abs(y[i]) > std::abs(z[i]);
  }
  if (violations) o.pass = false, o.detail += "SE bound; ";

  const auto a = model.forward(img), b = model.forward(img);
  if (a.cls_logits != b.cls_logits || a.seg_logits != b.seg_logits) o.pass = false, o.detail += "determinism; ";
  if (o.pass) o.detail = "shapes 256/320, causality 8 masks, SE bound 1000 samples, determinism";
  return o;
}

// ------------------------------------------------------------------------------------------
// 5

Outcome toy_end_to_end() {
  const auto corpus = toy::make_toy_corpus(toy::scratch_dir("accept_toy"), 7);
  TrainConfig cfg;
  cfg.seed = 7;
  cfg.epochs = 200;
  cfg.batch_size = 4;
  cfg.lr.base = 0.01;
  const auto records = load_manifest(corpus.manifest);
  const auto result = train(records, corpus.dir, SidecarMaskSource(corpus.masks), cfg,
                            {nullptr, std::nullopt, corpus.dir / "run", {}});
  const double ratio = result.log.final_pass.total / result.log.initial.total;
  const auto report = evaluate_checkpoint(corpus.dir / "run" / "checkpoint.ckpt", records, corpus.dir);
  const double train_eer = report.mean_eer.value_or(1.0);

  const auto bal = toy::make_balanced_set(toy::scratch_dir("accept_balanced"), 40, 99);
  const auto bal_records = load_manifest(bal.manifest);
  SegClsModel fresh(cfg.model, 12345);
  save_checkpoint(bal.dir / "random.ckpt", fresh);
  const auto chance = evaluate_checkpoint(bal.dir / "random.ckpt", bal_records, bal.dir);
  const double chance_eer = chance.mean_eer.value_or(0.0);

  char buf[200];
  std::snprintf(buf, sizeof buf,
                "%zu records, loss %.4f -> %.4f (%.1f%%), train mean EER %.3f, random-checkpoint mean EER %.3f",
                records.size(), result.log.initial.total, result.log.final_pass.total, 100.0 * ratio, train_eer,
                chance_eer);
  const bool pass = records.size() == 20 && ratio < 0.10 && train_eer <= 0.05 && std::abs(chance_eer - 0.5) <= 0.15;
  return {pass, buf};
}

// ------------------------------------------------------------------------------------------
// 6

Outcome compliance_arithmetic() {
  std::vector<ImageRecord> records;
  records.reserve(37915 + 2522);
  const auto base = all_compliant_labels();
  for (int i = 0; i < 37915 + 2522; ++i) {
    ImageRecord r;
    r.image_id = "img" + std::to_string(i);
    r.subject_id = "s" + std::to_string(i / 4);
    r.source_path = r.image_id + ".ppm";
    r.labels = base;
    if (i >= 37915) r.labels[RequirementId::EyesClosed] = ComplianceLabel::non_compliant("both_closed");
    records.push_back(std::move(r));
  }
  const auto& parsed = records;

  const auto dist = compliance_distribution(parsed);
  const auto& d = dist[slot_of(RequirementId::EyesClosed)];
  MaskSummary masks;
  masks.positive.fill(1);
  masks.negative.fill(1);
  const auto w = derive_weights(parsed, masks, RuleSet::defaults(), DegeneratePolicy::Fallback);
  const double lambda = w.lambda_r[slot_of(RequirementId::EyesClosed)];
  char buf[128];
  std::snprintf(buf, sizeof buf, "C=%zu NC=%zu %%NC=%.2f lambda_1=%.4f", d.n_compliant, d.n_noncompliant,
                d.pct_noncompliant, lambda);
  char pct[16];
  std::snprintf(pct, sizeof pct, "%.2f", d.pct_noncompliant);
  return {std::string(pct) == "6.24" && std::abs(lambda - 15.03) <= 0.01, buf};
}

// ------------------------------------------------------------------------------------------
// 7

Outcome degradation_invariants() {
  int checks = 0, failures = 0;
  for (int i = 0; i < 50; ++i) {
    const auto p = toy::random_portrait(1000 + i);
    MaskSet masks;
    const Image img = toy::render(p, &masks);
    const std::uint64_t seed = 500 + i;

    {
      const int levels = 2 + i % 7;
      const auto out = apply_effect(img, {Effect::Posterization, {{"levels", double(levels)}}, seed});
      std::set<std::array<double, 3>> colors;
      std::array<std::set<double>, 3> per_channel;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          colors.insert({out.image.at(y, x, 0), out.image.at(y, x, 1), out.image.at(y, x, 2)});
          for (int ch = 0; ch < 3; ++ch) per_channel[ch].insert(out.image.at(y, x, ch));
        }
      ++checks;
      bool ok = colors.size() <= static_cast<std::size_t>(levels * levels * levels);
      for (const auto& s : per_channel) ok = ok && s.size() <= static_cast<std::size_t>(levels);
      failures += !ok;
    }
    {
      const int block = 8;
      const auto out = apply_effect(img, {Effect::Pixelation, {{"block_factor", double(block)}}, seed});
      bool ok = true;
      for (int by = 0; by < img.height; by += block)
        for (int bx = 0; bx < img.width; bx += block)
          for (int ch = 0; ch < 3; ++ch) {
            const double v0 = out.image.at(by, bx, ch);
            for (int y = by; y < std::min(by + block, img.height); ++y)
              for (int x = bx; x < std::min(bx + block, img.width); ++x) ok = ok && out.image.at(y, x, ch) == v0;
          }
      ++checks;
      failures += !ok;
    }
    for (double delta : {1.0 + 0.05 * i, -(1.0 + 0.05 * i)}) {
      const auto out = apply_effect(img, {Effect::ExposureShift, {{"exposure_delta", delta}}, seed});
      bool ok = true;
      for (std::size_t k = 0; k < img.data.size(); ++k) {
        ok = ok && (delta > 0 ? out.image.data[k] >= img.data[k] : out.image.data[k] <= img.data[k]);
      }
      ++checks;
      failures += !ok;
    }
    {
      const auto out = apply_effect(img, {Effect::RedEyes, {}, seed}, &masks);
      bool ok = out.image != img;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          if (masks.at(slot_of(Region::Eyes), y, x) == 0.0)
            for (int ch = 0; ch < 3; ++ch) ok = ok && out.image.at(y, x, ch) == img.at(y, x, ch);
      ++checks;
      failures += !ok;
    }
    {
      const char* patterns[] = {"noise", "gradient", "stripes", "checker"};
      const auto out =
          apply_effect(img, {Effect::BackgroundSubstitution, {{"pattern", std::string(patterns[i % 4])}}, seed}, &masks);
      bool ok = true;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          if (masks.at(slot_of(Region::Background), y, x) != 1.0)
            for (int ch = 0; ch < 3; ++ch) ok = ok && out.image.at(y, x, ch) == img.at(y, x, ch);
      ++checks;
      failures += !ok;
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "50 images, %d checks, %d failures", checks, failures);
  return {failures == 0, buf};
}

// ------------------------------------------------------------------------------------------
// 8

Outcome balanced_subset() {
  std::vector<ImageRecord> pool;
  Rng rng(8);
  int subject = 0;
  for (int cell = 0; cell < kDemographicCells; ++cell) {
    const auto dc = cell_at(cell);
    // Skew: some cells hold many more subjects than others.
    const int subjects = 6 + static_cast<int>((cell * 7) % 11) * 3 + (dc.gender == Gender::Male ? 20 : 0);
    for (int s = 0; s < subjects; ++s, ++subject) {
      const int images = 1 + static_cast<int>(rng.below(3));
      for (int k = 0; k < images; ++k) {
        ImageRecord r;
        r.subject_id = "subj" + std::to_string(subject);
        r.image_id = r.subject_id + "_" + std::to_string(k);
        r.source_path = r.image_id + ".ppm";
        r.demographics = {dc.gender, dc.age, dc.origin, std::nullopt};
        r.labels = all_compliant_labels();
        pool.push_back(std::move(r));
      }
    }
  }

  double worst = 0.0;
  bool deterministic = true, subset_ok = true;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto a = select_balanced_subset(pool, BalanceTargets{}, seed);
    const auto b = select_balanced_subset(pool, BalanceTargets{}, seed);
    deterministic = deterministic && a.subset == b.subset;

    std::map<std::string, DemographicProfile> subjects;
    std::set<std::string> pool_ids;
    for (const auto& r : pool) pool_ids.insert(r.image_id);
    for (const auto& r : a.subset) {
      subjects[r.subject_id] = r.demographics;
      subset_ok = subset_ok && pool_ids.count(r.image_id);
    }
    const double n = static_cast<double>(subjects.size());
    std::array<double, kGenderCount> g{};
    std::array<double, kOriginCount> o{};
    std::array<double, kAgeGroupCount> ag{};
    for (const auto& [id, p] : subjects) {
      ++g[static_cast<int>(p.gender)];
      ++o[static_cast<int>(p.origin)];
      ++ag[static_cast<int>(p.age_group)];
    }
    for (double v : g) worst = std::max(worst, std::abs(100.0 * v / n - 100.0 / kGenderCount));
    for (double v : o) worst = std::max(worst, std::abs(100.0 * v / n - 100.0 / kOriginCount));
    for (double v : ag) worst = std::max(worst, std::abs(100.0 * v / n - 100.0 / kAgeGroupCount));
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "pool %zu images, worst marginal deviation %.2f pp, deterministic=%s", pool.size(),
                worst, deterministic ? "yes" : "no");
  return {worst <= 3.0 && deterministic && subset_ok, buf};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "Bias Index exactness", 1.0, bias_index_exactness},
      {2, "EER oracle equivalence", 30.0, eer_oracle_equivalence},
      {3, "Loss correctness", 60.0, loss_correctness},
      {4, "Architecture contracts", 60.0, architecture_contracts},
      {5, "Toy end-to-end", 600.0, toy_end_to_end},
      {6, "Compliance-distribution arithmetic", 1.0, compliance_arithmetic},
      {7, "Degradation invariants", 120.0, degradation_invariants},
      {8, "Balanced-subset property", 10.0, balanced_subset},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("%s %d %s [%.2fs / %.0fs%s] %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs, c.budget_s,
                in_time ? "" : " over budget", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
