// SPDX-License-Identifier: Apache-2.0
#include "toy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "icao/manifest.hpp"
#include "icao/reason_registry.hpp"
#include "icao/rng.hpp"

namespace toy {

using namespace icao;
namespace fs = std::filesystem;

namespace {

struct Box {
  int y0, y1, x0, x1;  // half-open
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

constexpr Box kTorso{48, 64, 12, 52};
constexpr Box kFace{16, 44, 20, 44};
constexpr Box kHairTop{8, 16, 16, 48};
constexpr Box kHairLeft{16, 28, 16, 20};
constexpr Box kHairRight{16, 28, 44, 48};
constexpr Box kHat{0, 12, 16, 48};
constexpr Box kEyeLeft{24, 28, 24, 32};
constexpr Box kEyeRight{24, 28, 36, 44};
constexpr Box kMouth{36, 40, 28, 36};
constexpr Box kGlasses{20, 32, 20, 44};

std::array<double, 3> color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

}  // namespace

Image render(const Portrait& p, MaskSet* masks) {
  Image img(kSize, kSize);
  MaskSet m(kRegionCount, kSize, kSize);
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      std::array<double, 3> c = p.background;
      int region = slot_of(Region::Background);
      if (kTorso.contains(y, x)) c = p.torso, region = slot_of(Region::Torso);
      if (kHairTop.contains(y, x) || kHairLeft.contains(y, x) || kHairRight.contains(y, x)) {
        c = p.hair, region = slot_of(Region::Hair);
      }
      if (kFace.contains(y, x)) c = p.skin, region = slot_of(Region::FullFace);
      if (p.hat && kHat.contains(y, x)) c = p.hat_color, region = slot_of(Region::HeadCoverings);
      m.at(region, y, x) = 1.0;

      if (kEyeLeft.contains(y, x) || kEyeRight.contains(y, x)) {
        c = {0.95, 0.95, 0.95};
        m.at(slot_of(Region::Eyes), y, x) = 1.0;
      }
      if (kMouth.contains(y, x)) {
        c = {0.7, 0.25, 0.3};
        m.at(slot_of(Region::Mouth), y, x) = 1.0;
      }
      if (p.glasses && kGlasses.contains(y, x)) {
        for (double& v : c) v = 0.55 * v + 0.45 * 0.1;
        m.at(slot_of(Region::Eyeglasses), y, x) = 1.0;
      }
      const double tex = 0.08 * std::sin(1.3 * x + p.texture_phase) * std::cos(1.1 * y - p.texture_phase);
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = std::clamp(c[ch] + tex, 0.0, 1.0);
    }
  }
  if (masks) *masks = std::move(m);
  return img;
}

Portrait random_portrait(std::uint64_t seed) {
  Rng rng(seed, 0x70e7);
  Portrait p;
  p.hat = rng.uniform() < 0.5;
  p.glasses = rng.uniform() < 0.5;
  p.skin = {rng.uniform(0.45, 0.95), rng.uniform(0.3, 0.75), rng.uniform(0.2, 0.6)};
  p.hair = color(rng, 0.05, 0.45);
  p.background = color(rng, 0.6, 0.95);
  p.torso = color(rng, 0.1, 0.7);
  p.hat_color = color(rng, 0.1, 0.9);
  p.texture_phase = rng.uniform(0.0, 6.28);
  return p;
}

ImageRecord base_record(const std::string& id, const Portrait& p, int slot) {
  ImageRecord r;
  r.image_id = id;
  r.subject_id = "s_" + id;
  r.quality_tier = QualityTier::HQ;
  r.source_path = "images/" + id + ".ppm";
  r.demographics.gender = static_cast<Gender>(slot % kGenderCount);
  r.demographics.origin = static_cast<Origin>(slot % kOriginCount);
  r.demographics.age_group = static_cast<AgeGroup>(slot % kAgeGroupCount);
  r.labels = all_compliant_labels();
  if (p.hat) r.labels[RequirementId::HeadCoverings] = ComplianceLabel::non_compliant("hat");
  return r;
}

Corpus make_toy_corpus(const fs::path& dir, std::uint64_t seed) {
  Corpus c{dir, dir / "manifest.ndjson", dir / "masks", {}};
  fs::create_directories(dir / "images");

  const std::array<Portrait, 4> bases{
      Portrait{false, false, {0.85, 0.65, 0.5}, {0.25, 0.15, 0.1}, {0.8, 0.85, 0.9}, {0.2, 0.3, 0.6}, {0.6, 0.1, 0.1}, 0.0},
      Portrait{true, false, {0.55, 0.4, 0.3}, {0.1, 0.1, 0.1}, {0.9, 0.9, 0.8}, {0.5, 0.2, 0.2}, {0.2, 0.5, 0.2}, 1.0},
      Portrait{false, true, {0.95, 0.8, 0.7}, {0.6, 0.45, 0.2}, {0.7, 0.8, 0.75}, {0.3, 0.3, 0.3}, {0.6, 0.1, 0.1}, 2.0},
      Portrait{true, true, {0.7, 0.5, 0.35}, {0.3, 0.2, 0.15}, {0.85, 0.75, 0.85}, {0.1, 0.4, 0.3}, {0.3, 0.3, 0.7}, 3.0},
  };
  std::vector<ImageRecord> records;
  for (int i = 0; i < 4; ++i) {
    const std::string id = "base" + std::to_string(i);
    MaskSet masks;
    write_image(dir / "images" / (id + ".ppm"), render(bases[i], &masks));
    save_mask_sidecar(c.masks, id, masks);
    records.push_back(base_record(id, bases[i], i));
  }

  std::vector<PlanEntry> plan(4);
  plan[0].spec = {Effect::Pixelation, {{"block_factor", 8.0}}, 1};
  plan[1].spec = {Effect::Posterization, {{"levels", 3.0}}, 2};
  plan[2].spec = {Effect::WashedOut, {}, 3};
  plan[3].spec = {Effect::InkMarked, {{"strokes", 4.0}, {"width", 0.04}}, 4};
  CorpusOptions opts;
  opts.source_root = dir;
  opts.out_dir = dir;
  opts.masks_dir = &c.masks;
  c.records = generate_corpus(records, plan, opts, seed).records;
  write_manifest(c.manifest, c.records);
  return c;
}

Corpus make_balanced_set(const fs::path& dir, int n, std::uint64_t seed) {
  Corpus c{dir, dir / "manifest.ndjson", dir / "masks", {}};
  fs::create_directories(dir / "images");
  for (int i = 0; i < n; ++i) {
    const std::string id = "bal" + std::to_string(i);
    const Portrait p = random_portrait(mix_seed(seed, static_cast<std::uint64_t>(i)));
    MaskSet masks;
    write_image(dir / "images" / (id + ".ppm"), render(p, &masks));
    save_mask_sidecar(c.masks, id, masks);
    ImageRecord r = base_record(id, p, i);
    r.labels = all_compliant_labels();
    c.records.push_back(std::move(r));
  }
  std::vector<int> order(n);
  for (const auto& req : kRequirements) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, 0xba1 + static_cast<std::uint64_t>(index_of(req.id)));
    rng.shuffle(order.begin(), order.end());
    const std::string reason = *ReasonRegistry::builtin().reasons(req.id).begin();
    for (int k = 0; k < n / 2; ++k) c.records[order[k]].labels[req.id] = ComplianceLabel::non_compliant(reason);
  }
  write_manifest(c.manifest, c.records);
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("icao_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace toy
