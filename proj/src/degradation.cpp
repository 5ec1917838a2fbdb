// SPDX-License-Identifier: Apache-2.0
#include "icao/degradation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "icao/errors.hpp"
#include "icao/manifest.hpp"
#include "icao/rng.hpp"

namespace icao {

namespace {

constexpr std::array<std::string_view, 9> kEffectNames{
    "unnatural_skin_tone", "red_eyes",    "pixelation",    "washed_out",
    "ink_marked",          "posterization", "exposure_shift", "gaussian_blur",
    "background_substitution"};

ParamSchema num(const char* name, double lo, double hi, double def, bool lo_ex = false, bool hi_ex = false) {
  return {name, false, false, lo, hi, lo_ex, hi_ex, def};
}
ParamSchema integer(const char* name, double lo, double hi, double def) {
  return {name, false, true, lo, hi, false, false, def};
}
ParamSchema token(const char* name, const char* def) { return {name, true, false, 0, 0, false, false, std::string(def)}; }

double param(const EffectSpec& spec, const std::string& name) {
  if (auto it = spec.params.find(name); it != spec.params.end()) return std::get<double>(it->second);
  for (const auto& s : effect_schema(spec.effect)) {
    if (s.name == name) return std::get<double>(s.default_value);
  }
  throw std::logic_error("no parameter " + name);
}

std::string token_param(const EffectSpec& spec, const std::string& name) {
  if (auto it = spec.params.find(name); it != spec.params.end()) return std::get<std::string>(it->second);
  for (const auto& s : effect_schema(spec.effect)) {
    if (s.name == name) return std::get<std::string>(s.default_value);
  }
  return {};
}

double srgb_to_linear(double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); }
double linear_to_srgb(double v) { return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055; }

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0;
  if (d <= 0) {
    h = 0;
  } else if (mx == r) {
    h = 60.0 * std::fmod((g - b) / d + 6.0, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / d + 2.0);
  } else {
    h = 60.0 * ((r - g) / d + 4.0);
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double x = c * (1 - std::fabs(std::fmod(h / 60.0, 2.0) - 1));
  const double m = v - c;
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(h / 60.0) % 6) {
    case 0: r1 = c; g1 = x; break;
    case 1: r1 = x; g1 = c; break;
    case 2: g1 = c; b1 = x; break;
    case 3: g1 = x; b1 = c; break;
    case 4: r1 = x; b1 = c; break;
    default: r1 = c; b1 = x; break;
  }
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

const double* region_plane(const MaskSet* masks, Region region, const Image& image, bool required, Effect e) {
  if (!masks) {
    if (!required) return nullptr;
    throw DataError("missing mask: " + std::string(to_string(e)) + " requires the " +
                    std::string(region_name(region)) + " region");
  }
  if (masks->channels != kRegionCount || masks->height != image.height || masks->width != image.width) {
    throw ShapeError("mask set shape does not match the image");
  }
  return masks->channel(static_cast<int>(slot_of(region))).data();
}

Image gaussian_blur(const Image& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= sum;

  Image tmp(in.height, in.width), out(in.height, in.width);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in.at(y, std::clamp(x + i, 0, in.width - 1), c);
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(std::clamp(y + i, 0, in.height - 1), x, c);
        out.at(y, x, c) = acc;
      }
  return out;
}

Image pixelate(const Image& in, int block) {
  Image out(in.height, in.width);
  for (int by = 0; by < in.height; by += block) {
    for (int bx = 0; bx < in.width; bx += block) {
      const int ey = std::min(by + block, in.height);
      const int ex = std::min(bx + block, in.width);
      const double n = static_cast<double>((ey - by) * (ex - bx));
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) acc += in.at(y, x, c);
        const double mean = acc / n;
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) out.at(y, x, c) = mean;
      }
    }
  }
  return out;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = ax + t * dx - px, qy = ay + t * dy - py;
  return std::sqrt(qx * qx + qy * qy);
}

// Seeded pen strokes (quadratic Bezier curves in ink colours) and paper creases (light ridge with
// a darker flank) composited over the image.
Image ink_mark(const Image& in, const EffectSpec& spec) {
  Rng rng(spec.seed, 0x1a4);
  const int strokes = static_cast<int>(param(spec, "strokes"));
  const int creases = static_cast<int>(param(spec, "creases"));
  const double scale = std::min(in.height, in.width);
  const double half_width = std::max(0.5, 0.5 * param(spec, "width") * scale);
  const double opacity = param(spec, "opacity");
  Image out = in;

  for (int s = 0; s < strokes; ++s) {
    std::array<double, 6> p{};
    for (int i = 0; i < 3; ++i) {
      p[2 * i] = rng.uniform(0.0, in.width);
      p[2 * i + 1] = rng.uniform(0.0, in.height);
    }
    const std::array<std::array<double, 3>, 3> inks{{{0.05, 0.08, 0.45}, {0.05, 0.05, 0.05}, {0.55, 0.05, 0.08}}};
    const auto& ink = inks[rng.below(inks.size())];
    constexpr int kSegments = 24;
    std::vector<std::array<double, 2>> pts;
    for (int i = 0; i <= kSegments; ++i) {
      const double t = static_cast<double>(i) / kSegments;
      const double a = (1 - t) * (1 - t), b = 2 * (1 - t) * t, c = t * t;
      pts.push_back({a * p[0] + b * p[2] + c * p[4], a * p[1] + b * p[3] + c * p[5]});
    }
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        double d = 1e30;
        for (std::size_t i = 1; i < pts.size(); ++i) {
          d = std::min(d, segment_distance(x + 0.5, y + 0.5, pts[i - 1][0], pts[i - 1][1], pts[i][0], pts[i][1]));
        }
        const double cov = std::clamp(half_width + 0.5 - d, 0.0, 1.0) * opacity;
        if (cov <= 0.0) continue;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = out.at(y, x, c) * (1 - cov) + ink[c] * cov;
      }
    }
  }

  for (int k = 0; k < creases; ++k) {
    const double ax = rng.uniform(0.0, in.width), ay = 0.0;
    const double bx = rng.uniform(0.0, in.width), by = static_cast<double>(in.height);
    const bool horizontal = rng.below(2) == 1;
    for (int y = 0; y < in.height; ++y) {
      for (int x = 0; x < in.width; ++x) {
        const double px = horizontal ? y + 0.5 : x + 0.5;
        const double py = horizontal ? x + 0.5 : y + 0.5;
        const double sx0 = horizontal ? ax * in.height / in.width : ax;
        const double sx1 = horizontal ? bx * in.height / in.width : bx;
        const double ey = horizontal ? static_cast<double>(in.width) : by;
        const double d = segment_distance(px, py, sx0, ay, sx1, ey);
        const double ridge = std::exp(-d * d / (2.0 * 0.6 * 0.6));
        const double flank = std::exp(-(d - 1.5) * (d - 1.5) / (2.0 * 0.8 * 0.8));
        for (int c = 0; c < 3; ++c) {
          double v = out.at(y, x, c);
          v = v + 0.45 * ridge * (1.0 - v);
          v = v * (1.0 - 0.25 * flank);
          out.at(y, x, c) = v;
        }
      }
    }
  }
  return out;
}

Image background_pattern(int h, int w, const std::string& pattern, std::uint64_t seed) {
  Rng rng(seed, 0xb6);
  Image bg(h, w);
  std::array<double, 3> c0{rng.uniform(), rng.uniform(), rng.uniform()};
  std::array<double, 3> c1{rng.uniform(), rng.uniform(), rng.uniform()};
  const int period = 2 + static_cast<int>(rng.below(std::max(2, std::min(h, w) / 4)));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double t = 0.0;
      if (pattern == "gradient") {
        t = (static_cast<double>(x) / std::max(1, w - 1) + static_cast<double>(y) / std::max(1, h - 1)) / 2.0;
      } else if (pattern == "stripes") {
        t = ((x / period) % 2) ? 1.0 : 0.0;
      } else if (pattern == "checker") {
        t = (((x / period) + (y / period)) % 2) ? 1.0 : 0.0;
      } else {
        t = rng.uniform();
      }
      for (int c = 0; c < 3; ++c) bg.at(y, x, c) = c0[c] * (1 - t) + c1[c] * t;
    }
  }
  return bg;
}

void clamp_unit(Image& img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string_view to_string(Effect e) noexcept { return kEffectNames[static_cast<int>(e)]; }

std::optional<Effect> parse_effect(std::string_view s) noexcept {
  for (std::size_t i = 0; i < kEffectNames.size(); ++i) {
    if (kEffectNames[i] == s) return static_cast<Effect>(i);
  }
  return std::nullopt;
}

RequirementId target_of(Effect e) noexcept {
  switch (e) {
    case Effect::UnnaturalSkinTone: return RequirementId::UnnaturalSkinTone;
    case Effect::RedEyes: return RequirementId::RedEyes;
    case Effect::Pixelation: return RequirementId::Pixelation;
    case Effect::WashedOut: return RequirementId::WashedOut;
    case Effect::InkMarked: return RequirementId::InkMarkedCreased;
    case Effect::Posterization: return RequirementId::Posterization;
    case Effect::ExposureShift: return RequirementId::TooDarkLight;
    case Effect::GaussianBlur: return RequirementId::Blurred;
    case Effect::BackgroundSubstitution: return RequirementId::VariedBackground;
  }
  return RequirementId::Posterization;
}

const std::vector<ParamSchema>& effect_schema(Effect e) {
  static const std::array<std::vector<ParamSchema>, 9> schemas{{
      {num("hue_degrees", 15, 345, 120), num("saturation_gain", 0, 3, 1.3, true)},
      {num("strength", 0, 1, 0.8, true)},
      {integer("block_factor", 2, 64, 8)},
      {num("contrast", 0, 1, 0.35, true, true), num("mid", 0, 1, 0.6)},
      {integer("strokes", 1, 32, 3), integer("creases", 0, 16, 1), num("width", 0, 0.2, 0.015, true),
       num("opacity", 0, 1, 0.85, true)},
      {integer("levels", 2, 64, 4)},
      {num("exposure_delta", -8, 8, 1.5)},
      {num("sigma", 0, 32, 2.0)},
      {token("pattern", "noise"), token("bg_image", "")},
  }};
  return schemas[static_cast<int>(e)];
}

void validate_effect(const EffectSpec& spec) {
  const auto& schema = effect_schema(spec.effect);
  const std::string effect(to_string(spec.effect));
  for (const auto& [name, value] : spec.params) {
    auto it = std::find_if(schema.begin(), schema.end(), [&](const ParamSchema& s) { return s.name == name; });
    if (it == schema.end()) throw ConfigError(effect + ": unknown parameter '" + name + "'");
    if (it->is_token) {
      if (!std::holds_alternative<std::string>(value)) throw ConfigError(effect + ": '" + name + "' must be a token");
      continue;
    }
    if (!std::holds_alternative<double>(value)) throw ConfigError(effect + ": '" + name + "' must be a number");
    const double v = std::get<double>(value);
    const bool lo_ok = it->min_exclusive ? v > it->min : v >= it->min;
    const bool hi_ok = it->max_exclusive ? v < it->max : v <= it->max;
    if (!std::isfinite(v) || !lo_ok || !hi_ok) {
      std::ostringstream os;
      os << effect << ": parameter '" << name << "' = " << v << " is out of range " << (it->min_exclusive ? "(" : "[")
         << it->min << ", " << it->max << (it->max_exclusive ? ")" : "]");
      throw ConfigError(os.str());
    }
    if (it->integer && std::floor(v) != v) throw ConfigError(effect + ": '" + name + "' must be an integer");
  }
  if (spec.effect == Effect::BackgroundSubstitution) {
    const std::string pattern = token_param(spec, "pattern");
    if (pattern != "noise" && pattern != "gradient" && pattern != "stripes" && pattern != "checker") {
      throw ConfigError(effect + ": unknown pattern '" + pattern + "'");
    }
  }
}

EffectResult apply_effect(const Image& image, const EffectSpec& spec, const MaskSet* masks,
                          const EffectThresholds& thresholds) {
  if (image.height <= 0 || image.width <= 0 || image.data.size() != static_cast<std::size_t>(image.height) * image.width * 3) {
    throw ShapeError("apply_effect: malformed image");
  }
  validate_effect(spec);

  EffectResult result;
  bool flips = true;
  const std::size_t n = static_cast<std::size_t>(image.height) * image.width;

  switch (spec.effect) {
    case Effect::UnnaturalSkinTone: {
      const double* face = region_plane(masks, Region::FullFace, image, false, spec.effect);
      const double hue = param(spec, "hue_degrees");
      const double gain = param(spec, "saturation_gain");
      result.image = image;
      for (std::size_t i = 0; i < n; ++i) {
        const double m = face ? face[i] : 1.0;
        if (m <= 0.0) continue;
        double h, s, v, r, g, b;
        rgb_to_hsv(image.data[3 * i], image.data[3 * i + 1], image.data[3 * i + 2], h, s, v);
        hsv_to_rgb(h + hue, std::min(1.0, s * gain), v, r, g, b);
        const double shifted[3] = {r, g, b};
        for (int c = 0; c < 3; ++c) result.image.data[3 * i + c] += m * (shifted[c] - image.data[3 * i + c]);
      }
      break;
    }
    case Effect::RedEyes: {
      const double* eyes = region_plane(masks, Region::Eyes, image, true, spec.effect);
      const double strength = param(spec, "strength");
      result.image = image;
      for (std::size_t i = 0; i < n; ++i) {
        const double m = eyes[i];
        if (m <= 0.0) continue;
        const double r = image.data[3 * i], g = image.data[3 * i + 1], b = image.data[3 * i + 2];
        const double lum = 0.299 * r + 0.587 * g + 0.114 * b;
        const double target[3] = {0.55 + 0.45 * std::sqrt(lum), 0.25 * g, 0.25 * b};
        for (int c = 0; c < 3; ++c) {
          result.image.data[3 * i + c] += strength * m * (target[c] - image.data[3 * i + c]);
        }
      }
      break;
    }
    case Effect::Pixelation:
      result.image = pixelate(image, static_cast<int>(param(spec, "block_factor")));
      break;
    case Effect::WashedOut: {
      const double k = param(spec, "contrast");
      const double mid = param(spec, "mid");
      result.image = image;
      for (double& v : result.image.data) v = mid + k * (v - mid);
      break;
    }
    case Effect::InkMarked:
      result.image = ink_mark(image, spec);
      break;
    case Effect::Posterization: {
      const double steps = param(spec, "levels") - 1.0;
      result.image = image;
      for (double& v : result.image.data) v = std::round(std::clamp(v, 0.0, 1.0) * steps) / steps;
      break;
    }
    case Effect::ExposureShift: {
      const double delta = param(spec, "exposure_delta");
      const double gain = std::exp2(delta);
      result.image = image;
      for (double& v : result.image.data) {
        const double in = v;
        const double shifted = linear_to_srgb(std::min(1.0, srgb_to_linear(std::clamp(in, 0.0, 1.0)) * gain));
        // Guard against transfer-function round-off: the exact map is monotone in delta.
        v = delta > 0 ? std::max(in, shifted) : delta < 0 ? std::min(in, shifted) : in;
      }
      flips = std::fabs(delta) >= thresholds.exposure_stops;
      break;
    }
    case Effect::GaussianBlur: {
      const double sigma = param(spec, "sigma");
      result.image = gaussian_blur(image, sigma);
      flips = sigma >= thresholds.blur_sigma && sigma > 0.0;
      break;
    }
    case Effect::BackgroundSubstitution: {
      const double* bgmask = region_plane(masks, Region::Background, image, true, spec.effect);
      const std::string path = token_param(spec, "bg_image");
      Image bg = path.empty() ? background_pattern(image.height, image.width, token_param(spec, "pattern"), spec.seed)
                              : resize(read_image(path), image.height, image.width);
      result.image = image;
      for (std::size_t i = 0; i < n; ++i) {
        if (bgmask[i] < 0.5) continue;
        for (int c = 0; c < 3; ++c) result.image.data[3 * i + c] = bg.data[3 * i + c];
      }
      break;
    }
  }
  clamp_unit(result.image);

  if (flips) {
    result.labels_delta.emplace(target_of(spec.effect),
                                ComplianceLabel::non_compliant("generated:" + std::string(to_string(spec.effect))));
  }
  return result;
}

std::vector<PlanEntry> parse_plan(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
  if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array()) {
    throw ConfigError("plan: expected {\"entries\": [...]}");
  }
  std::vector<PlanEntry> plan;
  for (const auto& e : j["entries"]) {
    if (!e.is_object()) throw ConfigError("plan: each entry must be an object");
    for (const auto& [k, v] : e.items()) {
      if (k != "filter" && k != "effect" && k != "params" && k != "seed") {
        throw ConfigError("plan: unknown entry field '" + k + "'");
      }
    }
    PlanEntry entry;
    auto effect = e.contains("effect") && e["effect"].is_string() ? parse_effect(e["effect"].get<std::string>())
                                                                  : std::nullopt;
    if (!effect) throw ConfigError("plan: missing or unknown effect " + e.value("effect", nlohmann::json()).dump());
    entry.spec.effect = *effect;
    entry.spec.seed = e.value("seed", std::uint64_t{0});
    if (auto it = e.find("params"); it != e.end()) {
      if (!it->is_object()) throw ConfigError("plan: params must be an object");
      for (const auto& [k, v] : it->items()) {
        if (v.is_number()) {
          entry.spec.params[k] = v.get<double>();
        } else if (v.is_string()) {
          entry.spec.params[k] = v.get<std::string>();
        } else {
          throw ConfigError("plan: parameter '" + k + "' must be a number or token");
        }
      }
    }
    validate_effect(entry.spec);
    if (auto it = e.find("filter"); it != e.end()) {
      const auto& f = *it;
      if (!f.is_object()) throw ConfigError("plan: filter must be an object");
      for (const auto& [k, v] : f.items()) {
        if (k == "tiers") {
          for (const auto& t : v) {
            auto tier = t.is_string() ? parse_quality_tier(t.get<std::string>()) : std::nullopt;
            if (!tier) throw ConfigError("plan: unknown tier " + t.dump());
            entry.filter.tiers.insert(*tier);
          }
        } else if (k == "partitions") {
          for (const auto& p : v) {
            auto part = p.is_string() ? parse_partition(p.get<std::string>()) : std::nullopt;
            if (!part) throw ConfigError("plan: unknown partition " + p.dump());
            entry.filter.partitions.insert(*part);
          }
        } else if (k == "image_ids") {
          for (const auto& id : v) entry.filter.image_ids.insert(id.get<std::string>());
        } else if (k == "limit") {
          if (!v.is_number_unsigned()) throw ConfigError("plan: limit must be a non-negative integer");
          entry.filter.limit = v.get<std::size_t>();
        } else {
          throw ConfigError("plan: unknown filter field '" + k + "'");
        }
      }
    }
    plan.push_back(std::move(entry));
  }
  return plan;
}

std::vector<PlanEntry> load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open plan " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_plan(ss.str());
}

CorpusResult generate_corpus(const std::vector<ImageRecord>& manifest, const std::vector<PlanEntry>& plan,
                             const CorpusOptions& options, std::uint64_t seed) {
  CorpusResult result;
  result.records = manifest;

  std::set<std::string> used_ids;
  for (const auto& r : manifest) used_ids.insert(r.image_id);

  for (std::size_t e = 0; e < plan.size(); ++e) {
    const PlanEntry& entry = plan[e];
    const RequirementId target = target_of(entry.spec.effect);
    const std::string effect(to_string(entry.spec.effect));

    std::vector<const ImageRecord*> sources;
    for (const auto& r : manifest) {
      if (r.quality_tier == QualityTier::Gen) continue;
      const auto& tiers = entry.filter.tiers;
      if (!tiers.empty() && !tiers.count(r.quality_tier)) continue;
      if (!entry.filter.partitions.empty() && !entry.filter.partitions.count(r.partition)) continue;
      if (!entry.filter.image_ids.empty() && !entry.filter.image_ids.count(r.image_id)) continue;
      auto it = r.labels.find(target);
      if (it == r.labels.end() || it->second.state != ComplianceState::Compliant) continue;
      sources.push_back(&r);
    }
    if (entry.filter.limit && sources.size() > *entry.filter.limit) {
      Rng rng(seed, 0x5e1ec7 + e);
      rng.shuffle(sources.begin(), sources.end());
      sources.resize(*entry.filter.limit);
      std::sort(sources.begin(), sources.end());  // back to manifest order
    }
    if (sources.empty()) {
      result.warnings.push_back("plan entry " + std::to_string(e) + " (" + effect + ") selected no records");
      continue;
    }

    for (const ImageRecord* src : sources) {
      std::string id = src->image_id + "__" + effect + "_" + std::to_string(e);
      while (used_ids.count(id)) id += "_";
      used_ids.insert(id);

      EffectSpec spec = entry.spec;
      spec.seed = mix_seed(mix_seed(seed, entry.spec.seed + 0x9e37 * e), fnv1a(src->image_id));

      std::filesystem::path src_path(src->source_path);
      if (src_path.is_relative()) src_path = options.source_root / src_path;
      Image image = read_image(src_path);

      std::optional<MaskSet> masks;
      if (options.masks_dir && has_mask_sidecar(*options.masks_dir, src->image_id)) {
        masks = load_mask_sidecar(*options.masks_dir, src->image_id);
        if (masks->height != image.height || masks->width != image.width) {
          masks = resize(*masks, image.height, image.width);
        }
      }
      EffectResult out = apply_effect(image, spec, masks ? &*masks : nullptr, options.thresholds);

      const std::filesystem::path image_path = options.out_dir / "images" / (id + ".ppm");
      write_image(image_path, out.image);

      ImageRecord gen = *src;
      gen.image_id = id;
      gen.quality_tier = QualityTier::Gen;
      gen.generated_from = src->image_id;
      gen.restricted_to = {target};
      std::error_code ec;
      auto rel = std::filesystem::relative(image_path, options.source_root.empty() ? "." : options.source_root, ec);
      gen.source_path = (ec || rel.empty() ? std::filesystem::absolute(image_path) : rel).generic_string();
      for (const auto& [req, label] : out.labels_delta) gen.labels[req] = label;
      result.records.push_back(std::move(gen));
    }
  }
  return result;
}

MaskSet load_mask_sidecar(const std::filesystem::path& dir, std::string_view image_id) {
  MaskSet masks;
  for (int m = 0; m < kRegionCount; ++m) {
    const auto path = dir / (std::string(image_id) + "." + std::string(kRegionNames[m]) + ".pgm");
    Tensor3 plane = read_gray(path);
    if (m == 0) masks = Tensor3(kRegionCount, plane.height, plane.width);
    if (plane.height != masks.height || plane.width != masks.width) {
      throw DataError("mask sidecars for " + std::string(image_id) + " disagree in size");
    }
    std::copy(plane.data.begin(), plane.data.end(), masks.channel(m).begin());
  }
  return masks;
}

void save_mask_sidecar(const std::filesystem::path& dir, std::string_view image_id, const MaskSet& masks) {
  if (masks.channels != kRegionCount) throw ShapeError("mask set must have 8 channels");
  for (int m = 0; m < kRegionCount; ++m) {
    write_gray(dir / (std::string(image_id) + "." + std::string(kRegionNames[m]) + ".pgm"), masks, m);
  }
}

bool has_mask_sidecar(const std::filesystem::path& dir, std::string_view image_id) {
  for (int m = 0; m < kRegionCount; ++m) {
    if (!std::filesystem::exists(dir / (std::string(image_id) + "." + std::string(kRegionNames[m]) + ".pgm"))) {
      return false;
    }
  }
  return true;
}

}  // namespace icao
