// SPDX-License-Identifier: Apache-2.0
#include "icao/gaze.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "icao/errors.hpp"

namespace icao {

namespace {

double eye_deviation(const EyeLandmarks& e, const char* which) {
  const double ax = e.corner_outer.x - e.corner_inner.x;
  const double ay = e.corner_outer.y - e.corner_inner.y;
  const double len = std::hypot(ax, ay);
  if (!(len > 0.0) || !std::isfinite(len)) throw DataError(std::string(which) + " eye corners coincide");
  const double mx = 0.5 * (e.corner_inner.x + e.corner_outer.x);
  const double my = 0.5 * (e.corner_inner.y + e.corner_outer.y);
  const double along = ((e.iris_center.x - mx) * ax + (e.iris_center.y - my) * ay) / len;
  return std::fabs(along) / len;
}

Point2 parse_point(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw DataError("landmark point must be [x, y]");
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

std::optional<EyeLandmarks> parse_eye(const nlohmann::json& rec, const char* key) {
  auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) return std::nullopt;
  if (!it->is_object()) throw DataError(std::string(key) + " must be an object");
  for (const auto& [k, v] : it->items()) {
    if (k != "iris" && k != "inner" && k != "outer") throw DataError("unknown eye field '" + k + "'");
  }
  return EyeLandmarks{parse_point(it->at("iris")), parse_point(it->at("inner")), parse_point(it->at("outer"))};
}

}  // namespace

double gaze_deviation(const FaceLandmarks& lm) {
  if (!lm.left || !lm.right) throw DataError(std::string("missing eye: ") + (lm.left ? "right" : "left"));
  return 0.5 * (eye_deviation(*lm.left, "left") + eye_deviation(*lm.right, "right"));
}

RefineOutcome refine_looking_away(const ScoreVector&, const DecisionMap& decisions,
                                  const std::optional<FaceLandmarks>& landmarks, double tau) {
  if (!(tau > 0.0)) throw ConfigError("gaze tau must be positive");
  RefineOutcome out;
  auto it = decisions.find(RequirementId::LookingAway);
  if (it != decisions.end()) out.looking_away = it->second;

  auto compliant = [&](RequirementId id) {
    auto d = decisions.find(id);
    return d != decisions.end() && d->second.verdict == Verdict::Compliant;
  };
  if (!compliant(RequirementId::RollPitchYaw) || !compliant(RequirementId::LookingAway)) {
    out.note = "pose or gaze already non-compliant";
    return out;
  }
  if (!landmarks) {
    out.note = "no landmarks";
    return out;
  }
  if (!landmarks->left || !landmarks->right) {
    out.note = "landmarks for one eye are missing";
    return out;
  }
  out.deviation = gaze_deviation(*landmarks);
  if (*out.deviation > tau) {
    out.looking_away = {Verdict::NonCompliant, "gaze_refinement"};
    out.flipped = true;
  }
  return out;
}

SidecarLandmarkDetector SidecarLandmarkDetector::parse(std::string_view text) {
  SidecarLandmarkDetector d;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string id;
    FaceLandmarks lm;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("image_id") || !j["image_id"].is_string()) {
        throw DataError("record needs a string image_id");
      }
      for (const auto& [k, v] : j.items()) {
        if (k != "image_id" && k != "left" && k != "right") throw DataError("unknown field '" + k + "'");
      }
      id = j["image_id"].get<std::string>();
      lm.left = parse_eye(j, "left");
      lm.right = parse_eye(j, "right");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, e.what());
    } catch (const DataError& e) {
      throw ParseError(n, e.what());
    }
    if (!d.records_.emplace(id, lm).second) {
      throw DataError("duplicate id '" + id + "' (line " + std::to_string(n) + ")");
    }
  }
  return d;
}

SidecarLandmarkDetector SidecarLandmarkDetector::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open landmarks " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::optional<FaceLandmarks> SidecarLandmarkDetector::detect(std::string_view image_id) const {
  auto it = records_.find(image_id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

}  // namespace icao
