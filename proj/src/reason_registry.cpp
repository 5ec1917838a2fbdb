// SPDX-License-Identifier: Apache-2.0
#include "icao/reason_registry.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

#include <json.hpp>

#include "icao/errors.hpp"
#include "icao/records.hpp"

namespace icao {

namespace {

ReasonRegistry make_builtin() {
  ReasonRegistry reg;
  auto add = [&reg](RequirementId id, std::initializer_list<const char*> reasons) {
    for (const char* r : reasons) reg.add(id, r);
  };
  using R = RequirementId;
  add(R::EyesClosed, {"both_closed", "one_closed", "half_closed"});
  add(R::NonNeutralExpression, {"smiling", "frowning", "raised_eyebrows", "grimace", "other_expression"});
  add(R::MouthOpen, {"slightly_open", "wide_open", "talking"});
  add(R::RotatedShoulders, {"rotated_left", "rotated_right"});
  add(R::RollPitchYaw, {"roll", "pitch", "yaw", "combined"});
  add(R::LookingAway, {"left", "right", "up", "down", "gaze_refinement"});
  add(R::HairAcrossEyes, {"one_eye", "both_eyes", "fringe"});
  add(R::HeadCoverings, {"cap", "hat", "hood", "headscarf", "turban", "beanie", "headband", "bandana",
                         "helmet", "religious_covering", "other_covering"});
  add(R::VeilOverFace, {"veil", "face_mask", "scarf_over_face", "hand_over_face"});
  add(R::OtherFacesOrObjects, {"other_face", "toy", "hand", "object"});
  add(R::DarkTintedLenses, {"sunglasses", "tinted_lenses"});
  add(R::FrameCoveringEyes, {"frame_over_eyes"});
  add(R::FlashReflectionOnLenses, {"strong_reflection", "soft_reflection"});
  add(R::FramesTooHeavy, {"thick_frame"});
  add(R::ShadowsBehindHead, {"strong_shadow", "soft_shadow"});
  add(R::ShadowsAcrossFace, {"strong_shadow", "soft_shadow"});
  add(R::FlashReflectionOnSkin, {"hotspot", "specular_highlight"});
  add(R::UnnaturalSkinTone, {"colour_cast", "generated:unnatural_skin_tone"});
  add(R::RedEyes, {"red_eye", "generated:red_eyes"});
  add(R::TooDarkLight, {"too_dark", "too_light", "generated:exposure_shift"});
  add(R::Blurred, {"motion_blur", "out_of_focus", "generated:gaussian_blur"});
  add(R::VariedBackground, {"textured", "non_uniform", "objects_in_background",
                            "generated:background_substitution"});
  add(R::Pixelation, {"pixelated", "generated:pixelation"});
  add(R::WashedOut, {"low_contrast", "generated:washed_out"});
  add(R::InkMarkedCreased, {"ink_mark", "crease", "generated:ink_marked"});
  add(R::Posterization, {"posterized", "generated:posterization"});
  return reg;
}

}  // namespace

const ReasonRegistry& ReasonRegistry::builtin() {
  static const ReasonRegistry reg = make_builtin();
  return reg;
}

bool ReasonRegistry::contains(RequirementId id, std::string_view reason) const {
  const auto& set = reasons_[slot_of(id)];
  return set.find(reason) != set.end();
}

ReasonRegistry ReasonRegistry::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("reason registry: ") + e.what());
  }
  if (!j.is_object() || !j.contains("version") || !j["version"].is_number_integer() ||
      !j.contains("reasons") || !j["reasons"].is_object()) {
    throw ConfigError("reason registry: expected {\"version\": int, \"reasons\": {...}}");
  }
  ReasonRegistry reg;
  reg.version_ = j["version"].get<int>();
  for (const auto& [key, list] : j["reasons"].items()) {
    auto id = parse_requirement(key);
    if (!id) throw ConfigError("reason registry: unknown requirement '" + key + "'");
    if (!list.is_array()) throw ConfigError("reason registry: '" + key + "' must be an array");
    for (const auto& r : list) {
      if (!r.is_string()) throw ConfigError("reason registry: reasons must be strings");
      reg.add(*id, r.get<std::string>());
    }
  }
  return reg;
}

ReasonRegistry ReasonRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open reason registry " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string ReasonRegistry::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = version_;
  nlohmann::ordered_json reasons = nlohmann::ordered_json::object();
  for (const auto& req : kRequirements) {
    reasons[std::string(req.short_name)] = reasons_[slot_of(req.id)];
  }
  j["reasons"] = std::move(reasons);
  return j.dump(2) + "\n";
}

}  // namespace icao
