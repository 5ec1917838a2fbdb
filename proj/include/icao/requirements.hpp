// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace icao {

inline constexpr int kRequirementCount = 26;
inline constexpr int kRegionCount = 8;

// Indices are the row numbers of the ISO/IEC 19794-5 portrait test list.
enum class RequirementId : std::uint8_t {
  EyesClosed = 1,
  NonNeutralExpression,
  MouthOpen,
  RotatedShoulders,
  RollPitchYaw,
  LookingAway,
  HairAcrossEyes,
  HeadCoverings,
  VeilOverFace,
  OtherFacesOrObjects,
  DarkTintedLenses,
  FrameCoveringEyes,
  FlashReflectionOnLenses,
  FramesTooHeavy,
  ShadowsBehindHead,
  ShadowsAcrossFace,
  FlashReflectionOnSkin,
  UnnaturalSkinTone,
  RedEyes,
  TooDarkLight,
  Blurred,
  VariedBackground,
  Pixelation,
  WashedOut,
  InkMarkedCreased,
  Posterization,
};

struct RequirementInfo {
  RequirementId id;
  std::string_view short_name;
  std::string_view display_name;
  bool extended;  // not part of the 23-test BioLab protocol
};

inline constexpr std::array<RequirementInfo, kRequirementCount> kRequirements{{
    {RequirementId::EyesClosed, "eyes_closed", "Eyes Closed", false},
    {RequirementId::NonNeutralExpression, "non_neutral_expression", "Non-Neutral Expression", false},
    {RequirementId::MouthOpen, "mouth_open", "Mouth Open", false},
    {RequirementId::RotatedShoulders, "rotated_shoulders", "Rotated Shoulders", false},
    {RequirementId::RollPitchYaw, "roll_pitch_yaw", "Roll/Pitch/Yaw", false},
    {RequirementId::LookingAway, "looking_away", "Looking Away", false},
    {RequirementId::HairAcrossEyes, "hair_across_eyes", "Hair Across Eyes", false},
    {RequirementId::HeadCoverings, "head_coverings", "Head Coverings", false},
    {RequirementId::VeilOverFace, "veil_over_face", "Veil Over Face", false},
    {RequirementId::OtherFacesOrObjects, "other_faces_or_objects", "Other Faces or Toys/Objects", false},
    {RequirementId::DarkTintedLenses, "dark_tinted_lenses", "Dark Tinted Lenses", false},
    {RequirementId::FrameCoveringEyes, "frame_covering_eyes", "Frame Covering the Eyes", false},
    {RequirementId::FlashReflectionOnLenses, "flash_reflection_on_lenses", "Flash Reflection on Lenses", false},
    {RequirementId::FramesTooHeavy, "frames_too_heavy", "Frames Too Heavy", false},
    {RequirementId::ShadowsBehindHead, "shadows_behind_head", "Shadows Behind Head", false},
    {RequirementId::ShadowsAcrossFace, "shadows_across_face", "Shadows Across Face", false},
    {RequirementId::FlashReflectionOnSkin, "flash_reflection_on_skin", "Flash Reflection on Skin", false},
    {RequirementId::UnnaturalSkinTone, "unnatural_skin_tone", "Unnatural Skin Tone", false},
    {RequirementId::RedEyes, "red_eyes", "Red Eyes", false},
    {RequirementId::TooDarkLight, "too_dark_light", "Too Dark/Light", false},
    {RequirementId::Blurred, "blurred", "Blurred", false},
    {RequirementId::VariedBackground, "varied_background", "Varied Background", false},
    {RequirementId::Pixelation, "pixelation", "Pixelation", false},
    {RequirementId::WashedOut, "washed_out", "Washed Out", true},
    {RequirementId::InkMarkedCreased, "ink_marked_creased", "Ink Marked/Creased", true},
    {RequirementId::Posterization, "posterization", "Posterization", true},
}};

constexpr int index_of(RequirementId id) noexcept { return static_cast<int>(id); }

/// Zero-based slot, for indexing 26-long score/gate/label arrays.
constexpr std::size_t slot_of(RequirementId id) noexcept {
  return static_cast<std::size_t>(id) - 1;
}

constexpr std::optional<RequirementId> requirement_from_index(int index) noexcept {
  if (index < 1 || index > kRequirementCount) return std::nullopt;
  return static_cast<RequirementId>(index);
}

constexpr RequirementId requirement_at_slot(std::size_t slot) noexcept {
  return static_cast<RequirementId>(slot + 1);
}

constexpr const RequirementInfo& info(RequirementId id) noexcept {
  return kRequirements[slot_of(id)];
}

constexpr std::string_view short_name(RequirementId id) noexcept { return info(id).short_name; }

/// Accepts a short name ("eyes_closed") or a decimal index ("1").
std::optional<RequirementId> parse_requirement(std::string_view token) noexcept;

/// Segmentation regions, in the fixed channel order of a MaskSet.
enum class Region : std::uint8_t {
  HeadCoverings = 0,
  Hair,
  Eyeglasses,
  Eyes,
  Mouth,
  FullFace,
  Torso,
  Background,
};

inline constexpr std::array<std::string_view, kRegionCount> kRegionNames{
    "head_coverings", "hair", "eyeglasses", "eyes", "mouth", "full_face", "torso", "background"};

constexpr std::size_t slot_of(Region r) noexcept { return static_cast<std::size_t>(r); }
constexpr std::string_view region_name(Region r) noexcept { return kRegionNames[slot_of(r)]; }

}  // namespace icao
