// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>

#include "icao/requirements.hpp"

namespace icao {

/// Versioned closed vocabulary of non-compliance reasons, one set per requirement.
///
/// The registry is stored as JSON:
///   {"version": 1, "reasons": {"eyes_closed": ["both_closed", ...], ...}}
/// Requirements absent from the file have an empty vocabulary.
class ReasonRegistry {
 public:
  ReasonRegistry() = default;

  /// The vocabulary shipped with the library (also written to data/reason_registry.json).
  static const ReasonRegistry& builtin();

  static ReasonRegistry from_json(std::string_view text);
  static ReasonRegistry load(const std::filesystem::path& path);
  std::string to_json() const;

  int version() const noexcept { return version_; }
  bool contains(RequirementId id, std::string_view reason) const;
  const std::set<std::string, std::less<>>& reasons(RequirementId id) const {
    return reasons_[slot_of(id)];
  }
  void add(RequirementId id, std::string reason) { reasons_[slot_of(id)].insert(std::move(reason)); }

 private:
  int version_ = 1;
  std::array<std::set<std::string, std::less<>>, kRequirementCount> reasons_;
};

}  // namespace icao
