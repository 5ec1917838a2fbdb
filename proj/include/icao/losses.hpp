// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icao/records.hpp"
#include "icao/tensor.hpp"

namespace icao {

/// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] before taking logs.
inline constexpr double kProbEpsilon = 1e-7;

/// A NonCompliant trigger label suppresses (gates out) a set of other requirements.
struct ConflictRule {
  RequirementId trigger;
  std::set<RequirementId> suppressed;
  bool operator==(const ConflictRule&) const = default;
};

/// Conflict-rule table plus the generated-image restriction switch.
///
/// JSON form:
///   {"version": 1, "restrict_generated": true,
///    "rules": [{"trigger": "dark_tinted_lenses", "suppressed": ["eyes_closed", ...]}]}
class RuleSet {
 public:
  RuleSet() = default;
  /// Throws ConfigError on self-suppression or a cycle in the suppression relation.
  explicit RuleSet(std::vector<ConflictRule> rules, bool restrict_generated = true);

  static RuleSet defaults();
  static RuleSet none() { return RuleSet({}, false); }
  static RuleSet from_json(std::string_view text);
  static RuleSet load(const std::filesystem::path& path);
  std::string to_json() const;

  const std::vector<ConflictRule>& rules() const noexcept { return rules_; }
  /// When set, a Gen-tier record is gated out of every requirement outside its restricted_to list.
  bool restrict_generated() const noexcept { return restrict_generated_; }

 private:
  std::vector<ConflictRule> rules_;
  bool restrict_generated_ = true;
};

/// gates[r] = 0 iff labels[r] is NoWayToConfirm or a rule whose trigger is NonCompliant suppresses r.
/// Rules are applied in a single pass over ground-truth labels. Requires all 26 labels.
GateVector gate(const LabelMap& labels, const RuleSet& rules);

/// gate() plus the generated-image restriction when the rule set enables it.
GateVector gate_record(const ImageRecord& record, const RuleSet& rules);

/// Multi-label segmentation BCE with per-mask positive weights:
///   -(1/(M*H*W)) * sum_m sum_px [lambda_m * Y * log X + (1 - Y) * log(1 - X)]
/// `probs` and `targets` are M x H x W; lambda has M entries. When `grad` is non-null it receives
/// d(loss)/d(probs) (zero where clamping is active).
double seg_loss(const Tensor3& probs, const Tensor3& targets, std::span<const double> lambda,
                Tensor3* grad = nullptr);

/// seg_loss on sigmoid(logits); `grad` receives d(loss)/d(logits).
double seg_loss_from_logits(const Tensor3& logits, const Tensor3& targets, std::span<const double> lambda,
                            Tensor3* grad = nullptr);

/// Gated, doubly weighted multi-label classification BCE:
///   -(1/R) * sum_r beta_r * g_r * [lambda_r * t_r * log p_r + (1 - t_r) * log(1 - p_r)]
/// t_r = 1 means non-compliant. All spans must have the same length R.
double cls_loss(std::span<const double> probs, std::span<const double> targets,
                std::span<const std::uint8_t> gates, std::span<const double> lambda,
                std::span<const double> beta, std::span<double> grad_probs = {});

/// cls_loss on sigmoid(logits); `grad_logits` receives d(loss)/d(logits).
double cls_loss_from_logits(std::span<const double> logits, std::span<const double> targets,
                            std::span<const std::uint8_t> gates, std::span<const double> lambda,
                            std::span<const double> beta, std::span<double> grad_logits = {});

/// Binary targets (1 = NonCompliant) for all 26 requirements. NoWayToConfirm maps to 0; such
/// entries are always gated out.
std::array<double, kRequirementCount> targets_of(const LabelMap& labels);

}  // namespace icao
