// SPDX-License-Identifier: Apache-2.0
#include "icao/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "icao/errors.hpp"

namespace icao {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }
bool clamped(double p) { return p < kProbEpsilon || p > 1.0 - kProbEpsilon; }
double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void check_acyclic(const std::vector<ConflictRule>& rules) {
  std::array<std::vector<RequirementId>, kRequirementCount> edges;
  for (const auto& rule : rules) {
    for (auto s : rule.suppressed) {
      if (s == rule.trigger) {
        throw ConfigError("conflict rule for " + std::string(short_name(rule.trigger)) +
                          " suppresses itself");
      }
      edges[slot_of(rule.trigger)].push_back(s);
    }
  }
  // 0 = unvisited, 1 = on stack, 2 = done
  std::array<int, kRequirementCount> state{};
  std::function<void(std::size_t)> visit = [&](std::size_t u) {
    state[u] = 1;
    for (auto v : edges[u]) {
      std::size_t w = slot_of(v);
      if (state[w] == 1) {
        throw ConfigError("conflict rules form a cycle through " +
                          std::string(short_name(requirement_at_slot(w))));
      }
      if (state[w] == 0) visit(w);
    }
    state[u] = 2;
  };
  for (std::size_t u = 0; u < edges.size(); ++u) {
    if (state[u] == 0) visit(u);
  }
}

void check_same_length(std::size_t r, std::initializer_list<std::size_t> others) {
  for (auto n : others) {
    if (n != r) throw ShapeError("cls_loss: length mismatch (" + std::to_string(n) + " vs " + std::to_string(r) + ")");
  }
}

}  // namespace

RuleSet::RuleSet(std::vector<ConflictRule> rules, bool restrict_generated)
    : rules_(std::move(rules)), restrict_generated_(restrict_generated) {
  check_acyclic(rules_);
}

RuleSet RuleSet::defaults() {
  using R = RequirementId;
  return RuleSet(
      {
          {R::DarkTintedLenses, {R::EyesClosed, R::LookingAway, R::HairAcrossEyes, R::RedEyes}},
          {R::VeilOverFace, {R::NonNeutralExpression, R::MouthOpen}},
      },
      true);
}

RuleSet RuleSet::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("conflict rules: ") + e.what());
  }
  if (!j.is_object() || !j.contains("rules") || !j["rules"].is_array()) {
    throw ConfigError("conflict rules: expected an object with a 'rules' array");
  }
  auto req = [](const nlohmann::json& v) {
    auto id = v.is_string() ? parse_requirement(v.get<std::string>()) : std::nullopt;
    if (!id) throw ConfigError("conflict rules: unknown requirement " + v.dump());
    return *id;
  };
  std::vector<ConflictRule> rules;
  for (const auto& r : j["rules"]) {
    if (!r.is_object() || !r.contains("trigger") || !r.contains("suppressed") || !r["suppressed"].is_array()) {
      throw ConfigError("conflict rules: each rule needs 'trigger' and 'suppressed'");
    }
    ConflictRule rule{req(r["trigger"]), {}};
    for (const auto& s : r["suppressed"]) rule.suppressed.insert(req(s));
    rules.push_back(std::move(rule));
  }
  bool restrict = j.value("restrict_generated", true);
  return RuleSet(std::move(rules), restrict);
}

RuleSet RuleSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open conflict rules " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string RuleSet::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["restrict_generated"] = restrict_generated_;
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& rule : rules_) {
    nlohmann::ordered_json r;
    r["trigger"] = std::string(short_name(rule.trigger));
    nlohmann::ordered_json s = nlohmann::ordered_json::array();
    for (auto id : rule.suppressed) s.push_back(std::string(short_name(id)));
    r["suppressed"] = std::move(s);
    arr.push_back(std::move(r));
  }
  j["rules"] = std::move(arr);
  return j.dump(2) + "\n";
}

GateVector gate(const LabelMap& labels, const RuleSet& rules) {
  if (labels.size() != static_cast<std::size_t>(kRequirementCount)) {
    throw std::invalid_argument("gate: label map must hold all 26 requirements");
  }
  GateVector g;
  for (const auto& [id, label] : labels) {
    if (label.state == ComplianceState::NoWayToConfirm) g.close(id);
  }
  for (const auto& rule : rules.rules()) {
    if (labels.at(rule.trigger).is_non_compliant()) {
      for (auto s : rule.suppressed) g.close(s);
    }
  }
  return g;
}

GateVector gate_record(const ImageRecord& record, const RuleSet& rules) {
  GateVector g = gate(record.labels, rules);
  if (rules.restrict_generated() && record.quality_tier == QualityTier::Gen) {
    for (const auto& req : kRequirements) {
      if (std::find(record.restricted_to.begin(), record.restricted_to.end(), req.id) ==
          record.restricted_to.end()) {
        g.close(req.id);
      }
    }
  }
  return g;
}

double seg_loss(const Tensor3& probs, const Tensor3& targets, std::span<const double> lambda, Tensor3* grad) {
  if (!probs.same_shape(targets)) throw ShapeError("seg_loss: prediction and target shapes differ");
  if (lambda.size() != static_cast<std::size_t>(probs.channels)) {
    throw ShapeError("seg_loss: need one lambda per mask");
  }
  const double n = static_cast<double>(probs.size());
  if (grad) *grad = Tensor3(probs.channels, probs.height, probs.width);
  double sum = 0.0;
  for (int m = 0; m < probs.channels; ++m) {
    auto x = probs.channel(m);
    auto y = targets.channel(m);
    const double lm = lambda[m];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xc = clamp_prob(x[i]);
      sum += lm * y[i] * std::log(xc) + (1.0 - y[i]) * std::log(1.0 - xc);
      if (grad && !clamped(x[i])) {
        grad->channel(m)[i] = -(lm * y[i] / xc - (1.0 - y[i]) / (1.0 - xc)) / n;
      }
    }
  }
  return -sum / n;
}

double seg_loss_from_logits(const Tensor3& logits, const Tensor3& targets, std::span<const double> lambda,
                            Tensor3* grad) {
  if (!logits.same_shape(targets)) throw ShapeError("seg_loss: prediction and target shapes differ");
  if (lambda.size() != static_cast<std::size_t>(logits.channels)) {
    throw ShapeError("seg_loss: need one lambda per mask");
  }
  const double n = static_cast<double>(logits.size());
  if (grad) *grad = Tensor3(logits.channels, logits.height, logits.width);
  double sum = 0.0;
  for (int m = 0; m < logits.channels; ++m) {
    auto z = logits.channel(m);
    auto y = targets.channel(m);
    const double lm = lambda[m];
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double s = sigmoid(z[i]);
      const double xc = clamp_prob(s);
      sum += lm * y[i] * std::log(xc) + (1.0 - y[i]) * std::log(1.0 - xc);
      if (grad && !clamped(s)) {
        grad->channel(m)[i] = -(lm * y[i] * (1.0 - s) - (1.0 - y[i]) * s) / n;
      }
    }
  }
  return -sum / n;
}

double cls_loss(std::span<const double> probs, std::span<const double> targets,
                std::span<const std::uint8_t> gates, std::span<const double> lambda,
                std::span<const double> beta, std::span<double> grad_probs) {
  const std::size_t r = probs.size();
  check_same_length(r, {targets.size(), gates.size(), lambda.size(), beta.size()});
  if (!grad_probs.empty()) check_same_length(r, {grad_probs.size()});
  const double inv_r = 1.0 / static_cast<double>(r);
  double sum = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!grad_probs.empty()) grad_probs[i] = 0.0;
    if (gates[i] == 0) continue;
    const double pc = clamp_prob(probs[i]);
    const double t = targets[i];
    sum += beta[i] * (lambda[i] * t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc));
    if (!grad_probs.empty() && !clamped(probs[i])) {
      grad_probs[i] = -inv_r * beta[i] * (lambda[i] * t / pc - (1.0 - t) / (1.0 - pc));
    }
  }
  return -sum * inv_r;
}

double cls_loss_from_logits(std::span<const double> logits, std::span<const double> targets,
                            std::span<const std::uint8_t> gates, std::span<const double> lambda,
                            std::span<const double> beta, std::span<double> grad_logits) {
  const std::size_t r = logits.size();
  check_same_length(r, {targets.size(), gates.size(), lambda.size(), beta.size()});
  if (!grad_logits.empty()) check_same_length(r, {grad_logits.size()});
  const double inv_r = 1.0 / static_cast<double>(r);
  double sum = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (!grad_logits.empty()) grad_logits[i] = 0.0;
    if (gates[i] == 0) continue;
    const double s = sigmoid(logits[i]);
    const double pc = clamp_prob(s);
    const double t = targets[i];
    sum += beta[i] * (lambda[i] * t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc));
    if (!grad_logits.empty() && !clamped(s)) {
      grad_logits[i] = -inv_r * beta[i] * (lambda[i] * t * (1.0 - s) - (1.0 - t) * s);
    }
  }
  return -sum * inv_r;
}

std::array<double, kRequirementCount> targets_of(const LabelMap& labels) {
  std::array<double, kRequirementCount> t{};
  for (const auto& [id, label] : labels) t[slot_of(id)] = label.is_non_compliant() ? 1.0 : 0.0;
  return t;
}

}  // namespace icao
