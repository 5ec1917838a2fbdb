// SPDX-License-Identifier: Apache-2.0
#include "icao/training.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "icao/degradation.hpp"
#include "icao/errors.hpp"
#include "icao/rng.hpp"

namespace icao {

namespace {

std::string read_text(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::filesystem::path source_of(const ImageRecord& record, const std::filesystem::path& root) {
  std::filesystem::path p(record.source_path);
  return p.is_absolute() ? p : root / p;
}

nlohmann::ordered_json loss_json(const LossTriple& l) {
  return {{"seg", l.seg}, {"cls", l.cls}, {"total", l.total}};
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Config

double LrSchedule::at(int epoch, int epochs) const {
  if (kind == "step") {
    double lr = base;
    for (int m : milestones)
      if (epoch > m) lr *= gamma;
    return lr;
  }
  if (kind == "cosine") {
    const double t = epochs > 1 ? static_cast<double>(epoch - 1) / (epochs - 1) : 0.0;
    return min + 0.5 * (base - min) * (1.0 + std::cos(std::numbers::pi * t));
  }
  return base;
}

void TrainConfig::validate() const {
  model.validate();
  if (!seed) throw ConfigError("training config: seed is mandatory");
  if (!(loss_mix >= 0.0 && loss_mix <= 1.0)) throw ConfigError("loss_mix must lie in [0,1]");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (lr.kind != "constant" && lr.kind != "step" && lr.kind != "cosine") {
    throw ConfigError("unknown learning-rate schedule '" + lr.kind + "'");
  }
  if (!(lr.base > 0.0) || !std::isfinite(lr.base)) throw ConfigError("learning rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
  if (partitions.empty()) throw ConfigError("partitions must not be empty");
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["model"] = nlohmann::ordered_json::parse(model.to_json());
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["lr"] = {{"kind", lr.kind}, {"base", lr.base}, {"milestones", lr.milestones}, {"gamma", lr.gamma}, {"min", lr.min}};
  j["loss_mix"] = loss_mix;
  j["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json();
  j["weights"] = weights;
  j["rules"] = rules ? nlohmann::ordered_json(*rules) : nlohmann::ordered_json();
  auto& parts = j["partitions"] = nlohmann::ordered_json::array();
  for (Partition p : partitions) parts.push_back(std::string(to_string(p)));
  j["checkpoint_every"] = checkpoint_every;
  j["adam"] = {{"beta1", adam_beta1}, {"beta2", adam_beta2}, {"eps", adam_eps}};
  return j.dump();
}

TrainConfig TrainConfig::from_json(std::string_view text) {
  TrainConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ConfigError("training config must be an object");
    for (const auto& [k, v] : j.items()) {
      if (k == "model") {
        c.model = ModelConfig::from_json(v.dump());
      } else if (k == "batch_size") {
        c.batch_size = v.get<int>();
      } else if (k == "epochs") {
        c.epochs = v.get<int>();
      } else if (k == "lr") {
        if (v.is_number()) {
          c.lr.base = v.get<double>();
        } else {
          for (const auto& [lk, lv] : v.items()) {
            if (lk == "kind") c.lr.kind = lv.get<std::string>();
            else if (lk == "base") c.lr.base = lv.get<double>();
            else if (lk == "milestones") c.lr.milestones = lv.get<std::vector<int>>();
            else if (lk == "gamma") c.lr.gamma = lv.get<double>();
            else if (lk == "min") c.lr.min = lv.get<double>();
            else throw ConfigError("lr: unknown key '" + lk + "'");
          }
        }
      } else if (k == "loss_mix") {
        c.loss_mix = v.get<double>();
      } else if (k == "seed") {
        if (!v.is_null()) {
          if (!v.is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
          c.seed = v.get<std::uint64_t>();
        }
      } else if (k == "weights") {
        c.weights = v.get<std::string>();
      } else if (k == "rules") {
        if (!v.is_null()) c.rules = v.get<std::string>();
      } else if (k == "partitions") {
        c.partitions.clear();
        for (const auto& p : v) {
          auto part = parse_partition(p.get<std::string>());
          if (!part) throw ConfigError("unknown partition " + p.dump());
          c.partitions.insert(*part);
        }
      } else if (k == "checkpoint_every") {
        c.checkpoint_every = v.get<int>();
      } else if (k == "adam") {
        for (const auto& [ak, av] : v.items()) {
          if (ak == "beta1") c.adam_beta1 = av.get<double>();
          else if (ak == "beta2") c.adam_beta2 = av.get<double>();
          else if (ak == "eps") c.adam_eps = av.get<double>();
          else throw ConfigError("adam: unknown key '" + ak + "'");
        }
      } else {
        throw ConfigError("training config: unknown key '" + k + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  return from_json(read_text(path, "training config"));
}

// ---------------------------------------------------------------------------------------------
// Data

std::optional<MaskSet> SidecarMaskSource::masks_for(const ImageRecord& record) const {
  if (has_mask_sidecar(dir_, record.image_id)) return load_mask_sidecar(dir_, record.image_id);
  if (record.generated_from && has_mask_sidecar(dir_, *record.generated_from)) {
    return load_mask_sidecar(dir_, *record.generated_from);
  }
  return std::nullopt;
}

Tensor3 load_model_input(const ImageRecord& record, const std::filesystem::path& image_root, int height, int width) {
  return to_planar(resize(read_image(source_of(record, image_root)), height, width));
}

TrainData prepare_training_data(std::span<const ImageRecord> records, const std::filesystem::path& image_root,
                                const MaskSource& masks, const ModelConfig& model, const RuleSet& rules) {
  TrainData data;
  std::vector<std::string> missing;
  for (const auto& r : records) {
    auto m = masks.masks_for(r);
    if (!m) {
      missing.push_back(r.image_id);
      continue;
    }
    if (m->channels != kRegionCount) throw ShapeError("masks for " + r.image_id + " must have 8 regions");
    data.ids.push_back(r.image_id);
    data.images.push_back(load_model_input(r, image_root, model.input_height, model.input_width));
    data.masks.push_back(resize(*m, model.input_height, model.input_width));
    data.targets.push_back(targets_of(r.labels));
    data.gates.push_back(gate_record(r, rules));
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ...";
    throw DataError("missing masks for " + std::to_string(missing.size()) + " image(s): " + list);
  }
  return data;
}

MaskSummary summarize_masks(const TrainData& data) {
  MaskSummary s;
  for (const auto& m : data.masks) s.add(m);
  return s;
}

std::string TrainLog::to_ndjson() const {
  std::string out;
  nlohmann::ordered_json first{{"phase", "initial"}};
  first.update(loss_json(initial));
  out += first.dump() + '\n';
  for (const auto& e : epochs) {
    nlohmann::ordered_json j{{"phase", "epoch"}, {"epoch", e.epoch}, {"lr", e.lr}};
    j.update(loss_json(e.loss));
    out += j.dump() + '\n';
  }
  nlohmann::ordered_json last{{"phase", "final"}};
  last.update(loss_json(final_pass));
  out += last.dump() + '\n';
  return out;
}

// ---------------------------------------------------------------------------------------------
// Losses and optimisation

LossTriple sample_loss(const SegClsModel& model, const Tensor3& image, const Tensor3& masks,
                       std::span<const double> targets, const GateVector& gates, const WeightSet& weights,
                       double loss_mix, std::span<double> grad, double scale) {
  ForwardTrace trace;
  const ModelOutput out = model.forward(image, trace);
  const bool want = !grad.empty();
  Tensor3 d_seg;
  std::array<double, kRequirementCount> d_cls{};

  LossTriple l;
  l.seg = seg_loss_from_logits(out.seg_logits, masks, weights.lambda_m, want ? &d_seg : nullptr);
  l.cls = cls_loss_from_logits(out.cls_logits, targets, gates.gates, weights.lambda_r, weights.beta_r,
                               want ? std::span<double>(d_cls) : std::span<double>());
  l.total = loss_mix * l.seg + (1.0 - loss_mix) * l.cls;

  if (want) {
    const double ws = loss_mix * scale, wc = (1.0 - loss_mix) * scale;
    for (double& v : d_seg.data) v *= ws;
    for (double& v : d_cls) v *= wc;
    model.backward(trace, loss_mix > 0.0 ? &d_seg : nullptr,
                   loss_mix < 1.0 ? std::span<const double>(d_cls) : std::span<const double>(), grad);
  }
  return l;
}

LossTriple full_pass_loss(const SegClsModel& model, const TrainData& data, const WeightSet& weights, double loss_mix) {
  LossTriple sum;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto l = sample_loss(model, data.images[i], data.masks[i], data.targets[i], data.gates[i], weights, loss_mix);
    sum.seg += l.seg;
    sum.cls += l.cls;
    sum.total += l.total;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, data.size()));
  return {sum.seg / n, sum.cls / n, sum.total / n};
}

TrainResult train(const TrainData& data, const WeightSet& weights, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (data.size() == 0) throw DataError("no training samples");

  TrainResult result{options.resume ? options.resume->model : SegClsModel(config.model, *config.seed), {}, {}};
  SegClsModel& model = result.model;
  if (!(model.config() == config.model)) throw ConfigError("resume checkpoint was trained with a different model config");
  const std::size_t n_params = model.parameters().size();

  TrainingState& st = result.state;
  if (options.resume && options.resume->training) {
    st = *options.resume->training;
  } else {
    st.adam_m.assign(n_params, 0.0);
    st.adam_v.assign(n_params, 0.0);
  }
  st.metadata_json = config.to_json();

  const int last = std::min(config.epochs, options.stop_after.value_or(config.epochs));
  result.log.initial = full_pass_loss(model, data, weights, config.loss_mix);

  std::vector<std::size_t> order(data.size());
  std::vector<double> grad(n_params);
  auto& p = model.parameters();

  for (int epoch = st.epoch + 1; epoch <= last; ++epoch) {
    const double lr = config.lr.at(epoch, config.epochs);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(*config.seed, 0x7a11'0000ULL + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());

    LossTriple sum;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      LossTriple batch;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const auto l = sample_loss(model, data.images[i], data.masks[i], data.targets[i], data.gates[i], weights,
                                   config.loss_mix, grad, scale);
        batch.seg += l.seg * scale;
        batch.cls += l.cls * scale;
        batch.total += l.total * scale;
      }
      if (!std::isfinite(batch.total)) {
        throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch));
      }
      for (double g : grad) {
        if (!std::isfinite(g)) throw DivergenceError("gradient became non-finite at epoch " + std::to_string(epoch));
      }

      ++st.adam_step;
      const double b1 = config.adam_beta1, b2 = config.adam_beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.adam_step));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.adam_step));
      for (std::size_t k = 0; k < n_params; ++k) {
        st.adam_m[k] = b1 * st.adam_m[k] + (1.0 - b1) * grad[k];
        st.adam_v[k] = b2 * st.adam_v[k] + (1.0 - b2) * grad[k] * grad[k];
        p[k] -= lr * (st.adam_m[k] / c1) / (std::sqrt(st.adam_v[k] / c2) + config.adam_eps);
      }

      sum.seg += batch.seg;
      sum.cls += batch.cls;
      sum.total += batch.total;
      ++batches;
    }

    EpochLog e{epoch, lr, {sum.seg / batches, sum.cls / batches, sum.total / batches}};
    result.log.epochs.push_back(e);
    st.epoch = epoch;
    if (options.on_epoch) options.on_epoch(e);
    if (!options.out_dir.empty() && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
      save_checkpoint(options.out_dir / name, model, &st);
    }
  }

  result.log.final_pass = full_pass_loss(model, data, weights, config.loss_mix);
  if (!std::isfinite(result.log.final_pass.total)) throw DivergenceError("final loss is non-finite");

  if (!options.out_dir.empty()) {
    save_checkpoint(options.out_dir / "checkpoint.ckpt", model, &st);
    write_text(options.out_dir / "train_log.ndjson", result.log.to_ndjson());
    write_text(options.out_dir / "weights.json", weights.to_json() + "\n");
  }
  return result;
}

TrainResult train(std::span<const ImageRecord> records, const std::filesystem::path& image_root,
                  const MaskSource& masks, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  const RuleSet rules = config.rules ? RuleSet::load(*config.rules) : RuleSet::defaults();
  std::vector<ImageRecord> selected;
  for (const auto& r : records) {
    if (config.partitions.count(r.partition)) selected.push_back(r);
  }
  if (selected.empty()) throw DataError("no records in the training partitions");
  const TrainData data = prepare_training_data(selected, image_root, masks, config.model, rules);
  const WeightSet weights = config.weights == "derived"
                                ? derive_weights(selected, summarize_masks(data), rules, DegeneratePolicy::Fallback)
                                : WeightSet::from_json(read_text(config.weights, "weights file"));
  return train(data, weights, config, options);
}

// ---------------------------------------------------------------------------------------------
// Scoring

std::vector<ScoreEntry> score_records(const SegClsModel& model, std::span<const ImageRecord> records,
                                      const std::filesystem::path& image_root) {
  std::vector<ScoreEntry> out;
  out.reserve(records.size() * kRequirementCount);
  const auto& c = model.config();
  for (const auto& r : records) {
    const auto scores = model.forward(load_model_input(r, image_root, c.input_height, c.input_width)).cls_scores();
    for (int k = 0; k < kRequirementCount; ++k) out.push_back({r.image_id, requirement_at_slot(k), scores[k]});
  }
  return out;
}

void write_scores(const std::filesystem::path& path, std::span<const ScoreEntry> scores) {
  std::string text;
  for (const auto& s : scores) {
    nlohmann::ordered_json j{{"image_id", s.image_id}, {"requirement", short_name(s.requirement)}, {"score", s.score}};
    text += j.dump() + '\n';
  }
  write_text(path, text);
}

std::vector<ScoreEntry> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scores " + path.string());
  std::vector<ScoreEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) throw DataError("expected an object");
      for (const auto& [k, v] : j.items()) {
        if (k != "image_id" && k != "requirement" && k != "score") throw DataError("unknown field '" + k + "'");
      }
      ScoreEntry e;
      e.image_id = j.at("image_id").get<std::string>();
      const auto& req = j.at("requirement");
      auto id = req.is_number_unsigned() ? requirement_from_index(req.get<int>())
                                         : parse_requirement(req.get<std::string>());
      if (!id) throw DataError("unknown requirement " + req.dump());
      e.requirement = *id;
      e.score = j.at("score").get<double>();
      if (!std::isfinite(e.score) || e.score < 0.0 || e.score > 1.0) throw DataError("score outside [0,1]");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(n, e.what());
    }
  }
  return out;
}

std::vector<ScoredSample> join_scores(std::span<const ImageRecord> records, std::span<const ScoreEntry> scores,
                                      const RuleSet& rules) {
  std::map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) index.emplace(records[i].image_id, i);
  std::vector<GateVector> gates(records.size());
  std::vector<bool> gated(records.size(), false);
  std::set<std::pair<std::string_view, RequirementId>> seen;

  std::vector<ScoredSample> out;
  out.reserve(scores.size());
  for (const auto& s : scores) {
    auto it = index.find(s.image_id);
    if (it == index.end()) throw DataError("score for unknown image '" + s.image_id + "'");
    if (!seen.emplace(it->first, s.requirement).second) {
      throw DataError("duplicate score for '" + s.image_id + "' / " + std::string(short_name(s.requirement)));
    }
    const ImageRecord& r = records[it->second];
    if (!gated[it->second]) {
      gates[it->second] = gate_record(r, rules);
      gated[it->second] = true;
    }
    ScoredSample ss;
    ss.image_id = s.image_id;
    ss.requirement = s.requirement;
    ss.score = s.score;
    ss.label = r.label(s.requirement).state == ComplianceState::NonCompliant;
    ss.group = r.demographics;
    ss.gated_in = gates[it->second].open(s.requirement);
    out.push_back(std::move(ss));
  }
  return out;
}

EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, std::span<const ImageRecord> records,
                               const std::filesystem::path& image_root, const RuleSet& rules,
                               const EvalOptions& options) {
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  const auto scores = score_records(ckpt.model, records, image_root);
  const auto samples = join_scores(records, scores, rules);
  return evaluate(samples, options);
}

}  // namespace icao
