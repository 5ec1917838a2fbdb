// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "icao/checkpoint.hpp"
#include "icao/dataset.hpp"
#include "icao/eval.hpp"
#include "icao/image.hpp"
#include "icao/losses.hpp"
#include "icao/model.hpp"

namespace icao {

struct LrSchedule {
  std::string kind = "constant";  // constant | step | cosine
  double base = 0.01;
  std::vector<int> milestones;    // step: multiply by gamma after each listed epoch
  double gamma = 0.1;
  double min = 0.0;               // cosine floor

  /// Learning rate for a 1-based epoch out of `epochs`.
  double at(int epoch, int epochs) const;
};

/// JSON form (all keys optional except "seed"):
///   {"model": {...}, "batch_size": 4, "epochs": 200, "lr": 0.01 | {"kind": "step", ...},
///    "loss_mix": 0.5, "seed": 7, "weights": "derived" | "<path to weights json>",
///    "rules": "<path>", "partitions": ["all", "train", "train_balanced"], "checkpoint_every": 0,
///    "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}}
struct TrainConfig {
  ModelConfig model;
  int batch_size = 4;
  int epochs = 200;
  LrSchedule lr;
  double loss_mix = 0.5;  // total = a * seg + (1 - a) * cls
  std::optional<std::uint64_t> seed;
  std::string weights = "derived";
  std::optional<std::string> rules;
  std::set<Partition> partitions{Partition::All, Partition::Train, Partition::TrainBalanced};
  int checkpoint_every = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Throws ConfigError; the seed is mandatory.
  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Per-image region masks for training.
class MaskSource {
 public:
  virtual ~MaskSource() = default;
  virtual std::optional<MaskSet> masks_for(const ImageRecord& record) const = 0;
};

/// Sidecar PGMs <dir>/<image_id>.<region>.pgm; a generated image without its own sidecars uses
/// those of the image it was generated from.
class SidecarMaskSource final : public MaskSource {
 public:
  explicit SidecarMaskSource(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::optional<MaskSet> masks_for(const ImageRecord& record) const override;

 private:
  std::filesystem::path dir_;
};

/// Training set resampled to the model input size.
struct TrainData {
  std::vector<std::string> ids;
  std::vector<Tensor3> images;  // 3 x H x W
  std::vector<Tensor3> masks;   // 8 x H x W
  std::vector<std::array<double, kRequirementCount>> targets;
  std::vector<GateVector> gates;

  std::size_t size() const noexcept { return ids.size(); }
};

/// Source paths are resolved against `image_root` unless absolute.
Tensor3 load_model_input(const ImageRecord& record, const std::filesystem::path& image_root, int height, int width);

/// Throws DataError listing the image ids that have no masks.
TrainData prepare_training_data(std::span<const ImageRecord> records, const std::filesystem::path& image_root,
                                const MaskSource& masks, const ModelConfig& model, const RuleSet& rules);

MaskSummary summarize_masks(const TrainData& data);

struct LossTriple {
  double seg = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  LossTriple loss;  // mean over the epoch's batches, measured before each update
};

struct TrainLog {
  LossTriple initial;  // full pass before training
  std::vector<EpochLog> epochs;
  LossTriple final_pass;  // full pass after the last epoch

  /// One JSON object per line: initial, each epoch, final.
  std::string to_ndjson() const;
};

/// Mean per-sample losses over the whole set.
LossTriple full_pass_loss(const SegClsModel& model, const TrainData& data, const WeightSet& weights, double loss_mix);

/// Per-sample loss and its gradient (accumulated into `grad`, scaled by `scale`).
LossTriple sample_loss(const SegClsModel& model, const Tensor3& image, const Tensor3& masks,
                       std::span<const double> targets, const GateVector& gates, const WeightSet& weights,
                       double loss_mix, std::span<double> grad = {}, double scale = 1.0);

struct TrainOptions {
  /// Continue from this checkpoint's parameters and optimizer state.
  const LoadedCheckpoint* resume = nullptr;
  /// Stop after this epoch (for interrupted-run tests); defaults to config.epochs.
  std::optional<int> stop_after;
  /// When set: checkpoint.ckpt, train_log.ndjson and weights.json are written here.
  std::filesystem::path out_dir;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  SegClsModel model;
  TrainingState state;
  TrainLog log;
};

/// Adam over all parameters on batches of a seeded per-epoch shuffle. Deterministic for a
/// given seed. Throws DivergenceError when a loss becomes non-finite.
TrainResult train(const TrainData& data, const WeightSet& weights, const TrainConfig& config,
                  const TrainOptions& options = {});

/// Records outside config.partitions are ignored; weights are derived from the rest unless the
/// config names a weights file.
TrainResult train(std::span<const ImageRecord> records, const std::filesystem::path& image_root,
                  const MaskSource& masks, const TrainConfig& config, const TrainOptions& options = {});

/// One score per (record, requirement).
struct ScoreEntry {
  std::string image_id;
  RequirementId requirement = RequirementId::EyesClosed;
  double score = 0.0;
  bool operator==(const ScoreEntry&) const = default;
};

std::vector<ScoreEntry> score_records(const SegClsModel& model, std::span<const ImageRecord> records,
                                      const std::filesystem::path& image_root);

/// NDJSON lines {"image_id", "requirement" (short name), "score"}.
void write_scores(const std::filesystem::path& path, std::span<const ScoreEntry> scores);
std::vector<ScoreEntry> read_scores(const std::filesystem::path& path);

/// Joins scores with ground-truth labels; gates come from the labels and `rules`. Throws
/// DataError for scores of unknown images and for duplicate (image, requirement) pairs.
std::vector<ScoredSample> join_scores(std::span<const ImageRecord> records, std::span<const ScoreEntry> scores,
                                      const RuleSet& rules);

EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, std::span<const ImageRecord> records,
                               const std::filesystem::path& image_root, const RuleSet& rules = RuleSet::defaults(),
                               const EvalOptions& options = {});

}  // namespace icao
