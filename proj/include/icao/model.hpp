// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "icao/records.hpp"
#include "icao/tensor.hpp"

namespace icao {

/// Smallest accepted input height/width.
inline constexpr int kMinInputSize = 16;

/// Named slice of a flat parameter vector.
struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Shared feature extractor. Parameters live in the model's flat vector; an encoder only
/// declares their shapes and reads/writes the slice it is handed.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual std::string kind() const = 0;
  virtual int channels() const = 0;
  /// Output resolution is ceil(H / stride) x ceil(W / stride).
  virtual int stride() const = 0;
  virtual std::vector<ParamEntry> param_shapes() const = 0;
  virtual void init(std::span<double> params, std::uint64_t seed) const = 0;

  /// `trace`, when non-null, receives whatever backward() needs.
  virtual Tensor3 forward(std::span<const double> params, const Tensor3& x, std::vector<Tensor3>* trace) const = 0;
  /// Accumulates d(loss)/d(params) into `grad`.
  virtual void backward(std::span<const double> params, const std::vector<Tensor3>& trace, const Tensor3& d_out,
                        std::span<double> grad) const = 0;
};

/// Stack of 3x3 stride-2 convolutions (padding 1) with ReLU; stride = 2^layers.
class TinyConvEncoder final : public Encoder {
 public:
  explicit TinyConvEncoder(std::vector<int> channels = {8, 16});

  std::string kind() const override { return "tiny"; }
  int channels() const override { return channels_.back(); }
  int stride() const override { return 1 << channels_.size(); }
  std::vector<ParamEntry> param_shapes() const override;
  void init(std::span<double> params, std::uint64_t seed) const override;
  Tensor3 forward(std::span<const double> params, const Tensor3& x, std::vector<Tensor3>* trace) const override;
  void backward(std::span<const double> params, const std::vector<Tensor3>& trace, const Tensor3& d_out,
                std::span<double> grad) const override;

 private:
  std::vector<int> channels_;
};

/// Adapter for a pretrained feature extractor supplied as a callable. It has no parameters of
/// its own and is frozen: backward() propagates nothing into it.
class ExternalEncoder final : public Encoder {
 public:
  using Fn = std::function<Tensor3(const Tensor3&)>;
  ExternalEncoder(std::string name, int channels, int stride, Fn fn);

  std::string kind() const override { return "external:" + name_; }
  int channels() const override { return channels_; }
  int stride() const override { return stride_; }
  std::vector<ParamEntry> param_shapes() const override { return {}; }
  void init(std::span<double>, std::uint64_t) const override {}
  Tensor3 forward(std::span<const double> params, const Tensor3& x, std::vector<Tensor3>* trace) const override;
  void backward(std::span<const double>, const std::vector<Tensor3>&, const Tensor3&, std::span<double>) const override {}

 private:
  std::string name_;
  int channels_;
  int stride_;
  Fn fn_;
};

struct ModelConfig {
  std::string encoder = "tiny";             // "tiny" or "external:<name>"
  std::vector<int> encoder_channels{8, 16};  // tiny encoder widths
  int input_height = 64;                     // training/scoring resample size
  int input_width = 64;
  int aspp_channels = 16;
  std::vector<int> dilation_rates{6, 12, 18};
  int reduction_ratio = 16;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stddev{0.25, 0.25, 0.25};
  bool mask_normalized_pooling = false;
  bool mask_gradient = false;  // let the classification loss reach the segmentation branch

  /// Throws ConfigError on invalid values.
  void validate() const;
  std::string to_json() const;
  /// Unknown keys are rejected; missing keys keep their defaults.
  static ModelConfig from_json(std::string_view text);
  bool operator==(const ModelConfig&) const = default;
};

enum class SeMode {
  Learned,
  Open,  // gates fixed at 1
};

struct ForwardOptions {
  /// Replaces the sigmoid mask probabilities seen by the classification path (8 x h x w).
  const Tensor3* mask_probs = nullptr;
  /// Regions whose mask probabilities are forced to zero in the classification path.
  std::set<Region> zero_masks;
  SeMode se_mode = SeMode::Learned;
};

struct ModelOutput {
  Tensor3 seg_logits;                                    // 8 x H x W
  std::array<double, kRequirementCount> cls_logits{};
  std::vector<std::vector<double>> region_features;     // 8 x C
  std::vector<double> attended;                         // 8C, after channel attention
  std::vector<double> gates;                            // 8C

  std::array<double, kRequirementCount> cls_scores() const;
};

/// Activations kept by a training forward pass.
struct ForwardTrace {
  Tensor3 input;  // normalized
  std::vector<Tensor3> encoder;
  Tensor3 features;
  Tensor3 aspp;                   // concatenated ASPP branch outputs after ReLU
  Tensor3 context;                // ASPP projection after ReLU
  Tensor3 low_logits;             // 8 x h x w
  Tensor3 mask_probs;             // as consumed by the classification path
  std::array<bool, kRegionCount> mask_live{};  // mask row is sigmoid(low_logits)
  std::vector<double> pooled;     // global average of features
  std::vector<double> concat;     // 8C
  std::vector<double> mask_sums;  // per region, for normalized pooling
  std::vector<double> se_hidden;  // pre-activation
  std::vector<double> gates;
  std::vector<double> attended;
  SeMode se_mode = SeMode::Learned;
};

/// Dual-branch network: encoder features feed a dilated-context segmentation head (8 region
/// logits upsampled to input size) and a classification path of mask-weighted pooling,
/// squeeze-and-excitation gating and a linear layer to 26 logits.
class SegClsModel {
 public:
  /// Builds a model whose encoder is constructed from `config`.
  SegClsModel(ModelConfig config, std::uint64_t seed);
  SegClsModel(ModelConfig config, std::shared_ptr<const Encoder> encoder, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const Encoder& encoder() const noexcept { return *encoder_; }
  int feature_channels() const noexcept { return encoder_->channels(); }
  int se_hidden() const noexcept { return se_hidden_; }

  std::vector<double>& parameters() noexcept { return params_; }
  const std::vector<double>& parameters() const noexcept { return params_; }
  const std::vector<ParamEntry>& layout() const noexcept { return layout_; }
  const ParamEntry& entry(std::string_view name) const;
  std::span<double> slice(std::string_view name);
  /// Parameters of the classification path (channel attention and FC head).
  bool is_classifier_param(std::size_t index) const noexcept { return index >= cls_begin_; }

  /// Feature-map size for an input of the given size.
  std::pair<int, int> feature_size(int height, int width) const noexcept;

  /// `image` is 3 x H x W in [0,1]. Throws ShapeError for wrong channels or sides below
  /// kMinInputSize and DataError for non-finite or out-of-range pixels.
  ModelOutput forward(const Tensor3& image, const ForwardOptions& options = {}) const;
  ModelOutput forward(const Tensor3& image, ForwardTrace& trace, const ForwardOptions& options = {}) const;

  /// Accumulates d(loss)/d(params) into `grad` given the loss gradients w.r.t. seg logits
  /// (may be null) and cls logits (may be empty).
  void backward(const ForwardTrace& trace, const Tensor3* d_seg_logits, std::span<const double> d_cls_logits,
                std::span<double> grad) const;

  /// Channel attention alone: z * sigmoid(W2 relu(W1 z + b1) + b2).
  std::vector<double> channel_attention(std::span<const double> z, std::vector<double>* gates = nullptr) const;
  /// Test mode: W2 = 0, b2 = 20 so every gate is sigmoid(20).
  void saturate_se_gates();

  /// Operating thresholds stored with the model (usually the last evaluation's EER points).
  const std::optional<std::array<double, kRequirementCount>>& thresholds() const noexcept { return thresholds_; }
  void set_thresholds(std::optional<std::array<double, kRequirementCount>> t);

 private:
  void build_layout();

  ModelConfig config_;
  std::shared_ptr<const Encoder> encoder_;
  std::vector<double> params_;
  std::vector<ParamEntry> layout_;
  std::size_t cls_begin_ = 0;
  int se_hidden_ = 1;
  std::optional<std::array<double, kRequirementCount>> thresholds_;
};

/// Mask-weighted spatial average of `features` (C x h x w) with one h x w map:
/// (1/hw) sum_p F[c,p] * m[p], or sum_p F[c,p] m[p] / (sum_p m[p] + 1e-6) when `normalized`.
/// Throws ShapeError when the map resolution differs from the features'.
std::vector<double> mssam(const Tensor3& features, const Tensor3& mask, bool normalized = false);

/// The encoder named by `config`; "external:*" encoders must be supplied by the caller.
std::shared_ptr<const Encoder> make_encoder(const ModelConfig& config);

enum class Verdict : std::uint8_t { Compliant, NonCompliant };

struct Decision {
  Verdict verdict = Verdict::Compliant;
  std::optional<std::string> reason;
  bool operator==(const Decision&) const = default;
};

using DecisionMap = std::map<RequirementId, Decision>;
using ThresholdVector = std::array<double, kRequirementCount>;

/// Throws ConfigError unless every threshold lies in (0,1).
void validate_thresholds(const ThresholdVector& thresholds);

/// NonCompliant iff score >= threshold.
DecisionMap decide(const ScoreVector& scores, const ThresholdVector& thresholds);

struct Prediction {
  ScoreVector scores;
  DecisionMap decisions;
};

/// Scores an image and applies `thresholds`, falling back to the model's stored thresholds.
/// Throws ConfigError when neither is available.
Prediction predict_compliance(const SegClsModel& model, const Tensor3& image,
                              const ThresholdVector* thresholds = nullptr);

}  // namespace icao
