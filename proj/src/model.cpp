// SPDX-License-Identifier: Apache-2.0
#include "icao/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "icao/errors.hpp"
#include "icao/rng.hpp"

namespace icao {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// 2-D convolution over a flat parameter block: weights [out][in][k][k] at `w`, bias [out] at `b`.
struct Conv {
  int in = 0, out = 0, k = 1, stride = 1, pad = 0, dil = 1;
  std::size_t w = 0, b = 0;

  int out_size(int n) const { return (n + 2 * pad - dil * (k - 1) - 1) / stride + 1; }
  std::size_t weight_count() const { return static_cast<std::size_t>(out) * in * k * k; }

  // Output columns ox whose input column ox*stride - pad + kx*dil falls inside [0, n).
  std::pair<int, int> valid(int kx, int n, int on) const {
    const int shift = kx * dil - pad;
    const int lo = std::max(0, floor_div(-shift + stride - 1, stride));
    const int hi = std::min(on, floor_div(n - 1 - shift, stride) + 1);
    return {lo, hi};
  }

  Tensor3 forward(const double* p, const Tensor3& x) const {
    const int oh = out_size(x.height), ow = out_size(x.width);
    Tensor3 y(out, oh, ow);
    for (int o = 0; o < out; ++o) {
      double* yo = &y.data[static_cast<std::size_t>(o) * oh * ow];
      std::fill(yo, yo + static_cast<std::size_t>(oh) * ow, p[b + o]);
      for (int i = 0; i < in; ++i) {
        const double* xi = &x.data[i * x.plane()];
        for (int ky = 0; ky < k; ++ky) {
          const auto [ylo, yhi] = valid(ky, x.height, oh);
          for (int kx = 0; kx < k; ++kx) {
            const auto [xlo, xhi] = valid(kx, x.width, ow);
            const double wv = p[w + ((static_cast<std::size_t>(o) * in + i) * k + ky) * k + kx];
            for (int oy = ylo; oy < yhi; ++oy) {
              const double* row = xi + static_cast<std::size_t>(oy * stride - pad + ky * dil) * x.width;
              double* yrow = yo + static_cast<std::size_t>(oy) * ow;
              for (int ox = xlo; ox < xhi; ++ox) yrow[ox] += wv * row[ox * stride - pad + kx * dil];
            }
          }
        }
      }
    }
    return y;
  }

  // dy has the forward output's shape. Accumulates into grad; dx (if non-null) is overwritten.
  void backward(const double* p, const Tensor3& x, const Tensor3& dy, double* grad, Tensor3* dx) const {
    const int oh = dy.height, ow = dy.width;
    if (dx) *dx = Tensor3(in, x.height, x.width);
    for (int o = 0; o < out; ++o) {
      const double* dyo = &dy.data[static_cast<std::size_t>(o) * oh * ow];
      double db = 0.0;
      for (std::size_t q = 0; q < static_cast<std::size_t>(oh) * ow; ++q) db += dyo[q];
      grad[b + o] += db;
      for (int i = 0; i < in; ++i) {
        const double* xi = &x.data[i * x.plane()];
        double* dxi = dx ? &dx->data[i * x.plane()] : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          const auto [ylo, yhi] = valid(ky, x.height, oh);
          for (int kx = 0; kx < k; ++kx) {
            const auto [xlo, xhi] = valid(kx, x.width, ow);
            const std::size_t wi = w + ((static_cast<std::size_t>(o) * in + i) * k + ky) * k + kx;
            const double wv = p[wi];
            double dw = 0.0;
            for (int oy = ylo; oy < yhi; ++oy) {
              const std::size_t off = static_cast<std::size_t>(oy * stride - pad + ky * dil) * x.width;
              const double* dyrow = dyo + static_cast<std::size_t>(oy) * ow;
              for (int ox = xlo; ox < xhi; ++ox) {
                const std::size_t xi_idx = off + ox * stride - pad + kx * dil;
                dw += dyrow[ox] * xi[xi_idx];
                if (dxi) dxi[xi_idx] += wv * dyrow[ox];
              }
            }
            grad[wi] += dw;
          }
        }
      }
    }
  }
};

void relu_inplace(Tensor3& t) {
  for (double& v : t.data) v = std::max(0.0, v);
}

// Zeroes gradient entries where the (post-ReLU) activation is not positive.
void relu_backward(const Tensor3& activation, Tensor3& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (activation.data[i] <= 0.0) grad.data[i] = 0.0;
  }
}

struct Tap {
  int i0, i1;
  double w1;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    t[o] = {i0, std::min(i0 + 1, in - 1), src - i0};
  }
  return t;
}

Tensor3 upsample(const Tensor3& x, int height, int width) {
  const auto ty = taps(x.height, height), tx = taps(x.width, width);
  Tensor3 y(x.channels, height, width);
  for (int c = 0; c < x.channels; ++c)
    for (int oy = 0; oy < height; ++oy) {
      const Tap& a = ty[oy];
      for (int ox = 0; ox < width; ++ox) {
        const Tap& b = tx[ox];
        const double top = x.at(c, a.i0, b.i0) * (1 - b.w1) + x.at(c, a.i0, b.i1) * b.w1;
        const double bot = x.at(c, a.i1, b.i0) * (1 - b.w1) + x.at(c, a.i1, b.i1) * b.w1;
        y.at(c, oy, ox) = top * (1 - a.w1) + bot * a.w1;
      }
    }
  return y;
}

Tensor3 upsample_backward(const Tensor3& dy, int height, int width) {
  const auto ty = taps(height, dy.height), tx = taps(width, dy.width);
  Tensor3 dx(dy.channels, height, width);
  for (int c = 0; c < dy.channels; ++c)
    for (int oy = 0; oy < dy.height; ++oy) {
      const Tap& a = ty[oy];
      for (int ox = 0; ox < dy.width; ++ox) {
        const Tap& b = tx[ox];
        const double g = dy.at(c, oy, ox);
        dx.at(c, a.i0, b.i0) += g * (1 - a.w1) * (1 - b.w1);
        dx.at(c, a.i0, b.i1) += g * (1 - a.w1) * b.w1;
        dx.at(c, a.i1, b.i0) += g * a.w1 * (1 - b.w1);
        dx.at(c, a.i1, b.i1) += g * a.w1 * b.w1;
      }
    }
  return dx;
}

constexpr double kMaskNormEps = 1e-6;

void fill_normal(std::span<double> dst, Rng& rng, double stddev) {
  for (double& v : dst) v = rng.normal() * stddev;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Encoders

TinyConvEncoder::TinyConvEncoder(std::vector<int> channels) : channels_(std::move(channels)) {
  if (channels_.empty()) throw ConfigError("tiny encoder needs at least one layer");
  for (int c : channels_) {
    if (c <= 0) throw ConfigError("tiny encoder widths must be positive");
  }
}

std::vector<ParamEntry> TinyConvEncoder::param_shapes() const {
  std::vector<ParamEntry> out;
  int in = 3;
  for (std::size_t l = 0; l < channels_.size(); ++l) {
    const int o = channels_[l];
    out.push_back({"conv" + std::to_string(l) + ".weight", {o, in, 3, 3}, 0, static_cast<std::size_t>(o) * in * 9});
    out.push_back({"conv" + std::to_string(l) + ".bias", {o}, 0, static_cast<std::size_t>(o)});
    in = o;
  }
  return out;
}

void TinyConvEncoder::init(std::span<double> params, std::uint64_t seed) const {
  Rng rng(seed, 0xe1c);
  std::size_t off = 0;
  int in = 3;
  for (int o : channels_) {
    const std::size_t n = static_cast<std::size_t>(o) * in * 9;
    fill_normal(params.subspan(off, n), rng, std::sqrt(2.0 / (in * 9)));
    off += n;
    std::fill_n(params.begin() + off, o, 0.0);
    off += o;
    in = o;
  }
}

Tensor3 TinyConvEncoder::forward(std::span<const double> params, const Tensor3& x, std::vector<Tensor3>* trace) const {
  if (trace) {
    trace->clear();
    trace->push_back(x);
  }
  Tensor3 cur = x;
  std::size_t off = 0;
  int in = 3;
  for (int o : channels_) {
    Conv conv{in, o, 3, 2, 1, 1, off, off + static_cast<std::size_t>(o) * in * 9};
    cur = conv.forward(params.data(), cur);
    relu_inplace(cur);
    if (trace) trace->push_back(cur);
    off = conv.b + o;
    in = o;
  }
  return cur;
}

void TinyConvEncoder::backward(std::span<const double> params, const std::vector<Tensor3>& trace,
                               const Tensor3& d_out, std::span<double> grad) const {
  std::vector<Conv> convs;
  std::size_t off = 0;
  int in = 3;
  for (int o : channels_) {
    convs.push_back({in, o, 3, 2, 1, 1, off, off + static_cast<std::size_t>(o) * in * 9});
    off = convs.back().b + o;
    in = o;
  }
  Tensor3 dy = d_out;
  for (std::size_t l = convs.size(); l-- > 0;) {
    relu_backward(trace[l + 1], dy);
    Tensor3 dx;
    convs[l].backward(params.data(), trace[l], dy, grad.data(), l > 0 ? &dx : nullptr);
    dy = std::move(dx);
  }
}

ExternalEncoder::ExternalEncoder(std::string name, int channels, int stride, Fn fn)
    : name_(std::move(name)), channels_(channels), stride_(stride), fn_(std::move(fn)) {
  if (channels_ <= 0 || stride_ <= 0 || !fn_) throw ConfigError("external encoder: invalid declaration");
}

Tensor3 ExternalEncoder::forward(std::span<const double>, const Tensor3& x, std::vector<Tensor3>* trace) const {
  Tensor3 y = fn_(x);
  const int h = (x.height + stride_ - 1) / stride_, w = (x.width + stride_ - 1) / stride_;
  if (y.channels != channels_ || y.height != h || y.width != w) {
    throw ShapeError("external encoder '" + name_ + "' returned an unexpected feature shape");
  }
  if (trace) trace->clear();
  return y;
}

std::shared_ptr<const Encoder> make_encoder(const ModelConfig& config) {
  if (config.encoder == "tiny") return std::make_shared<TinyConvEncoder>(config.encoder_channels);
  if (config.encoder.rfind("external:", 0) == 0) {
    throw ConfigError("encoder '" + config.encoder + "' must be supplied by the caller");
  }
  throw ConfigError("unknown encoder '" + config.encoder + "'");
}

// ---------------------------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (encoder != "tiny" && encoder.rfind("external:", 0) != 0) throw ConfigError("unknown encoder '" + encoder + "'");
  if (encoder == "tiny") {
    if (encoder_channels.empty()) throw ConfigError("encoder_channels must not be empty");
    for (int c : encoder_channels)
      if (c <= 0) throw ConfigError("encoder_channels must be positive");
  }
  if (input_height < kMinInputSize || input_width < kMinInputSize) {
    throw ConfigError("input size must be at least " + std::to_string(kMinInputSize));
  }
  if (aspp_channels <= 0) throw ConfigError("aspp_channels must be positive");
  if (dilation_rates.empty()) throw ConfigError("dilation_rates must not be empty");
  for (int r : dilation_rates)
    if (r <= 0) throw ConfigError("dilation rates must be positive");
  if (reduction_ratio <= 0) throw ConfigError("reduction_ratio must be positive");
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(mean[c]) || !std::isfinite(stddev[c]) || stddev[c] <= 0) {
      throw ConfigError("normalization statistics must be finite with positive stddev");
    }
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["encoder"] = encoder;
  j["encoder_channels"] = encoder_channels;
  j["input_size"] = {input_height, input_width};
  j["aspp_channels"] = aspp_channels;
  j["dilation_rates"] = dilation_rates;
  j["reduction_ratio"] = reduction_ratio;
  j["mean"] = mean;
  j["stddev"] = stddev;
  j["mask_normalized_pooling"] = mask_normalized_pooling;
  j["mask_gradient"] = mask_gradient;
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ConfigError("model config must be an object");
    for (const auto& [k, v] : j.items()) {
      if (k == "encoder") c.encoder = v.get<std::string>();
      else if (k == "encoder_channels") c.encoder_channels = v.get<std::vector<int>>();
      else if (k == "input_size") {
        const auto s = v.get<std::vector<int>>();
        if (s.size() != 2) throw ConfigError("input_size must be [height, width]");
        c.input_height = s[0];
        c.input_width = s[1];
      } else if (k == "aspp_channels") c.aspp_channels = v.get<int>();
      else if (k == "dilation_rates") c.dilation_rates = v.get<std::vector<int>>();
      else if (k == "reduction_ratio") c.reduction_ratio = v.get<int>();
      else if (k == "mean") c.mean = v.get<std::array<double, 3>>();
      else if (k == "stddev") c.stddev = v.get<std::array<double, 3>>();
      else if (k == "mask_normalized_pooling") c.mask_normalized_pooling = v.get<bool>();
      else if (k == "mask_gradient") c.mask_gradient = v.get<bool>();
      else throw ConfigError("model config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------------------------
// Model

SegClsModel::SegClsModel(ModelConfig config, std::uint64_t seed)
    : SegClsModel(config, make_encoder(config), seed) {}

SegClsModel::SegClsModel(ModelConfig config, std::shared_ptr<const Encoder> encoder, std::uint64_t seed)
    : config_(std::move(config)), encoder_(std::move(encoder)) {
  config_.validate();
  if (!encoder_) throw ConfigError("model needs an encoder");
  if (config_.encoder != encoder_->kind()) {
    throw ConfigError("config names encoder '" + config_.encoder + "' but '" + encoder_->kind() + "' was supplied");
  }
  build_layout();

  const std::size_t enc_size = entry("aspp.conv1x1.weight").offset;
  encoder_->init(std::span<double>(params_.data(), enc_size), seed);

  Rng rng(seed, 0x5e9c15);
  for (const auto& e : layout_) {
    if (e.offset < enc_size) continue;
    auto dst = std::span<double>(params_.data() + e.offset, e.size);
    if (e.shape.size() == 1) {
      std::fill(dst.begin(), dst.end(), 0.0);
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < e.shape.size(); ++d) fan_in *= e.shape[d];
    const bool linear_out = e.name == "seg.weight" || e.name == "fc.weight" || e.name == "se.fc2.weight";
    fill_normal(dst, rng, std::sqrt((linear_out ? 1.0 : 2.0) / static_cast<double>(fan_in)));
  }
}

void SegClsModel::build_layout() {
  layout_.clear();
  std::size_t off = 0;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    layout_.push_back({std::move(name), std::move(shape), off, n});
    off += n;
  };
  for (auto& e : encoder_->param_shapes()) add("encoder." + e.name, e.shape);
  const int C = encoder_->channels(), A = config_.aspp_channels;
  const int R = static_cast<int>(config_.dilation_rates.size());
  add("aspp.conv1x1.weight", {A, C, 1, 1});
  add("aspp.conv1x1.bias", {A});
  for (int r = 0; r < R; ++r) {
    add("aspp.dilated" + std::to_string(r) + ".weight", {A, C, 3, 3});
    add("aspp.dilated" + std::to_string(r) + ".bias", {A});
  }
  add("aspp.pool.weight", {A, C});
  add("aspp.pool.bias", {A});
  add("aspp.project.weight", {A, (R + 2) * A, 1, 1});
  add("aspp.project.bias", {A});
  add("seg.weight", {kRegionCount, A, 1, 1});
  add("seg.bias", {kRegionCount});
  cls_begin_ = off;
  const int D = kRegionCount * C;
  se_hidden_ = std::max(1, D / config_.reduction_ratio);
  add("se.fc1.weight", {se_hidden_, D});
  add("se.fc1.bias", {se_hidden_});
  add("se.fc2.weight", {D, se_hidden_});
  add("se.fc2.bias", {D});
  add("fc.weight", {kRequirementCount, D});
  add("fc.bias", {kRequirementCount});
  params_.assign(off, 0.0);
}

const ParamEntry& SegClsModel::entry(std::string_view name) const {
  for (const auto& e : layout_) {
    if (e.name == name) return e;
  }
  throw std::out_of_range("no parameter named " + std::string(name));
}

std::span<double> SegClsModel::slice(std::string_view name) {
  const auto& e = entry(name);
  return {params_.data() + e.offset, e.size};
}

std::pair<int, int> SegClsModel::feature_size(int height, int width) const noexcept {
  const int s = encoder_->stride();
  return {(height + s - 1) / s, (width + s - 1) / s};
}

std::array<double, kRequirementCount> ModelOutput::cls_scores() const {
  std::array<double, kRequirementCount> s{};
  for (int r = 0; r < kRequirementCount; ++r) s[r] = sigmoid(cls_logits[r]);
  return s;
}

std::vector<double> SegClsModel::channel_attention(std::span<const double> z, std::vector<double>* gates) const {
  const std::size_t D = static_cast<std::size_t>(kRegionCount) * feature_channels();
  if (z.size() != D) throw ShapeError("channel_attention: expected " + std::to_string(D) + " inputs");
  const double* w1 = &params_[entry("se.fc1.weight").offset];
  const double* b1 = &params_[entry("se.fc1.bias").offset];
  const double* w2 = &params_[entry("se.fc2.weight").offset];
  const double* b2 = &params_[entry("se.fc2.bias").offset];
  std::vector<double> hidden(se_hidden_);
  for (int k = 0; k < se_hidden_; ++k) {
    double a = b1[k];
    for (std::size_t i = 0; i < D; ++i) a += w1[k * D + i] * z[i];
    hidden[k] = std::max(0.0, a);
  }
  std::vector<double> s(D), out(D);
  for (std::size_t i = 0; i < D; ++i) {
    double a = b2[i];
    for (int k = 0; k < se_hidden_; ++k) a += w2[i * se_hidden_ + k] * hidden[k];
    s[i] = sigmoid(a);
    out[i] = z[i] * s[i];
  }
  if (gates) *gates = std::move(s);
  return out;
}

void SegClsModel::saturate_se_gates() {
  auto w2 = slice("se.fc2.weight");
  std::fill(w2.begin(), w2.end(), 0.0);
  auto b2 = slice("se.fc2.bias");
  std::fill(b2.begin(), b2.end(), 20.0);
}

void SegClsModel::set_thresholds(std::optional<std::array<double, kRequirementCount>> t) {
  if (t) validate_thresholds(*t);
  thresholds_ = t;
}

ModelOutput SegClsModel::forward(const Tensor3& image, const ForwardOptions& options) const {
  ForwardTrace trace;
  return forward(image, trace, options);
}

ModelOutput SegClsModel::forward(const Tensor3& image, ForwardTrace& t, const ForwardOptions& options) const {
  if (image.channels != 3 || image.data.size() != static_cast<std::size_t>(3) * image.height * image.width) {
    throw ShapeError("model input must be 3 x H x W");
  }
  if (image.height < kMinInputSize || image.width < kMinInputSize) {
    throw ShapeError("model input " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is below the minimum " + std::to_string(kMinInputSize));
  }
  const int H = image.height, W = image.width;
  t.input = Tensor3(3, H, W);
  for (int c = 0; c < 3; ++c) {
    const auto src = image.channel(c);
    auto dst = t.input.channel(c);
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!std::isfinite(src[i]) || src[i] < 0.0 || src[i] > 1.0) throw DataError("model input outside [0,1]");
      dst[i] = (src[i] - config_.mean[c]) / config_.stddev[c];
    }
  }

  const double* p = params_.data();
  const std::size_t enc_size = entry("aspp.conv1x1.weight").offset;
  t.features = encoder_->forward(std::span<const double>(p, enc_size), t.input, &t.encoder);
  const Tensor3& F = t.features;
  const auto [h, w] = feature_size(H, W);
  const int C = feature_channels();
  if (F.channels != C || F.height != h || F.width != w) throw ShapeError("encoder output shape mismatch");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const int A = config_.aspp_channels;
  const int R = static_cast<int>(config_.dilation_rates.size());
  const int nb = R + 2;

  // Context aggregation: 1x1, dilated 3x3 per rate, image pooling; concatenated then projected.
  t.aspp = Tensor3(nb * A, h, w);
  auto put_branch = [&](int b, const Tensor3& y) {
    std::copy(y.data.begin(), y.data.end(), t.aspp.data.begin() + static_cast<std::size_t>(b) * A * hw);
  };
  {
    Conv c{C, A, 1, 1, 0, 1, entry("aspp.conv1x1.weight").offset, entry("aspp.conv1x1.bias").offset};
    put_branch(0, c.forward(p, F));
  }
  for (int r = 0; r < R; ++r) {
    const int rate = config_.dilation_rates[r];
    const std::string n = "aspp.dilated" + std::to_string(r);
    Conv c{C, A, 3, 1, rate, rate, entry(n + ".weight").offset, entry(n + ".bias").offset};
    put_branch(1 + r, c.forward(p, F));
  }
  t.pooled.assign(C, 0.0);
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (double v : F.channel(c)) s += v;
    t.pooled[c] = s / static_cast<double>(hw);
  }
  {
    const double* pw = p + entry("aspp.pool.weight").offset;
    const double* pb = p + entry("aspp.pool.bias").offset;
    for (int a = 0; a < A; ++a) {
      double v = pb[a];
      for (int c = 0; c < C; ++c) v += pw[a * C + c] * t.pooled[c];
      auto dst = t.aspp.channel((nb - 1) * A + a);
      std::fill(dst.begin(), dst.end(), v);
    }
  }
  relu_inplace(t.aspp);
  Conv project{nb * A, A, 1, 1, 0, 1, entry("aspp.project.weight").offset, entry("aspp.project.bias").offset};
  t.context = project.forward(p, t.aspp);
  relu_inplace(t.context);
  Conv seg{A, kRegionCount, 1, 1, 0, 1, entry("seg.weight").offset, entry("seg.bias").offset};
  t.low_logits = seg.forward(p, t.context);

  ModelOutput out;
  out.seg_logits = upsample(t.low_logits, H, W);

  // Mask probabilities at feature resolution.
  if (options.mask_probs) {
    const Tensor3& m = *options.mask_probs;
    if (m.channels != kRegionCount || m.height != h || m.width != w) {
      throw ShapeError("mask override must be 8 x " + std::to_string(h) + " x " + std::to_string(w));
    }
    t.mask_probs = m;
    t.mask_live.fill(false);
  } else {
    t.mask_probs = Tensor3(kRegionCount, h, w);
    for (std::size_t i = 0; i < t.low_logits.data.size(); ++i) t.mask_probs.data[i] = sigmoid(t.low_logits.data[i]);
    t.mask_live.fill(true);
  }
  for (Region r : options.zero_masks) {
    auto row = t.mask_probs.channel(static_cast<int>(slot_of(r)));
    std::fill(row.begin(), row.end(), 0.0);
    t.mask_live[slot_of(r)] = false;
  }

  // Mask-specific spatial attention.
  const std::size_t D = static_cast<std::size_t>(kRegionCount) * C;
  t.concat.assign(D, 0.0);
  t.mask_sums.assign(kRegionCount, 0.0);
  out.region_features.assign(kRegionCount, std::vector<double>(C, 0.0));
  for (int m = 0; m < kRegionCount; ++m) {
    const auto P = t.mask_probs.channel(m);
    double q = 0.0;
    for (double v : P) q += v;
    t.mask_sums[m] = q;
    const double denom = config_.mask_normalized_pooling ? q + kMaskNormEps : static_cast<double>(hw);
    for (int c = 0; c < C; ++c) {
      const auto f = F.channel(c);
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += f[i] * P[i];
      out.region_features[m][c] = t.concat[m * C + c] = s / denom;
    }
  }

  t.se_mode = options.se_mode;
  if (options.se_mode == SeMode::Learned) {
    const double* w1 = p + entry("se.fc1.weight").offset;
    const double* b1 = p + entry("se.fc1.bias").offset;
    t.se_hidden.assign(se_hidden_, 0.0);
    for (int k = 0; k < se_hidden_; ++k) {
      double a = b1[k];
      for (std::size_t i = 0; i < D; ++i) a += w1[k * D + i] * t.concat[i];
      t.se_hidden[k] = a;
    }
    const double* w2 = p + entry("se.fc2.weight").offset;
    const double* b2 = p + entry("se.fc2.bias").offset;
    t.gates.assign(D, 0.0);
    for (std::size_t i = 0; i < D; ++i) {
      double a = b2[i];
      for (int k = 0; k < se_hidden_; ++k) a += w2[i * se_hidden_ + k] * std::max(0.0, t.se_hidden[k]);
      t.gates[i] = sigmoid(a);
    }
  } else {
    t.se_hidden.clear();
    t.gates.assign(D, 1.0);
  }
  t.attended.resize(D);
  for (std::size_t i = 0; i < D; ++i) t.attended[i] = t.concat[i] * t.gates[i];

  const double* fw = p + entry("fc.weight").offset;
  const double* fb = p + entry("fc.bias").offset;
  for (int j = 0; j < kRequirementCount; ++j) {
    double a = fb[j];
    for (std::size_t i = 0; i < D; ++i) a += fw[j * D + i] * t.attended[i];
    out.cls_logits[j] = a;
  }
  out.attended = t.attended;
  out.gates = t.gates;
  return out;
}

void SegClsModel::backward(const ForwardTrace& t, const Tensor3* d_seg_logits, std::span<const double> d_cls,
                           std::span<double> grad) const {
  if (grad.size() != params_.size()) throw ShapeError("gradient buffer size mismatch");
  const Tensor3& F = t.features;
  const int C = F.channels, h = F.height, w = F.width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const std::size_t D = static_cast<std::size_t>(kRegionCount) * C;
  const int A = config_.aspp_channels;
  const int R = static_cast<int>(config_.dilation_rates.size());
  const int nb = R + 2;
  const double* p = params_.data();
  double* g = grad.data();

  Tensor3 dF(C, h, w);
  Tensor3 d_low(kRegionCount, h, w);
  bool seg_path = false;

  if (!d_cls.empty()) {
    if (d_cls.size() != static_cast<std::size_t>(kRequirementCount)) throw ShapeError("cls gradient must have 26 entries");
    const std::size_t fw = entry("fc.weight").offset, fb = entry("fc.bias").offset;
    std::vector<double> d_att(D, 0.0);
    for (int j = 0; j < kRequirementCount; ++j) {
      const double dj = d_cls[j];
      if (dj == 0.0) continue;
      g[fb + j] += dj;
      for (std::size_t i = 0; i < D; ++i) {
        g[fw + j * D + i] += dj * t.attended[i];
        d_att[i] += dj * p[fw + j * D + i];
      }
    }

    std::vector<double> d_z(D);
    if (t.se_mode == SeMode::Learned) {
      const std::size_t w1 = entry("se.fc1.weight").offset, b1 = entry("se.fc1.bias").offset;
      const std::size_t w2 = entry("se.fc2.weight").offset, b2 = entry("se.fc2.bias").offset;
      std::vector<double> d_h(se_hidden_, 0.0);
      for (std::size_t i = 0; i < D; ++i) {
        const double s = t.gates[i];
        d_z[i] = d_att[i] * s;
        const double d_a2 = d_att[i] * t.concat[i] * s * (1.0 - s);
        g[b2 + i] += d_a2;
        for (int k = 0; k < se_hidden_; ++k) {
          g[w2 + i * se_hidden_ + k] += d_a2 * std::max(0.0, t.se_hidden[k]);
          d_h[k] += p[w2 + i * se_hidden_ + k] * d_a2;
        }
      }
      for (int k = 0; k < se_hidden_; ++k) {
        if (t.se_hidden[k] <= 0.0) continue;
        const double d_a1 = d_h[k];
        g[b1 + k] += d_a1;
        for (std::size_t i = 0; i < D; ++i) {
          g[w1 + k * D + i] += d_a1 * t.concat[i];
          d_z[i] += p[w1 + k * D + i] * d_a1;
        }
      }
    } else {
      d_z = d_att;
    }

    for (int m = 0; m < kRegionCount; ++m) {
      const auto P = t.mask_probs.channel(m);
      const double denom = config_.mask_normalized_pooling ? t.mask_sums[m] + kMaskNormEps : static_cast<double>(hw);
      const bool want_dp = config_.mask_gradient && t.mask_live[m];
      auto dl = d_low.channel(m);
      for (int c = 0; c < C; ++c) {
        const double gz = d_z[m * C + c] / denom;
        if (gz == 0.0) continue;
        auto df = dF.channel(c);
        const auto f = F.channel(c);
        const double r = t.concat[m * C + c];
        for (std::size_t i = 0; i < hw; ++i) {
          df[i] += gz * P[i];
          if (want_dp) {
            const double dp = config_.mask_normalized_pooling ? gz * (f[i] - r) : gz * f[i];
            dl[i] += dp * P[i] * (1.0 - P[i]);
          }
        }
      }
      if (want_dp) seg_path = true;
    }
  }

  if (d_seg_logits) {
    if (d_seg_logits->channels != kRegionCount || d_seg_logits->height != t.input.height ||
        d_seg_logits->width != t.input.width) {
      throw ShapeError("seg gradient must match the seg logits");
    }
    const Tensor3 up = upsample_backward(*d_seg_logits, h, w);
    for (std::size_t i = 0; i < up.data.size(); ++i) d_low.data[i] += up.data[i];
    seg_path = true;
  }

  if (seg_path) {
    Conv seg{A, kRegionCount, 1, 1, 0, 1, entry("seg.weight").offset, entry("seg.bias").offset};
    Tensor3 d_ctx;
    seg.backward(p, t.context, d_low, g, &d_ctx);
    relu_backward(t.context, d_ctx);
    Conv project{nb * A, A, 1, 1, 0, 1, entry("aspp.project.weight").offset, entry("aspp.project.bias").offset};
    Tensor3 d_aspp;
    project.backward(p, t.aspp, d_ctx, g, &d_aspp);
    relu_backward(t.aspp, d_aspp);

    auto branch_grad = [&](int b) {
      Tensor3 d(A, h, w);
      const auto first = d_aspp.data.begin() + static_cast<std::ptrdiff_t>(b) * A * hw;
      std::copy(first, first + static_cast<std::ptrdiff_t>(A * hw), d.data.begin());
      return d;
    };
    auto add_dF = [&](const Tensor3& dx) {
      for (std::size_t i = 0; i < dx.data.size(); ++i) dF.data[i] += dx.data[i];
    };
    {
      Conv c{C, A, 1, 1, 0, 1, entry("aspp.conv1x1.weight").offset, entry("aspp.conv1x1.bias").offset};
      Tensor3 dx;
      c.backward(p, F, branch_grad(0), g, &dx);
      add_dF(dx);
    }
    for (int r = 0; r < R; ++r) {
      const int rate = config_.dilation_rates[r];
      const std::string n = "aspp.dilated" + std::to_string(r);
      Conv c{C, A, 3, 1, rate, rate, entry(n + ".weight").offset, entry(n + ".bias").offset};
      Tensor3 dx;
      c.backward(p, F, branch_grad(1 + r), g, &dx);
      add_dF(dx);
    }
    const std::size_t pw = entry("aspp.pool.weight").offset, pb = entry("aspp.pool.bias").offset;
    const Tensor3 dpool = branch_grad(nb - 1);
    std::vector<double> d_gap(C, 0.0);
    for (int a = 0; a < A; ++a) {
      double dv = 0.0;
      for (double v : dpool.channel(a)) dv += v;
      g[pb + a] += dv;
      for (int c = 0; c < C; ++c) {
        g[pw + a * C + c] += dv * t.pooled[c];
        d_gap[c] += p[pw + a * C + c] * dv;
      }
    }
    for (int c = 0; c < C; ++c) {
      const double share = d_gap[c] / static_cast<double>(hw);
      for (double& v : dF.channel(c)) v += share;
    }
  }

  const std::size_t enc_size = entry("aspp.conv1x1.weight").offset;
  encoder_->backward(std::span<const double>(p, enc_size), t.encoder, dF, grad.subspan(0, enc_size));
}

std::vector<double> mssam(const Tensor3& features, const Tensor3& mask, bool normalized) {
  if (mask.channels != 1 || mask.height != features.height || mask.width != features.width) {
    throw ShapeError("mssam: mask is " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " but features are " + std::to_string(features.height) + "x" + std::to_string(features.width));
  }
  const std::size_t hw = features.plane();
  double q = 0.0;
  for (double v : mask.data) q += v;
  const double denom = normalized ? q + kMaskNormEps : static_cast<double>(hw);
  std::vector<double> out(features.channels, 0.0);
  for (int c = 0; c < features.channels; ++c) {
    const auto f = features.channel(c);
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += f[i] * mask.data[i];
    out[c] = s / denom;
  }
  return out;
}

void validate_thresholds(const ThresholdVector& thresholds) {
  for (int r = 0; r < kRequirementCount; ++r) {
    const double t = thresholds[r];
    if (!(t > 0.0 && t < 1.0)) {
      throw ConfigError("threshold for " + std::string(short_name(requirement_at_slot(r))) + " must lie in (0,1)");
    }
  }
}

DecisionMap decide(const ScoreVector& scores, const ThresholdVector& thresholds) {
  validate_thresholds(thresholds);
  DecisionMap out;
  for (int r = 0; r < kRequirementCount; ++r) {
    const RequirementId id = requirement_at_slot(r);
    out[id].verdict = scores[id] >= thresholds[r] ? Verdict::NonCompliant : Verdict::Compliant;
  }
  return out;
}

Prediction predict_compliance(const SegClsModel& model, const Tensor3& image, const ThresholdVector* thresholds) {
  if (!thresholds) {
    if (!model.thresholds()) throw ConfigError("missing thresholds: none given and the model stores no defaults");
    thresholds = &*model.thresholds();
  }
  const ModelOutput out = model.forward(image);
  const auto s = out.cls_scores();
  Prediction p{ScoreVector(s), {}};
  p.decisions = decide(p.scores, *thresholds);
  return p;
}

}  // namespace icao
