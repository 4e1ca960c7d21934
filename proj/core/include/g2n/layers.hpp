#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "g2n/ops.hpp"
#include "g2n/rng.hpp"

namespace g2n {

enum class ParamKind { ConvWeight, LinearWeight, Bias, BnGamma, BnBeta };

// A named handle onto one parameter tensor plus the metadata the optimizer
// and pruning need. The mask pointer is shared with the owning layer; a
// non-empty mask pins the masked positions to zero across optimizer steps.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  ParamKind kind;
  bool weight_decay = false;
  bool passage = false;  // transverse-passage conv weight (prunable)
  std::shared_ptr<std::vector<uint8_t>> mask;
};

// Non-learnable per-layer state (batchnorm running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  std::vector<T>* data = nullptr;
};

template <typename T>
struct Registry {
  std::vector<ParamRef<T>> params;
  std::vector<BufferRef<T>> buffers;

  ParamRef<T>* find(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }
};

// One row of the structural summary. `macs` is multiply-accumulates per
// sample at the probed input shape.
struct LayerStat {
  std::string name;
  int64_t params = 0;
  int64_t macs = 0;
  Shape out_shape;
};

inline int64_t pooled_extent(int64_t in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(int64_t in_c, int64_t out_c, int k, int stride, int padding,
              bool with_bias, Rng& rng)
      : mask_(std::make_shared<std::vector<uint8_t>>()) {
    const int64_t fan_in = in_c * k * k;
    const double stddev = std::sqrt(2.0 / double(fan_in));
    std::vector<T> w(size_t(out_c * fan_in));
    for (auto& v : w) v = T(rng.normal(0.0, stddev));
    params_.weight =
        Tensor<T>::from(Shape{out_c, in_c, int64_t(k), int64_t(k)}, std::move(w))
            .set_requires_grad(true);
    if (with_bias)
      params_.bias = Tensor<T>::zeros(Shape{out_c}).set_requires_grad(true);
    params_.stride = stride;
    params_.padding = padding;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, params_); }

  ConvParams<T>& params() { return params_; }
  const ConvParams<T>& params() const { return params_; }
  const std::shared_ptr<std::vector<uint8_t>>& mask() const { return mask_; }

  void collect(const std::string& prefix, Registry<T>& reg,
               bool passage = false) {
    reg.params.push_back({prefix + ".weight", params_.weight,
                          ParamKind::ConvWeight, /*weight_decay=*/true, passage,
                          mask_});
    if (params_.bias)
      reg.params.push_back({prefix + ".bias", *params_.bias, ParamKind::Bias,
                            false, false, nullptr});
  }

  int64_t param_count() const {
    return params_.weight.numel() + (params_.bias ? params_.bias->numel() : 0);
  }

  void stat(const std::string& name, int64_t in_h, int64_t in_w,
            std::vector<LayerStat>& out) const {
    const int64_t oh =
        pooled_extent(in_h, int(params_.kernel_h()), params_.stride, params_.padding);
    const int64_t ow =
        pooled_extent(in_w, int(params_.kernel_w()), params_.stride, params_.padding);
    out.push_back({name, param_count(), params_.weight.numel() * oh * ow,
                   Shape{1, params_.out_channels(), oh, ow}});
  }

 private:
  ConvParams<T> params_;
  std::shared_ptr<std::vector<uint8_t>> mask_;
};

template <typename T>
class BatchNorm2dLayer {
 public:
  BatchNorm2dLayer() = default;
  explicit BatchNorm2dLayer(int64_t channels)
      : state_(BatchNormState<T>::identity(channels)) {
    state_.gamma.set_requires_grad(true);
    state_.beta.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    state_.mode = mode;
    return batchnorm2d(x, state_);
  }

  BatchNormState<T>& state() { return state_; }
  const BatchNormState<T>& state() const { return state_; }

  void collect(const std::string& prefix, Registry<T>& reg) {
    reg.params.push_back(
        {prefix + ".gamma", state_.gamma, ParamKind::BnGamma, false, false, nullptr});
    reg.params.push_back(
        {prefix + ".beta", state_.beta, ParamKind::BnBeta, false, false, nullptr});
    reg.buffers.push_back({prefix + ".running_mean", &state_.running_mean});
    reg.buffers.push_back({prefix + ".running_var", &state_.running_var});
  }

  void stat(const std::string& name, int64_t in_h, int64_t in_w,
            std::vector<LayerStat>& out) const {
    out.push_back(
        {name, 2 * state_.channels(), 0, Shape{1, state_.channels(), in_h, in_w}});
  }

 private:
  BatchNormState<T> state_;
};

// conv -> batchnorm -> relu. Convolutions feeding a batchnorm carry no bias.
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(int64_t in_c, int64_t out_c, int k, int stride, int padding,
             Rng& rng)
      : conv_(in_c, out_c, k, stride, padding, /*with_bias=*/false, rng),
        bn_(out_c) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    return relu(bn_.forward(conv_.forward(x), mode));
  }

  Conv2dLayer<T>& conv() { return conv_; }
  const Conv2dLayer<T>& conv() const { return conv_; }
  BatchNorm2dLayer<T>& bn() { return bn_; }

  void collect(const std::string& prefix, Registry<T>& reg,
               bool passage = false) {
    conv_.collect(prefix + ".conv", reg, passage);
    bn_.collect(prefix + ".bn", reg);
  }

  void stat(const std::string& prefix, int64_t in_h, int64_t in_w,
            std::vector<LayerStat>& out) const {
    conv_.stat(prefix + ".conv", in_h, in_w, out);
    const Shape& s = out.back().out_shape;
    bn_.stat(prefix + ".bn", s.h(), s.w(), out);
  }

  int64_t out_channels() const { return conv_.params().out_channels(); }

 private:
  Conv2dLayer<T> conv_;
  BatchNorm2dLayer<T> bn_;
};

// The channel-matching passage unit: 1x1 convolution, 3x3 stride-1 pooling,
// batchnorm, relu. Preserves spatial extents.
template <typename T>
class Cmbr {
 public:
  Cmbr() = default;
  Cmbr(int64_t in_c, int64_t out_c, PoolKind pool_kind, Rng& rng)
      : conv_(in_c, out_c, 1, 1, 0, /*with_bias=*/false, rng),
        bn_(out_c),
        pool_kind_(pool_kind) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    return relu(bn_.forward(pool2d(conv_.forward(x), pool_kind_, 3, 1, 1), mode));
  }

  Conv2dLayer<T>& conv() { return conv_; }
  const Conv2dLayer<T>& conv() const { return conv_; }
  BatchNorm2dLayer<T>& bn() { return bn_; }
  PoolKind pool_kind() const { return pool_kind_; }
  int64_t out_channels() const { return conv_.params().out_channels(); }

  void collect(const std::string& prefix, Registry<T>& reg, bool passage) {
    conv_.collect(prefix + ".conv", reg, passage);
    bn_.collect(prefix + ".bn", reg);
  }

  void stat(const std::string& prefix, int64_t in_h, int64_t in_w,
            std::vector<LayerStat>& out) const {
    conv_.stat(prefix + ".conv", in_h, in_w, out);
    out.push_back({prefix + ".pool", 0, 0,
                   Shape{1, out_channels(), in_h, in_w}});
    bn_.stat(prefix + ".bn", in_h, in_w, out);
  }

 private:
  Conv2dLayer<T> conv_;
  BatchNorm2dLayer<T> bn_;
  PoolKind pool_kind_ = PoolKind::Max;
};

template <typename T>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(int64_t in_features, int64_t out_features, Rng& rng) {
    const double stddev = std::sqrt(2.0 / double(in_features));
    std::vector<T> w(size_t(in_features * out_features));
    for (auto& v : w) v = T(rng.normal(0.0, stddev));
    weight_ = Tensor<T>::from(Shape{in_features, out_features}, std::move(w))
                  .set_requires_grad(true);
    bias_ = Tensor<T>::zeros(Shape{out_features}).set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return linear(x, weight_, std::optional<Tensor<T>>(bias_));
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

  void collect(const std::string& prefix, Registry<T>& reg) {
    reg.params.push_back({prefix + ".weight", weight_, ParamKind::LinearWeight,
                          true, false, nullptr});
    reg.params.push_back(
        {prefix + ".bias", bias_, ParamKind::Bias, false, false, nullptr});
  }

  void stat(const std::string& name, std::vector<LayerStat>& out) const {
    const int64_t d = weight_.shape().dim(0), k = weight_.shape().dim(1);
    out.push_back({name, d * k + k, d * k, Shape{1, k}});
  }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

}  // namespace g2n
