#pragma once

#include <optional>
#include <vector>

#include "g2n/rng.hpp"
#include "g2n/tensor.hpp"

namespace g2n {

enum class PoolKind { Max, Avg };
enum class Mode { Train, Eval };

inline const char* pool_kind_name(PoolKind k) {
  return k == PoolKind::Max ? "max" : "avg";
}

template <typename T>
struct ConvParams {
  Tensor<T> weight;              // outC x inC x kH x kW
  std::optional<Tensor<T>> bias; // outC
  int stride = 1;
  int padding = 0;

  int64_t out_channels() const { return weight.shape().dim(0); }
  int64_t in_channels() const { return weight.shape().dim(1); }
  int64_t kernel_h() const { return weight.shape().dim(2); }
  int64_t kernel_w() const { return weight.shape().dim(3); }
};

template <typename T>
struct BatchNormState {
  Tensor<T> gamma, beta;               // learnable, length C
  std::vector<T> running_mean;         // buffers, length C
  std::vector<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
  Mode mode = Mode::Train;

  static BatchNormState identity(int64_t channels) {
    BatchNormState s;
    s.gamma = Tensor<T>::full(Shape{channels}, T(1));
    s.beta = Tensor<T>::zeros(Shape{channels});
    s.running_mean.assign(size_t(channels), T(0));
    s.running_var.assign(size_t(channels), T(1));
    return s;
  }
  int64_t channels() const { return gamma.shape().dim(0); }
};

// 2-D cross-correlation (the usual deep-learning "convolution"; kernels are
// not flipped). Output extents follow floor((X + 2p - k) / s) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params);

// Max or average pooling. Average divides by the full k*k window area,
// counting zero padding; max considers only in-bounds positions and breaks
// ties toward the lowest flat index. Requires padding < k so no window is
// entirely padding.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, int k, int stride,
                 int padding);

// Batch normalization over N, H, W per channel. Train mode normalizes with
// batch statistics (biased variance) and folds them into the running
// estimates (unbiased variance) with the state's momentum; eval mode uses the
// running estimates.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNormState<T>& state);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Concatenates rank-4 tensors along the channel axis, in argument order.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

// Contiguous channel slice [c_begin, c_end) of a rank-4 tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t c_begin, int64_t c_end);

// N x C x H x W -> N x (C*H*W).
template <typename T>
Tensor<T> flatten(const Tensor<T>& x);

// N x C x H x W -> N x C, mean over the spatial extent.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// Affine map of a rank-2 input: (N x D) * (D x K) + bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias);

// Inverted dropout: train mode zeroes each element with probability `rate`
// and scales the survivors by 1/(1-rate); eval mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, Mode mode);

// Mean over the batch of -log softmax(logits)[label]. Returns a scalar.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int>& labels);

}  // namespace g2n
