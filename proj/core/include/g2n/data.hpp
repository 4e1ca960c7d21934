#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "g2n/rng.hpp"
#include "g2n/tensor.hpp"

namespace g2n {

// In-memory image classification dataset. Pixels stay in their source byte
// form (channel-planar, row-major); preprocessing produces normalized
// 3 x 32 x 32 float tensors on demand.
struct Dataset {
  int64_t count = 0;
  int64_t channels = 0, height = 0, width = 0;  // source geometry
  std::vector<uint8_t> pixels;                  // count*channels*height*width
  std::vector<int> labels;
  int num_classes = 10;

  const uint8_t* image(int64_t i) const {
    return pixels.data() + i * channels * height * width;
  }
};

// IDX image/label pair (big-endian magic 0x00000803 / 0x00000801).
Dataset load_mnist_idx(const std::string& images_path,
                       const std::string& labels_path);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3072
// channel-planar pixels.
Dataset load_cifar10_bin(const std::vector<std::string>& paths);

// Writers for the same two formats (test fixtures and corpus generation).
void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& ds);
void write_cifar10_bin(const std::string& path, const Dataset& ds);

// Per-channel normalization statistics over a subset of the dataset, in the
// 3-channel 32x32 presentation (grayscale replicated, values in [0, 1]).
struct ChannelStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stddev{1, 1, 1};
};

ChannelStats compute_channel_stats(const Dataset& ds,
                                   const std::vector<int64_t>& indices);

enum class AugmentPolicy { Train, Eval };

constexpr int64_t kInputSide = 32;

// Writes one normalized 3x32x32 image into `out`. Grayscale sources are
// replicated to 3 channels, 28x28 sources zero-padded to 32x32. The train
// policy zero-pads by 4, takes a random 32x32 crop, and flips horizontally
// with probability 0.5 when `allow_hflip` is set; eval is deterministic.
template <typename T>
void preprocess_into(const Dataset& ds, int64_t index, AugmentPolicy policy,
                     const ChannelStats& stats, bool allow_hflip, Rng& rng,
                     T* out);

template <typename T>
struct LabeledBatch {
  Tensor<T> images;  // N x 3 x 32 x 32
  std::vector<int> labels;
  std::vector<int64_t> indices;  // source rows, for determinism audits
};

// Splits a seeded permutation of `indices` into batch_size chunks; the final
// short batch is kept.
std::vector<std::vector<int64_t>> make_epoch_batches(
    const std::vector<int64_t>& indices, int64_t batch_size, Rng& rng);

template <typename T>
LabeledBatch<T> make_batch(const Dataset& ds,
                           const std::vector<int64_t>& indices,
                           AugmentPolicy policy, const ChannelStats& stats,
                           bool allow_hflip, Rng& rng);

// Deterministic MNIST-shaped stand-in corpus: 28x28 grayscale digit glyphs
// with randomized placement, scale, rotation, stroke weight, and speckle
// noise. Used where the real corpus files are not on disk.
Dataset synthetic_digits(int64_t count, uint64_t seed);

}  // namespace g2n
