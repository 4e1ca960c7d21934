#pragma once

#include <optional>
#include <string>
#include <vector>

#include "g2n/config.hpp"

namespace g2n {

// A full backbone: stem convolutions, staged four-branch blocks separated by
// stride-2 pools, then global pooling, dropout, and the linear classifier.
template <typename T>
class Model {
 public:
  Model(const NetworkConfig& cfg, uint64_t seed);
  explicit Model(const NetworkConfig& cfg) : Model(cfg, cfg.seed) {}

  // Produces N x classes logits. Train mode uses batch statistics, updates
  // batchnorm running estimates, and applies dropout (which needs the
  // caller's RNG stream).
  Tensor<T> forward(const Tensor<T>& batch, Mode mode,
                    Rng* dropout_rng = nullptr);

  Registry<T> registry();
  std::vector<LayerStat> layer_stats() const;

  const NetworkConfig& config() const { return cfg_; }
  int64_t head_channels() const { return head_channels_; }

  std::vector<ResFRIBlock<T>*> blocks();

 private:
  NetworkConfig cfg_;
  std::vector<ConvBnRelu<T>> stem_;
  struct Stage {
    std::vector<ResFRIBlock<T>> blocks;
    std::optional<PoolDesc> pool_after;
  };
  std::vector<Stage> stages_;
  LinearLayer<T> fc_;
  int64_t head_channels_ = 0;
};

template <typename T>
Model<T> build_network(const NetworkConfig& cfg) {
  return Model<T>(cfg);
}

}  // namespace g2n
