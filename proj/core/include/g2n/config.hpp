#pragma once

#include <optional>
#include <string>
#include <vector>

#include "g2n/block.hpp"

namespace g2n {

struct ConvDesc {
  int64_t out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

struct PoolDesc {
  int kernel = 3;
  int stride = 2;
  int padding = 1;
};

struct StageConfig {
  std::vector<BranchWidths> blocks;
  std::optional<PoolDesc> pool_after;
};

struct TrainConfig {
  std::string dataset;  // "mnist" | "cifar10"
  int epochs = 200;
  int batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int plateau_patience = 10;
  bool augment = true;
  double val_fraction = 0.1;
  int64_t train_subset = 0;  // 0 = full split
  int64_t eval_subset = 0;
};

// Whole-backbone description: stem convolutions, staged blocks with
// inter-stage pools, classifier head, and the block-level toggles applied
// uniformly across blocks.
struct NetworkConfig {
  std::string name;
  Fusion fusion = Fusion::Addition;
  bool split = false;
  int64_t in_channels = 3, in_h = 32, in_w = 32;
  int64_t classes = 10;
  std::vector<ConvDesc> stem;
  std::vector<StageConfig> stages;
  PoolKind pool_kind = PoolKind::Avg;         // inter-stage pools
  PoolKind branch_pool_kind = PoolKind::Max;  // branch-4 and passage pools
  PoolKind head_pool = PoolKind::Avg;
  double dropout = 0.4;
  bool use_residual = true;
  bool use_transverse = true;
  double prune_ratio = 0.0;
  uint64_t seed = 1;
  std::optional<TrainConfig> train;
};

// Parses a UTF-8 JSON document. Unknown keys anywhere in the document are
// rejected.
NetworkConfig parse_network_config(const std::string& json_text);

NetworkConfig load_network_config(const std::string& path);

// Applies one `key=value` override to a JSON document before parsing. The
// dotted key path must reference an existing key ("train.epochs=3",
// "prune_ratio=0.35"). Values parse as JSON scalars, falling back to string.
std::string apply_config_override(const std::string& json_text,
                                  const std::string& assignment);

}  // namespace g2n
