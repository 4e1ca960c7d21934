#pragma once

#include <array>
#include <optional>
#include <string>

#include "g2n/layers.hpp"

namespace g2n {

enum class Fusion { Addition, Concatenation };

inline const char* fusion_name(Fusion f) {
  return f == Fusion::Addition ? "addition" : "concatenation";
}

// Terminal widths of the four branches plus the 1x1 reduce widths feeding the
// 3x3 and 5x5 convolutions, in the classic inception order.
struct BranchWidths {
  int64_t b1 = 0;         // branch 1: 1x1 width
  int64_t b2_reduce = 0;  // branch 2: 1x1 reduce width
  int64_t b2 = 0;         // branch 2: 3x3 width
  int64_t b3_reduce = 0;  // branch 3: 1x1 reduce width
  int64_t b3 = 0;         // branch 3: 5x5 width
  int64_t b4 = 0;         // branch 4: pool-projection 1x1 width
};

struct ResFRIConfig {
  int64_t in_channels = 0;
  BranchWidths widths;
  Fusion fusion = Fusion::Addition;
  bool split = false;           // broadcast input vs 3:3:1:1 channel split
  bool use_residual = true;
  bool use_transverse = true;
  double passage_prune_ratio = 0.0;
  PoolKind branch_pool_kind = PoolKind::Max;  // branch-4 pool and passage pools
};

// Sum of the four branch terminal widths; independent of fusion mode and the
// split flag.
int64_t output_channels(const ResFRIConfig& cfg);

// Channel budget per branch when the input is split 3:3:1:1 by eighths. The
// remainder of the floor divisions is assigned to the fourth part so the
// widths always sum to `c`.
std::array<int64_t, 4> split_widths(int64_t c);

// Returns the four branch inputs: aliases of x when split is off, contiguous
// channel slices of widths split_widths(x.C) when on.
template <typename T>
std::array<Tensor<T>, 4> split_input(const Tensor<T>& x, bool split);

// Passage fusion: addition -> cmbr(prev) + group_input, concatenation ->
// [cmbr(prev); group_input] along channels.
template <typename T>
Tensor<T> fuse(const Tensor<T>& prev_branch_out, const Tensor<T>& group_input,
               Fusion mode, Cmbr<T>& unit, Mode run_mode);

// The residual feature-reutilization inception. Branches run in order
// 1x1 / 1x1->3x3 / 1x1->5x5 / pool->1x1; with transverse passages on, branch
// i+1 consumes fuse(branch_i output, its channel group). The block output is
// the channel concatenation of the four branch outputs, plus a cmbr
// projection of the block input when the residual connection is enabled.
// Spatial extents are preserved.
template <typename T>
class ResFRIBlock {
 public:
  ResFRIBlock() = default;
  ResFRIBlock(const ResFRIConfig& cfg, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);

  const ResFRIConfig& config() const { return cfg_; }
  int64_t out_channels() const { return output_channels(cfg_); }

  // Input widths seen by the four branches after fusion (for tests and the
  // structural summary).
  std::array<int64_t, 4> branch_input_widths() const { return branch_in_; }

  void collect(const std::string& prefix, Registry<T>& reg);
  void stats(const std::string& prefix, int64_t in_h, int64_t in_w,
             std::vector<LayerStat>& out) const;

  Cmbr<T>* passage(int i) {
    return (i >= 1 && i <= 3 && cfg_.use_transverse) ? &passages_[size_t(i - 1)]
                                                     : nullptr;
  }
  Cmbr<T>* residual() { return cfg_.use_residual ? &residual_.value() : nullptr; }

 private:
  ResFRIConfig cfg_;
  std::array<int64_t, 4> group_w_{};   // channel budget per branch input
  std::array<int64_t, 4> branch_in_{}; // widths after fusion
  ConvBnRelu<T> branch1_;
  ConvBnRelu<T> branch2_reduce_, branch2_conv_;
  ConvBnRelu<T> branch3_reduce_, branch3_conv_;
  ConvBnRelu<T> branch4_proj_;
  std::array<Cmbr<T>, 3> passages_;
  std::optional<Cmbr<T>> residual_;
};

}  // namespace g2n
