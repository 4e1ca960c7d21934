#pragma once

#include <string>
#include <vector>

#include "g2n/backbone.hpp"

namespace g2n {

// Binary keep/drop mask over one transverse-passage conv weight tensor.
// Exactly floor(ratio * numel) positions are dropped: the smallest by
// absolute value, ties broken toward the lowest flat index.
struct PruneMask {
  std::string target;
  Shape shape;
  std::vector<uint8_t> mask;  // 1 = keep, 0 = dropped
  double ratio = 0.0;

  int64_t zeros() const {
    int64_t z = 0;
    for (uint8_t m : mask) z += (m == 0);
    return z;
  }
};

// One mask per transverse-passage conv weight. The residual-connection cmbr
// is never a target.
template <typename T>
std::vector<PruneMask> build_masks(Model<T>& model, double ratio);

// Zeroes the masked weight positions and registers the masks with the
// parameters so optimizer steps keep them at zero. Model shapes are
// unchanged.
template <typename T>
void apply_masks(Model<T>& model, const std::vector<PruneMask>& masks);

struct SparsityRow {
  std::string target;
  int64_t masked_zeros = 0;
  int64_t numel = 0;
};

struct SparsityReport {
  std::vector<SparsityRow> rows;
  int64_t masked_zeros = 0;
  int64_t numel = 0;
  double aggregate = 0.0;  // masked_zeros / numel over all targets

  std::string table() const;
};

// Masked-zero fractions per passage target and in aggregate. Incidental
// exact zeros in unmasked weights are not counted.
template <typename T>
SparsityReport sparsity_report(Model<T>& model);

}  // namespace g2n
