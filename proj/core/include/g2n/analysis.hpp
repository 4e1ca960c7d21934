#pragma once

#include <string>
#include <vector>

#include "g2n/backbone.hpp"

namespace g2n {

// Conventions: parameters count learnable values only (conv and linear
// weights and biases, batchnorm gamma/beta; running statistics excluded;
// pooling-free). Masked-to-zero weights still count, since masks do not
// change tensor sizes. "Flops" are multiply-accumulates per sample; batch
// norm, activations, and pooling contribute zero.
int64_t count_params(const std::vector<LayerStat>& rows);
int64_t count_macs(const std::vector<LayerStat>& rows);

template <typename T>
int64_t count_params(const Model<T>& model) {
  return count_params(model.layer_stats());
}
template <typename T>
int64_t count_flops(const Model<T>& model) {
  return count_macs(model.layer_stats());
}

// Aligned text table of per-layer stats with a trailing TOTAL row.
std::string format_summary_table(const std::vector<LayerStat>& rows);

// CSV: name,params,macs,out_shape with a final TOTAL row.
std::string summary_csv(const std::vector<LayerStat>& rows);

}  // namespace g2n
