#include "g2n/block.hpp"

namespace g2n {

int64_t output_channels(const ResFRIConfig& cfg) {
  const BranchWidths& w = cfg.widths;
  G2N_CHECK(w.b1 >= 1 && w.b2_reduce >= 1 && w.b2 >= 1 && w.b3_reduce >= 1 &&
                w.b3 >= 1 && w.b4 >= 1,
            "block: all branch widths must be >= 1");
  return w.b1 + w.b2 + w.b3 + w.b4;
}

std::array<int64_t, 4> split_widths(int64_t c) {
  G2N_CHECK(c >= 8, "split: input channels must be >= 8, got ", c);
  const int64_t g12 = 3 * c / 8;
  const int64_t g3 = c / 8;
  return {g12, g12, g3, c - 2 * g12 - g3};
}

template <typename T>
std::array<Tensor<T>, 4> split_input(const Tensor<T>& x, bool split) {
  if (!split) return {x, x, x, x};
  const auto w = split_widths(x.shape().c());
  std::array<Tensor<T>, 4> parts;
  int64_t off = 0;
  for (int i = 0; i < 4; ++i) {
    parts[size_t(i)] = slice_channels(x, off, off + w[size_t(i)]);
    off += w[size_t(i)];
  }
  return parts;
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& prev_branch_out, const Tensor<T>& group_input,
               Fusion mode, Cmbr<T>& unit, Mode run_mode) {
  Tensor<T> matched = unit.forward(prev_branch_out, run_mode);
  if (mode == Fusion::Addition) {
    G2N_CHECK(matched.shape().c() == group_input.shape().c(),
              "fuse: addition requires passage output channels ",
              matched.shape().c(), " to equal group input channels ",
              group_input.shape().c());
    return add(matched, group_input);
  }
  return concat_channels<T>({matched, group_input});
}

template <typename T>
ResFRIBlock<T>::ResFRIBlock(const ResFRIConfig& cfg, Rng& rng) : cfg_(cfg) {
  G2N_CHECK(cfg.in_channels >= 1, "block: in_channels must be >= 1, got ",
            cfg.in_channels);
  output_channels(cfg);  // validates widths
  G2N_CHECK(cfg.passage_prune_ratio >= 0.0 && cfg.passage_prune_ratio <= 1.0,
            "block: passage prune ratio must be in [0, 1], got ",
            cfg.passage_prune_ratio);
  if (cfg.split)
    group_w_ = split_widths(cfg.in_channels);
  else
    group_w_ = {cfg.in_channels, cfg.in_channels, cfg.in_channels,
                cfg.in_channels};

  // With passages on, branch i+1 sees its group fused with the matched
  // previous-branch output: same width under addition, doubled under
  // concatenation.
  branch_in_[0] = group_w_[0];
  for (int i = 1; i < 4; ++i) {
    branch_in_[size_t(i)] =
        (cfg.use_transverse && cfg.fusion == Fusion::Concatenation)
            ? 2 * group_w_[size_t(i)]
            : group_w_[size_t(i)];
  }

  const BranchWidths& w = cfg.widths;
  branch1_ = ConvBnRelu<T>(branch_in_[0], w.b1, 1, 1, 0, rng);
  branch2_reduce_ = ConvBnRelu<T>(branch_in_[1], w.b2_reduce, 1, 1, 0, rng);
  branch2_conv_ = ConvBnRelu<T>(w.b2_reduce, w.b2, 3, 1, 1, rng);
  branch3_reduce_ = ConvBnRelu<T>(branch_in_[2], w.b3_reduce, 1, 1, 0, rng);
  branch3_conv_ = ConvBnRelu<T>(w.b3_reduce, w.b3, 5, 1, 2, rng);
  branch4_proj_ = ConvBnRelu<T>(branch_in_[3], w.b4, 1, 1, 0, rng);

  if (cfg.use_transverse) {
    passages_[0] = Cmbr<T>(w.b1, group_w_[1], cfg.branch_pool_kind, rng);
    passages_[1] = Cmbr<T>(w.b2, group_w_[2], cfg.branch_pool_kind, rng);
    passages_[2] = Cmbr<T>(w.b3, group_w_[3], cfg.branch_pool_kind, rng);
  }
  if (cfg.use_residual)
    residual_ = Cmbr<T>(cfg.in_channels, output_channels(cfg),
                        cfg.branch_pool_kind, rng);
}

template <typename T>
Tensor<T> ResFRIBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  G2N_CHECK(x.shape().c() == cfg_.in_channels,
            "block: input channel dimension C=", x.shape().c(),
            " does not match configured in_channels=", cfg_.in_channels);
  auto groups = split_input(x, cfg_.split);

  auto run_branch = [&](int index, auto&& body) -> Tensor<T> {
    try {
      return body();
    } catch (const Error& e) {
      fail("block branch ", index, ": ", e.what());
    }
  };

  Tensor<T> out1 = run_branch(1, [&] { return branch1_.forward(groups[0], mode); });
  Tensor<T> in2 = cfg_.use_transverse
                      ? fuse(out1, groups[1], cfg_.fusion, passages_[0], mode)
                      : groups[1];
  Tensor<T> out2 = run_branch(2, [&] {
    return branch2_conv_.forward(branch2_reduce_.forward(in2, mode), mode);
  });
  Tensor<T> in3 = cfg_.use_transverse
                      ? fuse(out2, groups[2], cfg_.fusion, passages_[1], mode)
                      : groups[2];
  Tensor<T> out3 = run_branch(3, [&] {
    return branch3_conv_.forward(branch3_reduce_.forward(in3, mode), mode);
  });
  Tensor<T> in4 = cfg_.use_transverse
                      ? fuse(out3, groups[3], cfg_.fusion, passages_[2], mode)
                      : groups[3];
  Tensor<T> out4 = run_branch(4, [&] {
    return branch4_proj_.forward(
        pool2d(in4, cfg_.branch_pool_kind, 3, 1, 1), mode);
  });

  Tensor<T> cat = concat_channels<T>({out1, out2, out3, out4});
  if (!cfg_.use_residual) return cat;
  return add(cat, residual_->forward(x, mode));
}

template <typename T>
void ResFRIBlock<T>::collect(const std::string& prefix, Registry<T>& reg) {
  branch1_.collect(prefix + ".branch1", reg);
  branch2_reduce_.collect(prefix + ".branch2.reduce", reg);
  branch2_conv_.collect(prefix + ".branch2", reg);
  branch3_reduce_.collect(prefix + ".branch3.reduce", reg);
  branch3_conv_.collect(prefix + ".branch3", reg);
  branch4_proj_.collect(prefix + ".branch4.proj", reg);
  if (cfg_.use_transverse)
    for (int i = 0; i < 3; ++i)
      passages_[size_t(i)].collect(
          prefix + ".passage" + std::to_string(i + 1), reg, /*passage=*/true);
  if (cfg_.use_residual) residual_->collect(prefix + ".residual", reg, false);
}

template <typename T>
void ResFRIBlock<T>::stats(const std::string& prefix, int64_t in_h,
                           int64_t in_w, std::vector<LayerStat>& out) const {
  branch1_.stat(prefix + ".branch1", in_h, in_w, out);
  if (cfg_.use_transverse)
    passages_[0].stat(prefix + ".passage1", in_h, in_w, out);
  branch2_reduce_.stat(prefix + ".branch2.reduce", in_h, in_w, out);
  branch2_conv_.stat(prefix + ".branch2", in_h, in_w, out);
  if (cfg_.use_transverse)
    passages_[1].stat(prefix + ".passage2", in_h, in_w, out);
  branch3_reduce_.stat(prefix + ".branch3.reduce", in_h, in_w, out);
  branch3_conv_.stat(prefix + ".branch3", in_h, in_w, out);
  if (cfg_.use_transverse)
    passages_[2].stat(prefix + ".passage3", in_h, in_w, out);
  out.push_back({prefix + ".branch4.pool", 0, 0,
                 Shape{1, branch_in_[3], in_h, in_w}});
  branch4_proj_.stat(prefix + ".branch4.proj", in_h, in_w, out);
  if (cfg_.use_residual) residual_->stat(prefix + ".residual", in_h, in_w, out);
}

template std::array<Tensor<float>, 4> split_input<float>(const Tensor<float>&,
                                                         bool);
template std::array<Tensor<double>, 4> split_input<double>(
    const Tensor<double>&, bool);
template Tensor<float> fuse<float>(const Tensor<float>&, const Tensor<float>&,
                                   Fusion, Cmbr<float>&, Mode);
template Tensor<double> fuse<double>(const Tensor<double>&,
                                     const Tensor<double>&, Fusion,
                                     Cmbr<double>&, Mode);
template class ResFRIBlock<float>;
template class ResFRIBlock<double>;

}  // namespace g2n
