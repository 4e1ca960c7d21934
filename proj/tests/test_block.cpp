#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "g2n/block.hpp"
#include "g2n/gradcheck.hpp"

using namespace g2n;

namespace {

Tensor<float> randn4(Rng& rng, int64_t n, int64_t c, int64_t h, int64_t w) {
  std::vector<float> v(size_t(n * c * h * w));
  for (auto& x : v) x = float(rng.normal());
  return Tensor<float>::from(Shape{n, c, h, w}, std::move(v));
}

// Independently coded plain four-branch inception (the pre-passage baseline):
// 1x1 / 1x1->3x3 / 1x1->5x5 / maxpool->1x1, channel-concatenated. Shares the
// block's parameters through the registry but composes them on its own.
Tensor<float> plain_inception_forward(Registry<float>& reg,
                                      const Tensor<float>& x, Mode mode) {
  auto conv_of = [&](const std::string& prefix, const Tensor<float>& in,
                     int padding) {
    ParamRef<float>* w = reg.find(prefix + ".conv.weight");
    REQUIRE(w != nullptr);
    ConvParams<float> p;
    p.weight = w->tensor;
    p.stride = 1;
    p.padding = padding;
    Tensor<float> y = conv2d(in, p);
    ParamRef<float>* gamma = reg.find(prefix + ".bn.gamma");
    ParamRef<float>* beta = reg.find(prefix + ".bn.beta");
    REQUIRE(gamma != nullptr);
    REQUIRE(beta != nullptr);
    BatchNormState<float> st;
    st.gamma = gamma->tensor;
    st.beta = beta->tensor;
    st.running_mean.assign(size_t(st.gamma.numel()), 0.0f);
    st.running_var.assign(size_t(st.gamma.numel()), 1.0f);
    st.mode = mode;
    return relu(batchnorm2d(y, st));
  };
  Tensor<float> b1 = conv_of("blk.branch1", x, 0);
  Tensor<float> b2 = conv_of("blk.branch2", conv_of("blk.branch2.reduce", x, 0), 1);
  Tensor<float> b3 = conv_of("blk.branch3", conv_of("blk.branch3.reduce", x, 0), 2);
  Tensor<float> b4 = conv_of("blk.branch4.proj", pool2d(x, PoolKind::Max, 3, 1, 1), 0);
  return concat_channels<float>({b1, b2, b3, b4});
}

ResFRIConfig tiny_cfg(Fusion fusion, bool split) {
  ResFRIConfig cfg;
  cfg.in_channels = 16;
  cfg.widths = {4, 3, 6, 2, 3, 3};
  cfg.fusion = fusion;
  cfg.split = split;
  return cfg;
}

}  // namespace

TEST_CASE("split_widths: channel budget arithmetic") {
  auto w192 = split_widths(192);
  CHECK(w192[0] == 72);
  CHECK(w192[1] == 72);
  CHECK(w192[2] == 24);
  CHECK(w192[3] == 24);
  auto w8 = split_widths(8);
  CHECK(w8[0] == 3);
  CHECK(w8[1] == 3);
  CHECK(w8[2] == 1);
  CHECK(w8[3] == 1);
  CHECK_THROWS_WITH_AS(split_widths(7), doctest::Contains(">= 8"), Error);
  // Remainder lands in the fourth part and the widths always sum to C.
  for (int64_t c = 8; c <= 200; ++c) {
    auto w = split_widths(c);
    CHECK(w[0] + w[1] + w[2] + w[3] == c);
    CHECK(w[0] == 3 * c / 8);
    CHECK(w[2] == c / 8);
    for (auto v : w) CHECK(v >= 1);
  }
}

TEST_CASE("split_input: broadcast aliases vs contiguous slices") {
  Rng rng(2);
  auto x = randn4(rng, 2, 16, 4, 4);
  auto broadcast = split_input(x, false);
  for (auto& part : broadcast) {
    CHECK(part.same_impl(x));
    CHECK(part.shape().c() == 16);
  }
  auto parts = split_input(x, true);
  CHECK(parts[0].shape().c() == 6);
  CHECK(parts[1].shape().c() == 6);
  CHECK(parts[2].shape().c() == 2);
  CHECK(parts[3].shape().c() == 2);
  // Slices are contiguous in channel order.
  CHECK(parts[0].at(0, 0, 0, 0) == x.at(0, 0, 0, 0));
  CHECK(parts[1].at(0, 0, 1, 1) == x.at(0, 6, 1, 1));
  CHECK(parts[3].at(1, 1, 2, 3) == x.at(1, 15, 2, 3));
}

TEST_CASE("cmbr: zero input propagates to zero output") {
  Rng rng(3);
  Cmbr<float> unit(4, 7, PoolKind::Max, rng);
  auto x = Tensor<float>::zeros(Shape{2, 4, 5, 5});
  auto y = unit.forward(x, Mode::Eval);
  CHECK(y.shape() == Shape{2, 7, 5, 5});
  for (float v : y.value()) CHECK(v == 0.0f);
}

TEST_CASE("cmbr: spatial extents preserved for 4..32") {
  Rng rng(4);
  Cmbr<float> unit(3, 5, PoolKind::Avg, rng);
  for (int64_t hw : {4, 7, 16, 32}) {
    auto x = randn4(rng, 1, 3, hw, hw);
    CHECK(unit.forward(x, Mode::Eval).shape() == Shape{1, 5, hw, hw});
  }
}

TEST_CASE("cmbr: hand evaluation on a 1x1x2x2 case") {
  Rng rng(5);
  Cmbr<float> unit(1, 1, PoolKind::Max, rng);
  // Identity 1x1 conv, eval bn with fresh (0 mean, unit var) statistics.
  unit.conv().params().weight.mutable_value()[0] = 1.0f;
  auto x = Tensor<float>::from(Shape{1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto y = unit.forward(x, Mode::Eval);
  // 3x3 stride-1 max pool over the padded 2x2: every window sees 4 except the
  // top-left one, which sees max(1,2,3,4 restricted) = 4 too... windows:
  // (0,0): {1,2,3,4}=4, (0,1): {1,2,3,4}=4, (1,0): 4, (1,1): 4.
  const float eps = 1e-5f;
  const float expect = 4.0f / std::sqrt(1.0f + eps);
  for (float v : y.value()) CHECK(v == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("fuse: addition with zeroed passage returns the group input") {
  Rng rng(6);
  Cmbr<float> unit(3, 5, PoolKind::Max, rng);
  for (auto& v : unit.conv().params().weight.mutable_value()) v = 0.0f;
  auto prev = randn4(rng, 1, 3, 4, 4);
  auto group = randn4(rng, 1, 5, 4, 4);
  auto fused = fuse(prev, group, Fusion::Addition, unit, Mode::Eval);
  REQUIRE(fused.shape() == group.shape());
  for (size_t i = 0; i < size_t(group.numel()); ++i)
    CHECK(fused.value()[i] == group.value()[i]);
}

TEST_CASE("fuse: concatenation widths and addition mismatch error") {
  Rng rng(7);
  Cmbr<float> to24(32, 24, PoolKind::Max, rng);
  auto prev = randn4(rng, 1, 32, 4, 4);
  auto group = randn4(rng, 1, 24, 4, 4);
  auto cat = fuse(prev, group, Fusion::Concatenation, to24, Mode::Eval);
  CHECK(cat.shape().c() == 48);  // 24 + 24
  CHECK(cat.shape().c() > group.shape().c());

  Cmbr<float> to7(32, 7, PoolKind::Max, rng);
  CHECK_THROWS_WITH_AS(fuse(prev, group, Fusion::Addition, to7, Mode::Eval),
                       doctest::Contains("addition requires"), Error);
}

TEST_CASE("output_channels: sum of terminal widths, mode-independent") {
  ResFRIConfig cfg;
  cfg.in_channels = 192;
  cfg.widths = {64, 96, 128, 16, 32, 32};
  CHECK(output_channels(cfg) == 256);
  cfg.fusion = Fusion::Concatenation;
  CHECK(output_channels(cfg) == 256);
  cfg.split = true;
  CHECK(output_channels(cfg) == 256);
  cfg.widths = {1, 1, 1, 1, 1, 1};
  CHECK(output_channels(cfg) == 4);
  cfg.widths.b2 = 0;
  CHECK_THROWS_AS(output_channels(cfg), Error);
}

TEST_CASE("resfri_forward: output channels and spatial preservation") {
  Rng rng(8);
  ResFRIConfig cfg;
  cfg.in_channels = 192;
  cfg.widths = {64, 96, 128, 16, 32, 32};
  ResFRIBlock<float> block(cfg, rng);
  auto x = randn4(rng, 1, 192, 8, 8);
  auto y = block.forward(x, Mode::Eval);
  CHECK(y.shape() == Shape{1, 256, 8, 8});
  CHECK_THROWS_WITH_AS(block.forward(randn4(rng, 1, 64, 8, 8), Mode::Eval),
                       doctest::Contains("in_channels"), Error);
}

TEST_CASE("resfri_forward: SRI branch widths at C=192") {
  Rng rng(9);
  ResFRIConfig cfg;
  cfg.in_channels = 192;
  cfg.widths = {64, 96, 128, 16, 32, 32};
  cfg.split = true;
  cfg.fusion = Fusion::Addition;
  ResFRIBlock<float> block(cfg, rng);
  auto widths = block.branch_input_widths();
  CHECK(widths[0] == 72);  // branch 1 consumes the first split group
  CHECK(widths[3] == 24);  // branch 4's fused input keeps the group width
  auto y = block.forward(randn4(rng, 1, 192, 6, 6), Mode::Eval);
  CHECK(y.shape().c() == 256);
}

TEST_CASE("resfri_forward: concatenation fusion doubles fused input widths") {
  Rng rng(10);
  auto cfg = tiny_cfg(Fusion::Concatenation, false);
  ResFRIBlock<float> block(cfg, rng);
  auto widths = block.branch_input_widths();
  CHECK(widths[0] == 16);
  CHECK(widths[1] == 32);
  CHECK(widths[2] == 32);
  CHECK(widths[3] == 32);
  auto cfgs = tiny_cfg(Fusion::Concatenation, true);
  ResFRIBlock<float> blocks(cfgs, rng);
  auto ws = blocks.branch_input_widths();
  CHECK(ws[0] == 6);
  CHECK(ws[1] == 12);
  CHECK(ws[2] == 4);
  CHECK(ws[3] == 4);
}

TEST_CASE("property: output channels match and spatial preserved over random configs") {
  Rng rng(20250401);
  for (int trial = 0; trial < 200; ++trial) {
    ResFRIConfig cfg;
    cfg.in_channels = 8 + int64_t(rng.below(24));
    cfg.widths = {1 + int64_t(rng.below(4)), 1 + int64_t(rng.below(4)),
                  1 + int64_t(rng.below(4)), 1 + int64_t(rng.below(4)),
                  1 + int64_t(rng.below(4)), 1 + int64_t(rng.below(4))};
    cfg.fusion = rng.bernoulli(0.5) ? Fusion::Addition : Fusion::Concatenation;
    cfg.split = rng.bernoulli(0.5);
    cfg.use_residual = rng.bernoulli(0.5);
    cfg.use_transverse = rng.bernoulli(0.5);
    ResFRIBlock<float> block(cfg, rng);
    const int64_t hw = 5 + int64_t(rng.below(3));
    auto x = randn4(rng, 1, cfg.in_channels, hw, hw);
    auto y = block.forward(x, Mode::Eval);
    CHECK(y.shape().c() == output_channels(cfg));
    CHECK(y.shape().h() == hw);
    CHECK(y.shape().w() == hw);
    if (cfg.split) {
      auto w = split_widths(cfg.in_channels);
      CHECK(w[0] + w[1] + w[2] + w[3] == cfg.in_channels);
    }
  }
}

TEST_CASE("ablation degeneracy: block equals independently coded inception bitwise") {
  Rng rng(30);
  ResFRIConfig cfg = tiny_cfg(Fusion::Addition, false);
  cfg.use_residual = false;
  cfg.use_transverse = false;
  cfg.split = false;
  ResFRIBlock<float> block(cfg, rng);
  Registry<float> reg;
  block.collect("blk", reg);
  auto x = randn4(rng, 2, 16, 7, 7);

  auto ours = block.forward(x, Mode::Eval);
  auto baseline = plain_inception_forward(reg, x, Mode::Eval);
  REQUIRE(ours.shape() == baseline.shape());
  for (size_t i = 0; i < size_t(ours.numel()); ++i)
    CHECK(ours.value()[i] == baseline.value()[i]);
}

TEST_CASE("zero-passage equivalence: zeroed addition passages match no-transverse") {
  Rng rng(31);
  ResFRIConfig with_cfg = tiny_cfg(Fusion::Addition, false);
  ResFRIBlock<float> with_block(with_cfg, rng);
  ResFRIConfig without_cfg = with_cfg;
  without_cfg.use_transverse = false;
  Rng rng2(99);
  ResFRIBlock<float> without_block(without_cfg, rng2);

  // Zero the passage convs; share every other parameter.
  Registry<float> with_reg, without_reg;
  with_block.collect("b", with_reg);
  without_block.collect("b", without_reg);
  for (auto& p : with_reg.params) {
    if (p.name.find("passage") != std::string::npos) {
      if (p.kind == ParamKind::ConvWeight)
        for (auto& v : p.tensor.mutable_value()) v = 0.0f;
      continue;
    }
    ParamRef<float>* q = without_reg.find(p.name);
    REQUIRE(q != nullptr);
    auto dst = q->tensor.mutable_value();
    auto src = p.tensor.value();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = src[i];
  }

  auto x = randn4(rng, 2, 16, 6, 6);
  auto a = with_block.forward(x, Mode::Eval);
  auto b = without_block.forward(x, Mode::Eval);
  REQUIRE(a.shape() == b.shape());
  for (size_t i = 0; i < size_t(a.numel()); ++i)
    CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("zero residual: zero projection equals the residual-free block") {
  Rng rng(32);
  ResFRIConfig cfg = tiny_cfg(Fusion::Addition, false);
  ResFRIBlock<float> block(cfg, rng);
  for (auto& v : block.residual()->conv().params().weight.mutable_value())
    v = 0.0f;

  ResFRIConfig no_res = cfg;
  no_res.use_residual = false;
  Rng rng2(77);
  ResFRIBlock<float> bare(no_res, rng2);
  Registry<float> a, b;
  block.collect("b", a);
  bare.collect("b", b);
  for (auto& p : b.params) {
    ParamRef<float>* src = a.find(p.name);
    REQUIRE(src != nullptr);
    auto dst = p.tensor.mutable_value();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = src->tensor.value()[i];
  }
  auto x = randn4(rng, 1, 16, 5, 5);
  auto ya = block.forward(x, Mode::Eval);
  auto yb = bare.forward(x, Mode::Eval);
  for (size_t i = 0; i < size_t(ya.numel()); ++i)
    CHECK(ya.value()[i] == yb.value()[i]);
}

TEST_CASE("block differentiability: tiny block gradient check") {
  Rng rng(33);
  ResFRIConfig cfg;
  cfg.in_channels = 8;
  cfg.widths = {3, 2, 4, 2, 3, 2};
  ResFRIBlock<double> block(cfg, rng);
  std::vector<double> xv(size_t(2 * 8 * 6 * 6));
  for (auto& v : xv) v = rng.normal();
  auto x = Tensor<double>::from(Shape{2, 8, 6, 6}, xv).set_requires_grad(true);

  auto make_loss = [&]() mutable {
    return sum(scale(global_avg_pool(block.forward(x, Mode::Train)), 1.0 / 12));
  };
  auto loss = make_loss();
  loss.backward();
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  const std::function<double()> f = [&] { return make_loss().item(); };
  auto numeric = finite_diff_grad(f, x, 1e-6);
  CHECK(max_rel_error(std::span<const double>(analytic),
                      std::span<const double>(numeric)) < 1e-6);
}

TEST_CASE("block: split with too few channels is rejected") {
  Rng rng(34);
  ResFRIConfig cfg = tiny_cfg(Fusion::Addition, true);
  cfg.in_channels = 6;
  CHECK_THROWS_WITH_AS(ResFRIBlock<float>(cfg, rng),
                       doctest::Contains(">= 8"), Error);
}
