#include "g2n/gradcheck.hpp"

#include <cmath>
#include <map>
#include <memory>

#include "g2n/block.hpp"
#include "g2n/ops.hpp"

namespace g2n {

template <typename T>
std::vector<T> finite_diff_grad(const std::function<T()>& f, Tensor<T>& x,
                                T h) {
  auto v = x.mutable_value();
  std::vector<T> g(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    const T orig = v[i];
    v[i] = orig + h;
    const T fp = f();
    v[i] = orig - h;
    const T fm = f();
    v[i] = orig;
    g[i] = (fp - fm) / (T(2) * h);
  }
  return g;
}

template <typename T>
T max_rel_error(std::span<const T> a, std::span<const T> b) {
  G2N_CHECK(a.size() == b.size(), "max_rel_error: length mismatch");
  T worst = T(0);
  for (size_t i = 0; i < a.size(); ++i) {
    const T denom =
        std::max(T(1), std::max(std::abs(a[i]), std::abs(b[i])));
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

namespace {

template <typename T>
struct GradCase {
  std::string name;
  std::vector<std::pair<std::string, Tensor<T>>> leaves;
  std::function<Tensor<T>()> loss;
  // Deep graphs get a smaller step: their output responds more steeply to a
  // single perturbed weight, which raises the odds of stepping a ReLU or
  // max-pool unit across its kink.
  double h_scale = 1.0;
};

// Draws are quantized to float so the f32 and f64 builds of a case hold
// bit-identical values and the f64 twin differentiates the exact same point.
template <typename T>
class SuiteCtx {
 public:
  explicit SuiteCtx(uint64_t seed) : rng_(seed) {}

  double draw_normal(double stddev) {
    return double(float(rng_.normal(0.0, stddev)));
  }
  double draw_uniform(double lo, double hi) {
    return double(float(rng_.uniform(lo, hi)));
  }

  Tensor<T> randn(const Shape& shape, double stddev = 1.0) {
    std::vector<T> v(size_t(shape.numel()));
    for (auto& x : v) x = T(draw_normal(stddev));
    return Tensor<T>::from(shape, std::move(v));
  }

  // Values bounded away from zero, for ops with a kink at the origin.
  Tensor<T> randn_offset(const Shape& shape, double margin) {
    std::vector<T> v(size_t(shape.numel()));
    for (auto& x : v) {
      double d = rng_.normal(0.0, 1.0);
      d += d >= 0.0 ? margin : -margin;
      x = T(double(float(d)));
    }
    return Tensor<T>::from(shape, std::move(v));
  }

  // Fixed random weighting that turns an op output into an O(1) scalar.
  Tensor<T> weighting(const Shape& shape) {
    auto it = weights_.find(shape.numel());
    if (it == weights_.end()) {
      const double s = 1.0 / std::sqrt(double(shape.numel()));
      it = weights_.emplace(shape.numel(), randn(shape, s)).first;
    }
    const Tensor<T>& w = it->second;
    if (w.shape() == shape) return w;
    return Tensor<T>::from(shape,
                           std::vector<T>(w.value().begin(), w.value().end()));
  }

  Rng rng_;

 private:
  std::map<int64_t, Tensor<T>> weights_;
};

template <typename T>
void add_block_cases(std::shared_ptr<SuiteCtx<T>> ctx,
                     std::vector<GradCase<T>>& cases) {
  for (const auto& [fusion, split] :
       std::initializer_list<std::pair<Fusion, bool>>{
           {Fusion::Addition, false},
           {Fusion::Concatenation, false},
           {Fusion::Addition, true},
           {Fusion::Concatenation, true}}) {
    ResFRIConfig cfg;
    cfg.in_channels = 8;
    cfg.widths = {3, 2, 4, 2, 3, 2};
    cfg.fusion = fusion;
    cfg.split = split;
    cfg.use_residual = true;
    cfg.use_transverse = true;
    Rng init(ctx->rng_.next_u64());
    auto block = std::make_shared<ResFRIBlock<T>>(cfg, init);
    Registry<T> reg;
    block->collect("block", reg);

    Tensor<T> x = ctx->randn(Shape{2, 8, 6, 6});
    GradCase<T> c;
    c.name = std::string("resfri-block(") + fusion_name(fusion) +
             (split ? ",split" : "") + ")";
    c.leaves.emplace_back("input", x);
    for (auto& p : reg.params) c.leaves.emplace_back(p.name, p.tensor);
    const T inv_c = T(1) / T(block->out_channels());
    c.loss = [block, x, inv_c]() {
      return sum(scale(global_avg_pool(block->forward(x, Mode::Train)), inv_c));
    };
    c.h_scale = 0.1;
    cases.push_back(std::move(c));
  }
}

// Every case the suite runs, in a fixed order. The same seed yields
// structurally identical cases in both precisions.
template <typename T>
std::vector<GradCase<T>> build_cases(uint64_t seed) {
  auto ctx = std::make_shared<SuiteCtx<T>>(seed);
  std::vector<GradCase<T>> cases;

  auto scalarized = [ctx](const std::string& name,
                          std::vector<std::pair<std::string, Tensor<T>>> leaves,
                          std::function<Tensor<T>()> op, const Shape& out_shape) {
    Tensor<T> w = ctx->weighting(out_shape);
    GradCase<T> c;
    c.name = name;
    c.leaves = std::move(leaves);
    c.loss = [op = std::move(op), w]() { return sum(mul(op(), w)); };
    return c;
  };

  {
    Tensor<T> x = ctx->randn(Shape{2, 3, 5, 5});
    ConvParams<T> p{ctx->randn(Shape{4, 3, 3, 3}, 0.5),
                    ctx->randn(Shape{4}, 0.5), 1, 1};
    cases.push_back(scalarized(
        "conv2d(3x3,s1,p1)",
        {{"input", x}, {"weight", p.weight}, {"bias", *p.bias}},
        [x, p] { return conv2d(x, p); }, Shape{2, 4, 5, 5}));
  }
  {
    Tensor<T> x = ctx->randn(Shape{1, 2, 6, 6});
    ConvParams<T> p{ctx->randn(Shape{3, 2, 2, 2}, 0.5), std::nullopt, 2, 0};
    cases.push_back(scalarized(
        "conv2d(2x2,s2,p0)", {{"input", x}, {"weight", p.weight}},
        [x, p] { return conv2d(x, p); }, Shape{1, 3, 3, 3}));
  }
  {
    Tensor<T> x = ctx->randn(Shape{1, 2, 7, 7});
    ConvParams<T> p{ctx->randn(Shape{2, 2, 5, 5}, 0.3),
                    ctx->randn(Shape{2}, 0.5), 1, 2};
    cases.push_back(scalarized(
        "conv2d(5x5,s1,p2)",
        {{"input", x}, {"weight", p.weight}, {"bias", *p.bias}},
        [x, p] { return conv2d(x, p); }, Shape{1, 2, 7, 7}));
  }
  {
    Tensor<T> x = ctx->randn(Shape{2, 2, 6, 6});
    cases.push_back(scalarized(
        "pool2d(max,k2,s2)", {{"input", x}},
        [x] { return pool2d(x, PoolKind::Max, 2, 2, 0); }, Shape{2, 2, 3, 3}));
    cases.push_back(scalarized(
        "pool2d(avg,k3,s1,p1)", {{"input", x}},
        [x] { return pool2d(x, PoolKind::Avg, 3, 1, 1); }, Shape{2, 2, 6, 6}));
    cases.push_back(scalarized(
        "pool2d(max,k3,s2,p1)", {{"input", x}},
        [x] { return pool2d(x, PoolKind::Max, 3, 2, 1); }, Shape{2, 2, 3, 3}));
  }
  {
    Tensor<T> x = ctx->randn(Shape{2, 3, 4, 4});
    BatchNormState<T> st = BatchNormState<T>::identity(3);
    st.gamma = ctx->randn(Shape{3}, 0.5);
    st.beta = ctx->randn(Shape{3}, 0.5);
    st.mode = Mode::Train;
    cases.push_back(scalarized(
        "batchnorm2d(train)",
        {{"input", x}, {"gamma", st.gamma}, {"beta", st.beta}},
        [x, st] {
          BatchNormState<T> local = st;
          return batchnorm2d(x, local);
        },
        Shape{2, 3, 4, 4}));
  }
  {
    Tensor<T> x = ctx->randn(Shape{2, 3, 4, 4});
    BatchNormState<T> st = BatchNormState<T>::identity(3);
    st.gamma = ctx->randn(Shape{3}, 0.5);
    st.beta = ctx->randn(Shape{3}, 0.5);
    for (auto& m : st.running_mean) m = T(ctx->draw_normal(0.3));
    for (auto& v : st.running_var) v = T(ctx->draw_uniform(0.5, 2.0));
    st.mode = Mode::Eval;
    cases.push_back(scalarized(
        "batchnorm2d(eval)",
        {{"input", x}, {"gamma", st.gamma}, {"beta", st.beta}},
        [x, st] {
          BatchNormState<T> local = st;
          return batchnorm2d(x, local);
        },
        Shape{2, 3, 4, 4}));
  }
  {
    Tensor<T> x = ctx->randn_offset(Shape{2, 3, 4, 4}, 0.15);
    cases.push_back(scalarized("relu", {{"input", x}}, [x] { return relu(x); },
                               Shape{2, 3, 4, 4}));
  }
  {
    Tensor<T> a = ctx->randn(Shape{2, 3, 3, 3});
    Tensor<T> b = ctx->randn(Shape{2, 3, 3, 3});
    cases.push_back(scalarized("add", {{"a", a}, {"b", b}},
                               [a, b] { return add(a, b); },
                               Shape{2, 3, 3, 3}));
    cases.push_back(scalarized("mul", {{"a", a}, {"b", b}},
                               [a, b] { return mul(a, b); },
                               Shape{2, 3, 3, 3}));
    cases.push_back(scalarized("scale", {{"a", a}},
                               [a] { return scale(a, T(1.5)); },
                               Shape{2, 3, 3, 3}));
    GradCase<T> c;
    c.name = "sum";
    c.leaves = {{"a", a}};
    c.loss = [a] { return sum(a); };
    cases.push_back(std::move(c));
  }
  {
    Tensor<T> a = ctx->randn(Shape{2, 2, 3, 3});
    Tensor<T> b = ctx->randn(Shape{2, 3, 3, 3});
    Tensor<T> c = ctx->randn(Shape{2, 1, 3, 3});
    cases.push_back(scalarized(
        "concat_channels", {{"a", a}, {"b", b}, {"c", c}},
        [a, b, c] { return concat_channels<T>({a, b, c}); },
        Shape{2, 6, 3, 3}));
  }
  {
    Tensor<T> x = ctx->randn(Shape{2, 4, 3, 3});
    cases.push_back(scalarized("slice_channels", {{"input", x}},
                               [x] { return slice_channels(x, 1, 3); },
                               Shape{2, 2, 3, 3}));
    cases.push_back(scalarized("flatten", {{"input", x}},
                               [x] { return flatten(x); }, Shape{2, 36}));
    cases.push_back(scalarized("global_avg_pool", {{"input", x}},
                               [x] { return global_avg_pool(x); },
                               Shape{2, 4}));
  }
  {
    Tensor<T> x = ctx->randn(Shape{3, 4});
    Tensor<T> w = ctx->randn(Shape{4, 5}, 0.5);
    Tensor<T> b = ctx->randn(Shape{5}, 0.5);
    cases.push_back(scalarized(
        "linear", {{"input", x}, {"weight", w}, {"bias", b}},
        [x, w, b] { return linear(x, w, std::optional<Tensor<T>>(b)); },
        Shape{3, 5}));
  }
  {
    Tensor<T> x = ctx->randn(Shape{2, 3, 4, 4});
    const uint64_t drop_seed = ctx->rng_.next_u64();
    cases.push_back(scalarized(
        "dropout(0.3)", {{"input", x}},
        [x, drop_seed] {
          Rng r(drop_seed);
          return dropout(x, 0.3, r, Mode::Train);
        },
        Shape{2, 3, 4, 4}));
  }
  {
    Tensor<T> logits = ctx->randn(Shape{4, 6});
    const std::vector<int> labels{0, 3, 5, 2};
    GradCase<T> c;
    c.name = "softmax_cross_entropy";
    c.leaves = {{"logits", logits}};
    c.loss = [logits, labels] {
      return softmax_cross_entropy(logits, labels);
    };
    cases.push_back(std::move(c));
  }
  {
    // conv -> pool -> batchnorm -> relu -> linear -> loss, end to end.
    Tensor<T> x = ctx->randn(Shape{2, 2, 6, 6});
    ConvParams<T> p{ctx->randn(Shape{3, 2, 3, 3}, 0.4), std::nullopt, 1, 1};
    BatchNormState<T> st = BatchNormState<T>::identity(3);
    Tensor<T> w = ctx->randn(Shape{27, 4}, 0.3);
    Tensor<T> b = ctx->randn(Shape{4}, 0.3);
    const std::vector<int> labels{1, 2};
    GradCase<T> c;
    c.name = "chain(conv-pool-bn-relu-linear-loss)";
    c.leaves = {{"input", x},        {"conv.weight", p.weight},
                {"bn.gamma", st.gamma}, {"bn.beta", st.beta},
                {"fc.weight", w},    {"fc.bias", b}};
    c.loss = [x, p, st, w, b, labels] {
      BatchNormState<T> local = st;
      local.mode = Mode::Train;
      Tensor<T> y = conv2d(x, p);
      y = pool2d(y, PoolKind::Max, 2, 2, 0);
      y = relu(batchnorm2d(y, local));
      y = linear(flatten(y), w, std::optional<Tensor<T>>(b));
      return softmax_cross_entropy(y, labels);
    };
    cases.push_back(std::move(c));
  }

  add_block_cases(ctx, cases);
  return cases;
}

template <typename T>
std::vector<std::vector<T>> analytic_grads(GradCase<T>& c) {
  for (auto& [label, leaf] : c.leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor<T> loss = c.loss();
  loss.backward();
  std::vector<std::vector<T>> grads;
  grads.reserve(c.leaves.size());
  for (auto& [label, leaf] : c.leaves)
    grads.emplace_back(leaf.grad().begin(), leaf.grad().end());
  return grads;
}

}  // namespace

// f64: analytic backward against f64 central differences on the same graph.
template <>
GradCheckReport run_gradcheck_suite<double>(uint64_t seed, double h) {
  GradCheckReport report;
  auto cases = build_cases<double>(seed);
  for (auto& c : cases) {
    auto grads = analytic_grads(c);
    const std::function<double()> f = [&c] { return c.loss().item(); };
    for (size_t i = 0; i < c.leaves.size(); ++i) {
      std::vector<double> numeric =
          finite_diff_grad(f, c.leaves[i].second, h * c.h_scale);
      report.cases.push_back(
          {c.name + "/" + c.leaves[i].first,
           max_rel_error(std::span<const double>(grads[i]),
                         std::span<const double>(numeric))});
    }
  }
  return report;
}

// f32: analytic backward of the f32 graph against f64 central differences of
// a value-identical f64 twin. The oracle always differentiates in 64-bit; the
// measured error is the 32-bit implementation's accumulation loss.
template <>
GradCheckReport run_gradcheck_suite<float>(uint64_t seed, float /*h*/) {
  GradCheckReport report;
  auto cases32 = build_cases<float>(seed);
  auto cases64 = build_cases<double>(seed);
  G2N_CHECK(cases32.size() == cases64.size(), "gradcheck: case count mismatch");
  for (size_t ci = 0; ci < cases32.size(); ++ci) {
    GradCase<float>& c32 = cases32[ci];
    GradCase<double>& c64 = cases64[ci];
    G2N_CHECK(c32.leaves.size() == c64.leaves.size(),
              "gradcheck: leaf count mismatch in ", c32.name);
    // Pin the twin to the exact f32 values (quantized draws should already
    // agree; leaf sync also covers values produced by layer initializers).
    for (size_t i = 0; i < c32.leaves.size(); ++i) {
      auto dst = c64.leaves[i].second.mutable_value();
      auto src = c32.leaves[i].second.value();
      G2N_CHECK(dst.size() == src.size(), "gradcheck: leaf shape mismatch in ",
                c32.name, "/", c32.leaves[i].first);
      for (size_t j = 0; j < dst.size(); ++j) dst[j] = double(src[j]);
    }
    auto grads32 = analytic_grads(c32);
    const std::function<double()> f = [&c64] { return c64.loss().item(); };
    for (size_t i = 0; i < c32.leaves.size(); ++i) {
      std::vector<double> numeric = finite_diff_grad(
          f, c64.leaves[i].second, kGradCheckStepF64 * c64.h_scale);
      std::vector<double> analytic(grads32[i].begin(), grads32[i].end());
      report.cases.push_back(
          {c32.name + "/" + c32.leaves[i].first,
           max_rel_error(std::span<const double>(analytic),
                         std::span<const double>(numeric))});
    }
  }
  return report;
}

template std::vector<float> finite_diff_grad<float>(
    const std::function<float()>&, Tensor<float>&, float);
template std::vector<double> finite_diff_grad<double>(
    const std::function<double()>&, Tensor<double>&, double);
template float max_rel_error<float>(std::span<const float>,
                                    std::span<const float>);
template double max_rel_error<double>(std::span<const double>,
                                      std::span<const double>);

}  // namespace g2n
