#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "g2n/ops.hpp"

using namespace g2n;

namespace {

template <typename T>
Tensor<T> tensor4(int64_t n, int64_t c, int64_t h, int64_t w,
                  std::vector<T> values) {
  return Tensor<T>::from(Shape{n, c, h, w}, std::move(values));
}

template <typename T>
ConvParams<T> conv_params(Shape wshape, std::vector<T> w,
                          std::optional<std::vector<T>> bias, int stride,
                          int padding) {
  ConvParams<T> p;
  p.weight = Tensor<T>::from(wshape, std::move(w));
  if (bias)
    p.bias = Tensor<T>::from(Shape{wshape.dim(0)}, std::move(*bias));
  p.stride = stride;
  p.padding = padding;
  return p;
}

}  // namespace

TEST_CASE("shape basics and invariants") {
  Shape s{2, 3, 4, 5};
  CHECK(s.rank() == 4);
  CHECK(s.numel() == 120);
  CHECK(s.n() == 2);
  CHECK(s.w() == 5);
  CHECK(s.str() == "[2x3x4x5]");
  CHECK_THROWS_AS(Shape{0, 2}, Error);
  CHECK_THROWS_AS((Shape{1, 2, 3, 4, 5}), Error);
  CHECK(Tensor<float>::zeros(s).numel() == 120);
  CHECK_THROWS_AS(Tensor<float>::from(s, std::vector<float>(7)), Error);
}

TEST_CASE("conv2d: scalar scaling of ones") {
  auto x = tensor4<float>(1, 1, 3, 3, std::vector<float>(9, 1.0f));
  auto p = conv_params<float>(Shape{1, 1, 1, 1}, {2.0f},
                              std::vector<float>{0.0f}, 1, 0);
  auto y = conv2d(x, p);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (float v : y.value()) CHECK(v == 2.0f);
}

TEST_CASE("conv2d: hand cross-correlation") {
  auto x = tensor4<float>(1, 1, 2, 2, {1, 2, 3, 4});
  auto p = conv_params<float>(Shape{1, 1, 2, 2}, {1, 0, 0, 1},
                              std::vector<float>{0.0f}, 1, 0);
  auto y = conv2d(x, p);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 5.0f);  // 1*1 + 4*1
}

TEST_CASE("conv2d: identity kernel is the identity map in both precisions") {
  auto check_identity = [](auto tag) {
    using T = decltype(tag);
    Rng rng(11);
    std::vector<T> xv(2 * 3 * 7 * 5);
    for (auto& v : xv) v = T(rng.normal());
    auto x = Tensor<T>::from(Shape{2, 3, 7, 5}, xv);
    // One 3x3 kernel per output channel, 1 at the center of the matching
    // input channel.
    std::vector<T> w(3 * 3 * 9, T(0));
    for (int c = 0; c < 3; ++c) w[size_t(c * 3 * 9 + c * 9 + 4)] = T(1);
    ConvParams<T> p;
    p.weight = Tensor<T>::from(Shape{3, 3, 3, 3}, w);
    p.stride = 1;
    p.padding = 1;
    auto y = conv2d(x, p);
    REQUIRE(y.shape() == x.shape());
    for (size_t i = 0; i < xv.size(); ++i) CHECK(y.value()[i] == xv[i]);
  };
  check_identity(float{});
  check_identity(double{});
}

TEST_CASE("conv2d: error names the offending dimension") {
  auto x = tensor4<float>(1, 3, 4, 4, std::vector<float>(48, 0.f));
  auto p = conv_params<float>(Shape{2, 4, 1, 1}, std::vector<float>(8, 0.f),
                              std::nullopt, 1, 0);
  CHECK_THROWS_WITH_AS(conv2d(x, p),
                       doctest::Contains("input channel dimension C=3"), Error);
  auto p2 = conv_params<float>(Shape{2, 3, 5, 5}, std::vector<float>(150, 0.f),
                               std::nullopt, 1, 0);
  CHECK_THROWS_WITH_AS(conv2d(x, p2), doctest::Contains("output height"),
                       Error);
}

TEST_CASE("conv2d: output extents follow the closed form over (k,s,p) grid") {
  Rng rng(3);
  for (int k : {1, 3, 5})
    for (int s : {1, 2})
      for (int p : {0, 1, 2}) {
        for (int64_t hw : {7, 16, 32}) {
          const int64_t expect = (hw + 2 * p - k) / s + 1;
          if (expect < 1) continue;
          std::vector<float> xv(size_t(2 * hw * hw));
          for (auto& v : xv) v = float(rng.normal());
          auto x = Tensor<float>::from(Shape{1, 2, hw, hw}, xv);
          ConvParams<float> cp;
          cp.weight = Tensor<float>::zeros(Shape{3, 2, k, k});
          cp.stride = s;
          cp.padding = p;
          auto y = conv2d(x, cp);
          CHECK(y.shape() == Shape{1, 3, expect, expect});
          auto z = pool2d(x, PoolKind::Avg, k, s, p);
          CHECK(z.shape() == Shape{1, 2, expect, expect});
        }
      }
}

TEST_CASE("pool2d: hand means and maxima") {
  auto x = tensor4<float>(1, 1, 2, 2, {1, 2, 3, 4});
  CHECK(pool2d(x, PoolKind::Avg, 2, 2, 0).item() == 2.5f);
  CHECK(pool2d(x, PoolKind::Max, 2, 2, 0).item() == 4.0f);
  auto y = pool2d(x, PoolKind::Avg, 1, 1, 0);
  for (size_t i = 0; i < 4; ++i) CHECK(y.value()[i] == x.value()[i]);
  CHECK_THROWS_WITH_AS(pool2d(x, PoolKind::Max, 5, 1, 1),
                       doctest::Contains("larger than padded input"), Error);
  CHECK_THROWS_AS(pool2d(x, PoolKind::Avg, 2, 1, 2), Error);
}

TEST_CASE("pool2d: avg divides by full window area including padding") {
  // Single pixel of value 8 with k=2, p=1: every window sees it once.
  auto x = tensor4<float>(1, 1, 1, 1, {8});
  auto y = pool2d(x, PoolKind::Avg, 2, 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (float v : y.value()) CHECK(v == 2.0f);  // 8 / (2*2)
}

TEST_CASE("batchnorm2d: eval identity and constant output") {
  auto x = tensor4<float>(1, 1, 2, 2, {0.5f, -1.0f, 2.0f, 0.0f});
  auto st = BatchNormState<float>::identity(1);
  st.mode = Mode::Eval;
  auto y = batchnorm2d(x, st);
  for (size_t i = 0; i < 4; ++i)
    CHECK(y.value()[i] == doctest::Approx(x.value()[i]).epsilon(1e-4));

  auto st2 = BatchNormState<float>::identity(1);
  st2.gamma.mutable_value()[0] = 0.0f;
  st2.beta.mutable_value()[0] = 7.0f;
  st2.mode = Mode::Eval;
  auto y2 = batchnorm2d(x, st2);
  for (float v : y2.value()) CHECK(v == 7.0f);
}

TEST_CASE("batchnorm2d: train mode hand statistics") {
  // Batch values {1, 3} in one channel: mean 2, biased variance 1.
  auto x = Tensor<double>::from(Shape{2, 1, 1, 1}, {1.0, 3.0});
  auto st = BatchNormState<double>::identity(1);
  st.epsilon = 1e-12;
  st.mode = Mode::Train;
  auto y = batchnorm2d(x, st);
  CHECK(y.value()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y.value()[1] == doctest::Approx(1.0).epsilon(1e-6));
  // Running stats moved toward the batch statistics.
  CHECK(st.running_mean[0] == doctest::Approx(0.2));
  CHECK(st.running_var[0] == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased var 2
}

TEST_CASE("batchnorm2d: train output is normalized per channel") {
  Rng rng(5);
  std::vector<float> xv(4 * 3 * 8 * 8);
  for (auto& v : xv) v = float(rng.normal(1.5, 2.0));
  auto x = Tensor<float>::from(Shape{4, 3, 8, 8}, xv);
  auto st = BatchNormState<float>::identity(3);
  st.mode = Mode::Train;
  auto y = batchnorm2d(x, st);
  const int64_t plane = 64, m = 4 * plane;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < plane; ++i)
        mean += y.value()[size_t((n * 3 + c) * plane + i)];
    mean /= m;
    for (int64_t n = 0; n < 4; ++n)
      for (int64_t i = 0; i < plane; ++i) {
        const double d = y.value()[size_t((n * 3 + c) * plane + i)] - mean;
        var += d * d;
      }
    var /= m;
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm2d: channel mismatch error") {
  auto x = tensor4<float>(1, 2, 2, 2, std::vector<float>(8, 1.f));
  auto st = BatchNormState<float>::identity(3);
  CHECK_THROWS_WITH_AS(batchnorm2d(x, st), doctest::Contains("channel"), Error);
}

TEST_CASE("relu: definition") {
  auto x = Tensor<float>::from(Shape{3}, {-1.f, 0.f, 2.f});
  auto y = relu(x);
  CHECK(y.value()[0] == 0.f);
  CHECK(y.value()[1] == 0.f);
  CHECK(y.value()[2] == 2.f);
  auto neg = relu(Tensor<float>::from(Shape{2}, {-3.f, -0.5f}));
  for (float v : neg.value()) CHECK(v == 0.f);
  auto pos = relu(Tensor<float>::from(Shape{2}, {3.f, 0.5f}));
  CHECK(pos.value()[0] == 3.f);
  CHECK(pos.value()[1] == 0.5f);
}

TEST_CASE("concat_channels and slice_channels") {
  auto a = tensor4<float>(1, 2, 1, 2, {1, 2, 3, 4});
  auto b = tensor4<float>(1, 3, 1, 2, {5, 6, 7, 8, 9, 10});
  auto single = concat_channels<float>({a});
  for (size_t i = 0; i < 4; ++i) CHECK(single.value()[i] == a.value()[i]);

  auto y = concat_channels<float>({a, b});
  CHECK(y.shape() == Shape{1, 5, 1, 2});
  CHECK(y.value()[0] == 1.f);  // part 1 occupies the first two channels
  CHECK(y.value()[3] == 4.f);
  CHECK(y.value()[4] == 5.f);

  auto back = slice_channels(y, 0, 2);
  for (size_t i = 0; i < 4; ++i) CHECK(back.value()[i] == a.value()[i]);

  auto c = tensor4<float>(2, 2, 1, 2, std::vector<float>(8, 0.f));
  CHECK_THROWS_WITH_AS(concat_channels<float>({a, c}),
                       doctest::Contains("batch/spatial"), Error);
}

TEST_CASE("add: elementwise") {
  auto x = Tensor<float>::from(Shape{2}, {1, 2});
  auto y = Tensor<float>::from(Shape{2}, {3, 4});
  auto z = add(x, y);
  CHECK(z.value()[0] == 4.f);
  CHECK(z.value()[1] == 6.f);
  auto zeros = Tensor<float>::zeros(Shape{2});
  auto same = add(x, zeros);
  CHECK(same.value()[0] == 1.f);
  auto minus = add(x, scale(x, -1.f));
  for (float v : minus.value()) CHECK(v == 0.f);
  CHECK_THROWS_AS(add(x, Tensor<float>::zeros(Shape{3})), Error);
}

TEST_CASE("linear: affine map") {
  auto x = Tensor<float>::from(Shape{2, 2}, {1, 2, 3, 4});
  auto eye = Tensor<float>::from(Shape{2, 2}, {1, 0, 0, 1});
  auto zero_bias = Tensor<float>::zeros(Shape{2});
  auto y = linear(x, eye, std::optional<Tensor<float>>(zero_bias));
  for (size_t i = 0; i < 4; ++i) CHECK(y.value()[i] == x.value()[i]);

  auto w0 = Tensor<float>::zeros(Shape{2, 3});
  auto b = Tensor<float>::from(Shape{3}, {5, 6, 7});
  auto rows = linear(x, w0, std::optional<Tensor<float>>(b));
  CHECK(rows.value()[0] == 5.f);
  CHECK(rows.value()[3] == 5.f);
  CHECK(rows.value()[5] == 7.f);

  auto v = Tensor<float>::from(Shape{1, 2}, {1, 2});
  auto w1 = Tensor<float>::from(Shape{2, 1}, {1, 1});
  auto b0 = Tensor<float>::zeros(Shape{1});
  CHECK(linear(v, w1, std::optional<Tensor<float>>(b0)).item() == 3.f);

  CHECK_THROWS_WITH_AS(
      linear(x, Tensor<float>::zeros(Shape{3, 2}), std::nullopt),
      doctest::Contains("feature dimension"), Error);
}

TEST_CASE("softmax_cross_entropy: uniform, saturated, and hand gradients") {
  auto uniform = Tensor<double>::zeros(Shape{1, 10}).set_requires_grad(true);
  auto loss = softmax_cross_entropy(uniform, {3});
  CHECK(loss.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  auto sat = Tensor<double>::zeros(Shape{1, 4});
  sat.mutable_value()[2] = 1000.0;
  CHECK(softmax_cross_entropy(sat, {2}).item() == doctest::Approx(0.0));

  auto two = Tensor<double>::from(Shape{1, 2}, {0.0, 0.0});
  two.set_requires_grad(true);
  auto l2 = softmax_cross_entropy(two, {0});
  CHECK(l2.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  l2.backward();
  CHECK(two.grad()[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(two.grad()[1] == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(softmax_cross_entropy(two, {2}),
                       doctest::Contains("out of range"), Error);
}

TEST_CASE("backward: linear scaling and squares") {
  auto x = Tensor<double>::full(Shape{2, 2}, 1.5).set_requires_grad(true);
  auto y = sum(scale(x, 2.0));
  y.backward();
  for (double g : x.grad()) CHECK(g == 2.0);

  auto z = Tensor<double>::full(Shape{1}, 3.0).set_requires_grad(true);
  auto s = sum(mul(z, z));
  s.backward();
  CHECK(z.grad()[0] == 6.0);
}

TEST_CASE("backward: reuse in two branches sums the branch gradients") {
  auto x = Tensor<double>::full(Shape{3}, 2.0).set_requires_grad(true);
  // y = sum(x*x) + sum(2x): dy/dx = 2x + 2 = 6
  auto y = add(mul(x, x), scale(x, 2.0));
  sum(y).backward();
  for (double g : x.grad()) CHECK(g == 6.0);
}

TEST_CASE("backward: error contracts") {
  auto x = Tensor<float>::full(Shape{2}, 1.f).set_requires_grad(true);
  auto vec = scale(x, 2.f);
  CHECK_THROWS_WITH_AS(vec.backward(), doctest::Contains("scalar root"), Error);

  auto s = sum(x);
  s.backward();
  CHECK_THROWS_WITH_AS(s.backward(), doctest::Contains("already ran"), Error);
  s.zero_grad();
  x.zero_grad();
  s.backward();  // reset allows a second pass
  CHECK(x.grad()[0] == 1.f);
}

TEST_CASE("forward determinism: fixed seed gives bitwise-identical outputs") {
  auto run = [] {
    Rng rng(99);
    std::vector<float> xv(2 * 3 * 8 * 8);
    for (auto& v : xv) v = float(rng.normal());
    auto x = Tensor<float>::from(Shape{2, 3, 8, 8}, xv);
    ConvParams<float> p;
    std::vector<float> w(4 * 3 * 9);
    for (auto& v : w) v = float(rng.normal(0.0, 0.2));
    p.weight = Tensor<float>::from(Shape{4, 3, 3, 3}, w);
    p.stride = 1;
    p.padding = 1;
    auto st = BatchNormState<float>::identity(4);
    st.mode = Mode::Train;
    auto y = relu(batchnorm2d(conv2d(x, p), st));
    return std::vector<float>(y.value().begin(), y.value().end());
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("dropout: eval identity, train scaling and determinism") {
  Rng rng(4);
  std::vector<float> xv(1000, 1.0f);
  auto x = Tensor<float>::from(Shape{1000}, xv);
  Rng r1(77);
  auto y = dropout(x, 0.25, r1, Mode::Train);
  int64_t kept = 0;
  for (float v : y.value()) {
    CHECK((v == 0.0f || v == doctest::Approx(1.0f / 0.75f)));
    kept += v != 0.0f;
  }
  CHECK(kept > 600);
  CHECK(kept < 900);
  Rng r2(77);
  auto y2 = dropout(x, 0.25, r2, Mode::Eval);
  CHECK(y2.value()[0] == 1.0f);
  Rng r3(77);
  auto y3 = dropout(x, 0.25, r3, Mode::Train);
  for (size_t i = 0; i < 1000; ++i) CHECK(y3.value()[i] == y.value()[i]);
}
