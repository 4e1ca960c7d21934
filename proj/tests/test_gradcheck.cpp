#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "g2n/gradcheck.hpp"
#include "g2n/ops.hpp"

using namespace g2n;

namespace {

Tensor<double> randn(Rng& rng, const Shape& shape, double stddev = 1.0) {
  std::vector<double> v(size_t(shape.numel()));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor<double>::from(shape, std::move(v));
}

// Backward vs central differences for d(loss)/d(probe), f64, h = 1e-5.
double agreement(Tensor<double>& probe,
                 const std::function<Tensor<double>()>& make_loss) {
  probe.set_requires_grad(true);
  probe.zero_grad();
  Tensor<double> loss = make_loss();
  loss.backward();
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());
  const std::function<double()> f = [&] { return make_loss().item(); };
  std::vector<double> numeric = finite_diff_grad(f, probe, 1e-5);
  return max_rel_error(std::span<const double>(analytic),
                       std::span<const double>(numeric));
}

}  // namespace

TEST_CASE("finite_diff_grad: sum has all-ones gradient") {
  auto x = Tensor<double>::from(Shape{2, 3}, {1, -2, 0.5, 3, -1, 4});
  const std::function<double()> f = [&] { return sum(x).item(); };
  auto g = finite_diff_grad(f, x, 1e-5);
  for (double v : g) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("finite_diff_grad: sum of squares at [1,2] is [2,4]") {
  auto x = Tensor<double>::from(Shape{2}, {1.0, 2.0});
  const std::function<double()> f = [&] { return sum(mul(x, x)).item(); };
  auto g = finite_diff_grad(f, x, 1e-5);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("finite_diff_grad: perturbation restores the probe bit-exactly") {
  auto x = Tensor<double>::from(Shape{3}, {0.1, -0.2, 0.3});
  std::vector<double> before(x.value().begin(), x.value().end());
  const std::function<double()> f = [&] { return sum(x).item(); };
  finite_diff_grad(f, x, 1e-4);
  for (size_t i = 0; i < 3; ++i) CHECK(x.value()[i] == before[i]);
}

TEST_CASE("oracle agreement: >= 20 random tensors per op") {
  const double tol = 1e-6;
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(1000 + trial);

    // conv2d wrt input and weight
    {
      auto x = randn(rng, Shape{1, 2, 5, 5});
      ConvParams<double> p{randn(rng, Shape{3, 2, 3, 3}, 0.4),
                           randn(rng, Shape{3}, 0.4), 1, 1};
      auto loss = [&] { return sum(scale(conv2d(x, p), 0.05)); };
      CHECK(agreement(x, loss) < tol);
      CHECK(agreement(p.weight, loss) < tol);
      CHECK(agreement(*p.bias, loss) < tol);
    }
    // pooling
    {
      auto x = randn(rng, Shape{1, 2, 6, 6});
      auto lmax = [&] { return sum(scale(pool2d(x, PoolKind::Max, 2, 2, 0), 0.1)); };
      auto lavg = [&] { return sum(scale(pool2d(x, PoolKind::Avg, 3, 1, 1), 0.1)); };
      CHECK(agreement(x, lmax) < tol);
      CHECK(agreement(x, lavg) < tol);
    }
    // batchnorm train and eval
    {
      auto x = randn(rng, Shape{2, 2, 3, 3});
      auto st = BatchNormState<double>::identity(2);
      st.gamma = randn(rng, Shape{2}, 0.5);
      st.beta = randn(rng, Shape{2}, 0.5);
      auto ltrain = [&] {
        auto local = st;
        local.mode = Mode::Train;
        return sum(scale(batchnorm2d(x, local), 0.1));
      };
      auto leval = [&] {
        auto local = st;
        local.mode = Mode::Eval;
        return sum(scale(batchnorm2d(x, local), 0.1));
      };
      CHECK(agreement(x, ltrain) < tol);
      CHECK(agreement(st.gamma, ltrain) < tol);
      CHECK(agreement(st.beta, ltrain) < tol);
      CHECK(agreement(x, leval) < tol);
      CHECK(agreement(st.gamma, leval) < tol);
    }
    // relu away from the kink, elementwise ops, reductions
    {
      std::vector<double> v(24);
      for (auto& e : v) {
        e = rng.normal();
        e += e >= 0 ? 0.2 : -0.2;
      }
      auto x = Tensor<double>::from(Shape{2, 3, 2, 2}, v);
      auto w = randn(rng, Shape{2, 3, 2, 2}, 0.3);
      auto l = [&] { return sum(mul(relu(x), w)); };
      CHECK(agreement(x, l) < tol);

      auto a = randn(rng, Shape{2, 5});
      auto lin_w = randn(rng, Shape{5, 3}, 0.4);
      auto lin_b = randn(rng, Shape{3}, 0.4);
      auto ll = [&] {
        return sum(
            scale(linear(a, lin_w, std::optional<Tensor<double>>(lin_b)), 0.2));
      };
      CHECK(agreement(a, ll) < tol);
      CHECK(agreement(lin_w, ll) < tol);
      CHECK(agreement(lin_b, ll) < tol);
    }
    // composed chain conv -> bn -> relu -> sum per the oracle contract
    {
      auto x = randn(rng, Shape{1, 2, 4, 4});
      ConvParams<double> p{randn(rng, Shape{2, 2, 3, 3}, 0.4), std::nullopt, 1,
                           1};
      auto st = BatchNormState<double>::identity(2);
      auto l = [&] {
        auto local = st;
        local.mode = Mode::Train;
        return sum(scale(relu(batchnorm2d(conv2d(x, p), local)), 0.05));
      };
      CHECK(agreement(x, l) < tol);
      CHECK(agreement(p.weight, l) < tol);
    }
    // concat/slice/softmax
    {
      auto a = randn(rng, Shape{1, 2, 3, 3});
      auto b = randn(rng, Shape{1, 1, 3, 3});
      auto l = [&] {
        return sum(scale(slice_channels(concat_channels<double>({a, b}), 1, 3),
                         0.2));
      };
      CHECK(agreement(a, l) < tol);
      CHECK(agreement(b, l) < tol);

      auto logits = randn(rng, Shape{3, 5});
      const std::vector<int> labels{4, 0, 2};
      auto lsm = [&] { return softmax_cross_entropy(logits, labels); };
      CHECK(agreement(logits, lsm) < tol);
    }
  }
}

TEST_CASE("suite: f64 run is clean at its tolerance") {
  GradCheckReport rep = run_gradcheck_suite<double>(7, kGradCheckStepF64);
  CHECK(rep.cases.size() > 40);
  CHECK(rep.all_below(kGradCheckTolF64));
}

TEST_CASE("suite: f32 backward matches the f64 oracle at its tolerance") {
  GradCheckReport rep = run_gradcheck_suite<float>(7, kGradCheckStepF32);
  CHECK(rep.cases.size() > 40);
  CHECK(rep.all_below(kGradCheckTolF32));
}
