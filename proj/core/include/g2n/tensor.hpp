#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "g2n/error.hpp"
#include "g2n/shape.hpp"

namespace g2n {

// Dense N-d value (rank <= 4) with an optional gradient slot and the graph
// links reverse-mode differentiation needs. Tensor is a cheap shared handle;
// values are written once at construction and stay immutable except for the
// grad slot and explicit leaf updates (optimizer steps, test setup).
template <typename T>
class Tensor {
  struct Impl {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool backward_ran = false;
    std::vector<std::shared_ptr<Impl>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void()> backprop;
  };

 public:
  using value_type = T;

  Tensor() : impl_(nullptr) {}

  static Tensor zeros(const Shape& shape) {
    return Tensor(shape, std::vector<T>(size_t(shape.numel()), T(0)));
  }
  static Tensor full(const Shape& shape, T v) {
    return Tensor(shape, std::vector<T>(size_t(shape.numel()), v));
  }
  static Tensor from(const Shape& shape, std::vector<T> values) {
    G2N_CHECK(int64_t(values.size()) == shape.numel(), "tensor data length ",
              values.size(), " does not match shape ", shape.str());
    return Tensor(shape, std::move(values));
  }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  int64_t numel() const { return check().shape.numel(); }

  std::span<const T> value() const { return check().value; }
  // Direct write access; intended for leaf tensors (parameters, buffers) and
  // test setup only. Mutating a tensor that already participates in a graph
  // invalidates that graph.
  std::span<T> mutable_value() { return check().value; }

  bool requires_grad() const { return check().requires_grad; }
  Tensor& set_requires_grad(bool b) {
    check().requires_grad = b;
    return *this;
  }

  bool has_grad() const { return defined() && !impl_->grad.empty(); }
  std::span<const T> grad() const {
    G2N_CHECK(has_grad(), "tensor has no gradient; call backward() first");
    return impl_->grad;
  }
  void zero_grad() {
    auto& im = check();
    std::fill(im.grad.begin(), im.grad.end(), T(0));
    im.backward_ran = false;
  }

  T item() const {
    G2N_CHECK(numel() == 1, "item() requires a 1-element tensor, shape is ",
              shape().str());
    return impl_->value[0];
  }

  // Element access by NCHW index (rank-4) for tests and loaders.
  T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    const Shape& s = shape();
    return impl_->value[size_t(((n * s.c() + c) * s.h() + h) * s.w() + w)];
  }

  // Runs reverse-mode differentiation from this scalar root, accumulating
  // gradients (summed over all uses) into every requires_grad ancestor.
  // Running backward twice on the same root without zero_grad() is an error.
  void backward() const {
    auto& root = check();
    G2N_CHECK(root.shape.numel() == 1,
              "backward() requires a scalar root, shape is ", root.shape.str());
    G2N_CHECK(!root.backward_ran,
              "backward() already ran on this root; zero_grad() to reset");
    G2N_CHECK(root.requires_grad,
              "backward() root does not require gradients");

    // Iterative post-order topological sort over the requires_grad subgraph.
    std::vector<Impl*> order;
    std::unordered_set<Impl*> visited;
    std::vector<std::pair<Impl*, size_t>> stack;
    stack.emplace_back(&root, 0);
    visited.insert(&root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Impl* p = node->parents[next++].get();
        if (p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    ensure_grad(root);
    root.grad[0] += T(1);
    // Post-order means every consumer precedes its producers when the list is
    // walked back to front.
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Impl* node = *it;
      if (node->backprop && !node->grad.empty()) node->backprop();
    }
    root.backward_ran = true;
  }

  // --- op-author interface -------------------------------------------------

  // Builds an op result. `backward` receives the result's grad span and must
  // accumulate into the parents via acc_grad(). It is only invoked when the
  // result participates in a backward pass.
  template <typename BackFn>
  static Tensor make_op(const Shape& shape, std::vector<T> values,
                        std::vector<Tensor> parents, BackFn&& backward) {
    Tensor out(shape, std::move(values));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.check().requires_grad;
    if (!needs) return out;
    out.impl_->requires_grad = true;
    out.impl_->parents.reserve(parents.size());
    for (const auto& p : parents) out.impl_->parents.push_back(p.impl_);
    Impl* self = out.impl_.get();
    out.impl_->backprop = [self, fn = std::forward<BackFn>(backward)]() mutable {
      fn(std::span<const T>(self->grad));
    };
    return out;
  }

  // Accumulates `delta[i] * scale` into this tensor's grad slot.
  void acc_grad(std::span<const T> delta) {
    auto& im = check();
    if (!im.requires_grad) return;
    ensure_grad(im);
    G2N_CHECK(delta.size() == im.grad.size(), "gradient length mismatch");
    for (size_t i = 0; i < delta.size(); ++i) im.grad[i] += delta[i];
  }

  // Grad storage for in-place accumulation by op backward bodies.
  std::span<T> grad_buffer() {
    auto& im = check();
    ensure_grad(im);
    return im.grad;
  }

  bool same_impl(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  Tensor(const Shape& shape, std::vector<T> values)
      : impl_(std::make_shared<Impl>()) {
    impl_->shape = shape;
    impl_->value = std::move(values);
    G2N_CHECK(int64_t(impl_->value.size()) == shape.numel(),
              "tensor data length does not match shape ", shape.str());
  }

  Impl& check() const {
    G2N_CHECK(impl_ != nullptr, "use of undefined tensor");
    return *impl_;
  }

  static void ensure_grad(Impl& im) {
    if (im.grad.empty()) im.grad.assign(im.value.size(), T(0));
  }

  std::shared_ptr<Impl> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace g2n
