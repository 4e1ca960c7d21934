#pragma once

#include <functional>
#include <string>
#include <vector>

#include "g2n/tensor.hpp"

namespace g2n {

// Central-difference gradient of a scalar-valued function, element by
// element: (f(x + h e_i) - f(x - h e_i)) / (2h). `f` must be deterministic.
// The probe tensor is perturbed in place and restored bit-exactly.
template <typename T>
std::vector<T> finite_diff_grad(const std::function<T()>& f, Tensor<T>& x,
                                T h);

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|).
template <typename T>
T max_rel_error(std::span<const T> a, std::span<const T> b);

struct GradCheckCase {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double worst() const {
    double w = 0.0;
    for (const auto& c : cases) w = std::max(w, c.max_rel_err);
    return w;
  }
  bool all_below(double tol) const { return worst() < tol; }
};

// Runs backward-vs-central-differences agreement checks for every primitive
// op and for a tiny four-branch block in both fusion and split modes. The
// finite-difference oracle always evaluates in 64-bit: the f64 suite
// differentiates its own graphs with step `h`, while the f32 suite compares
// 32-bit backward results against the 64-bit oracle on a value-identical
// twin, so the measured error is the 32-bit accumulation loss.
template <typename T>
GradCheckReport run_gradcheck_suite(uint64_t seed, T h);

inline constexpr double kGradCheckStepF64 = 1e-5;
inline constexpr float kGradCheckStepF32 = 1e-5f;  // forwarded to the f64 oracle
inline constexpr double kGradCheckTolF64 = 1e-6;
inline constexpr double kGradCheckTolF32 = 1e-3;

}  // namespace g2n
