#include "g2n/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace g2n {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

int64_t conv_extent(int64_t in, int64_t k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

// col layout: row r = (c*kH + kh)*kW + kw, one column per output position.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kH, int64_t kW,
            int stride, int padding, int64_t oH, int64_t oW, T* col) {
  const int64_t ow_total = oH * oW;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t kh = 0; kh < kH; ++kh) {
      for (int64_t kw = 0; kw < kW; ++kw) {
        T* row = col + ((c * kH + kh) * kW + kw) * ow_total;
        for (int64_t oh = 0; oh < oH; ++oh) {
          const int64_t ih = oh * stride - padding + kh;
          if (ih < 0 || ih >= H) {
            std::fill(row + oh * oW, row + (oh + 1) * oW, T(0));
            continue;
          }
          const T* src = x + (c * H + ih) * W;
          for (int64_t ow = 0; ow < oW; ++ow) {
            const int64_t iw = ow * stride - padding + kw;
            row[oh * oW + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t kH,
                int64_t kW, int stride, int padding, int64_t oH, int64_t oW,
                T* dx) {
  const int64_t ow_total = oH * oW;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t kh = 0; kh < kH; ++kh) {
      for (int64_t kw = 0; kw < kW; ++kw) {
        const T* row = col + ((c * kH + kh) * kW + kw) * ow_total;
        for (int64_t oh = 0; oh < oH; ++oh) {
          const int64_t ih = oh * stride - padding + kh;
          if (ih < 0 || ih >= H) continue;
          T* dst = dx + (c * H + ih) * W;
          for (int64_t ow = 0; ow < oW; ++ow) {
            const int64_t iw = ow * stride - padding + kw;
            if (iw >= 0 && iw < W) dst[iw] += row[oh * oW + ow];
          }
        }
      }
    }
  }
}

template <typename T>
void check_rank4(const Tensor<T>& x, const char* op) {
  G2N_CHECK(x.shape().rank() == 4, op, ": expected rank-4 input, got shape ",
            x.shape().str());
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params) {
  check_rank4(input, "conv2d");
  const Tensor<T>& w = params.weight;
  G2N_CHECK(w.shape().rank() == 4, "conv2d: weight must be rank 4, got ",
            w.shape().str());
  const int64_t N = input.shape().n(), C = input.shape().c();
  const int64_t H = input.shape().h(), W = input.shape().w();
  const int64_t outC = params.out_channels(), inC = params.in_channels();
  const int64_t kH = params.kernel_h(), kW = params.kernel_w();
  G2N_CHECK(C == inC, "conv2d: input channel dimension C=", C,
            " does not match weight input channels inC=", inC);
  G2N_CHECK(params.stride >= 1, "conv2d: stride must be >= 1, got ",
            params.stride);
  G2N_CHECK(params.padding >= 0, "conv2d: padding must be >= 0, got ",
            params.padding);
  if (params.bias) {
    G2N_CHECK(params.bias->shape().rank() == 1 &&
                  params.bias->shape().dim(0) == outC,
              "conv2d: bias length ", params.bias->shape().str(),
              " does not match out channels ", outC);
  }
  const int64_t oH = conv_extent(H, kH, params.stride, params.padding);
  const int64_t oW = conv_extent(W, kW, params.stride, params.padding);
  G2N_CHECK(oH >= 1, "conv2d: output height ", oH, " < 1 for H=", H, " k=", kH,
            " s=", params.stride, " p=", params.padding);
  G2N_CHECK(oW >= 1, "conv2d: output width ", oW, " < 1 for W=", W, " k=", kW,
            " s=", params.stride, " p=", params.padding);

  const int64_t K = inC * kH * kW;
  const int64_t oHW = oH * oW;
  std::vector<T> out(size_t(N * outC * oHW));
  std::vector<T> col(size_t(K * oHW));
  CMapM<T> wm(w.value().data(), outC, K);
  for (int64_t n = 0; n < N; ++n) {
    im2col(input.value().data() + n * C * H * W, C, H, W, kH, kW, params.stride,
           params.padding, oH, oW, col.data());
    CMapM<T> cm(col.data(), K, oHW);
    MapM<T> om(out.data() + n * outC * oHW, outC, oHW);
    om.noalias() = wm * cm;
    if (params.bias) {
      const T* b = params.bias->value().data();
      for (int64_t oc = 0; oc < outC; ++oc)
        om.row(oc).array() += b[oc];
    }
  }

  Tensor<T> x = input;
  Tensor<T> weight = w;
  std::optional<Tensor<T>> bias = params.bias;
  const int stride = params.stride, padding = params.padding;
  std::vector<Tensor<T>> parents{input, w};
  if (bias) parents.push_back(*bias);
  return Tensor<T>::make_op(
      Shape{N, outC, oH, oW}, std::move(out), parents,
      [=](std::span<const T> g) mutable {
        const int64_t K2 = inC * kH * kW;
        std::vector<T> col2(size_t(K2 * oHW));
        if (weight.requires_grad()) {
          std::span<T> dw = weight.grad_buffer();
          MapM<T> dwm(dw.data(), outC, K2);
          for (int64_t n = 0; n < N; ++n) {
            im2col(x.value().data() + n * C * H * W, C, H, W, kH, kW, stride,
                   padding, oH, oW, col2.data());
            CMapM<T> cm(col2.data(), K2, oHW);
            CMapM<T> gm(g.data() + n * outC * oHW, outC, oHW);
            dwm.noalias() += gm * cm.transpose();
          }
        }
        if (x.requires_grad()) {
          std::span<T> dx = x.grad_buffer();
          CMapM<T> wm2(weight.value().data(), outC, K2);
          for (int64_t n = 0; n < N; ++n) {
            CMapM<T> gm(g.data() + n * outC * oHW, outC, oHW);
            MapM<T> cm(col2.data(), K2, oHW);
            cm.noalias() = wm2.transpose() * gm;
            col2im_add(col2.data(), C, H, W, kH, kW, stride, padding, oH, oW,
                       dx.data() + n * C * H * W);
          }
        }
        if (bias && bias->requires_grad()) {
          std::span<T> db = bias->grad_buffer();
          for (int64_t n = 0; n < N; ++n)
            for (int64_t oc = 0; oc < outC; ++oc) {
              const T* gp = g.data() + (n * outC + oc) * oHW;
              T acc = T(0);
              for (int64_t i = 0; i < oHW; ++i) acc += gp[i];
              db[oc] += acc;
            }
        }
      });
}

template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind, int k, int stride,
                 int padding) {
  check_rank4(input, "pool2d");
  G2N_CHECK(k >= 1, "pool2d: kernel must be >= 1, got ", k);
  G2N_CHECK(stride >= 1, "pool2d: stride must be >= 1, got ", stride);
  G2N_CHECK(padding >= 0 && padding < k, "pool2d: padding must be in [0, k), got ",
            padding, " for k=", k);
  const int64_t N = input.shape().n(), C = input.shape().c();
  const int64_t H = input.shape().h(), W = input.shape().w();
  G2N_CHECK(k <= H + 2 * padding && k <= W + 2 * padding,
            "pool2d: window k=", k, " larger than padded input ",
            H + 2 * padding, "x", W + 2 * padding);
  const int64_t oH = conv_extent(H, k, stride, padding);
  const int64_t oW = conv_extent(W, k, stride, padding);
  G2N_CHECK(oH >= 1 && oW >= 1, "pool2d: empty output for input ",
            input.shape().str());

  const int64_t numel_out = N * C * oH * oW;
  std::vector<T> out(static_cast<size_t>(numel_out));
  std::vector<int64_t> argmax;
  if (kind == PoolKind::Max) argmax.resize(size_t(numel_out));
  const T* xp = input.value().data();
  const T inv_area = T(1) / T(k * k);

  int64_t o = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = xp + (n * C + c) * H * W;
      const int64_t plane_off = (n * C + c) * H * W;
      for (int64_t oh = 0; oh < oH; ++oh)
        for (int64_t ow = 0; ow < oW; ++ow, ++o) {
          const int64_t h0 = oh * stride - padding;
          const int64_t w0 = ow * stride - padding;
          if (kind == PoolKind::Max) {
            T best = -std::numeric_limits<T>::infinity();
            int64_t best_idx = -1;
            for (int64_t dh = 0; dh < k; ++dh) {
              const int64_t ih = h0 + dh;
              if (ih < 0 || ih >= H) continue;
              for (int64_t dw = 0; dw < k; ++dw) {
                const int64_t iw = w0 + dw;
                if (iw < 0 || iw >= W) continue;
                const T v = plane[ih * W + iw];
                if (v > best) {
                  best = v;
                  best_idx = ih * W + iw;
                }
              }
            }
            out[size_t(o)] = best;
            argmax[size_t(o)] = plane_off + best_idx;
          } else {
            T acc = T(0);
            for (int64_t dh = 0; dh < k; ++dh) {
              const int64_t ih = h0 + dh;
              if (ih < 0 || ih >= H) continue;
              for (int64_t dw = 0; dw < k; ++dw) {
                const int64_t iw = w0 + dw;
                if (iw >= 0 && iw < W) acc += plane[ih * W + iw];
              }
            }
            out[size_t(o)] = acc * inv_area;
          }
        }
    }

  Tensor<T> x = input;
  return Tensor<T>::make_op(
      Shape{N, C, oH, oW}, std::move(out), {input},
      [=, argmax = std::move(argmax)](std::span<const T> g) mutable {
        if (!x.requires_grad()) return;
        std::span<T> dx = x.grad_buffer();
        if (kind == PoolKind::Max) {
          for (size_t i = 0; i < g.size(); ++i)
            dx[size_t(argmax[i])] += g[i];
          return;
        }
        int64_t oo = 0;
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            T* dplane = dx.data() + (n * C + c) * H * W;
            for (int64_t oh = 0; oh < oH; ++oh)
              for (int64_t ow = 0; ow < oW; ++ow, ++oo) {
                const T gv = g[size_t(oo)] * inv_area;
                const int64_t h0 = oh * stride - padding;
                const int64_t w0 = ow * stride - padding;
                for (int64_t dh = 0; dh < k; ++dh) {
                  const int64_t ih = h0 + dh;
                  if (ih < 0 || ih >= H) continue;
                  for (int64_t dw = 0; dw < k; ++dw) {
                    const int64_t iw = w0 + dw;
                    if (iw >= 0 && iw < W) dplane[ih * W + iw] += gv;
                  }
                }
              }
          }
      });
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, BatchNormState<T>& state) {
  check_rank4(input, "batchnorm2d");
  const int64_t N = input.shape().n(), C = input.shape().c();
  const int64_t H = input.shape().h(), W = input.shape().w();
  G2N_CHECK(C == state.channels(), "batchnorm2d: input channel dimension C=", C,
            " does not match state channels ", state.channels());
  G2N_CHECK(int64_t(state.running_mean.size()) == C &&
                int64_t(state.running_var.size()) == C,
            "batchnorm2d: running statistics length does not match channels ",
            C);
  G2N_CHECK(state.epsilon > T(0), "batchnorm2d: epsilon must be > 0");
  G2N_CHECK(state.momentum > T(0) && state.momentum <= T(1),
            "batchnorm2d: momentum must be in (0, 1]");

  const int64_t plane = H * W;
  const int64_t m = N * plane;
  const T* xp = input.value().data();
  const T* gp = state.gamma.value().data();
  const T* bp = state.beta.value().data();

  std::vector<T> out(size_t(N * C * plane));
  std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));

  if (state.mode == Mode::Train) {
    for (int64_t c = 0; c < C; ++c) {
      T acc = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* p = xp + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) acc += p[i];
      }
      const T mu = acc / T(m);
      T vacc = T(0);
      for (int64_t n = 0; n < N; ++n) {
        const T* p = xp + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          vacc += d * d;
        }
      }
      const T var = vacc / T(m);
      mean[size_t(c)] = mu;
      invstd[size_t(c)] = T(1) / std::sqrt(var + state.epsilon);
      const T var_unbiased = m > 1 ? vacc / T(m - 1) : var;
      state.running_mean[size_t(c)] =
          (T(1) - state.momentum) * state.running_mean[size_t(c)] +
          state.momentum * mu;
      state.running_var[size_t(c)] =
          (T(1) - state.momentum) * state.running_var[size_t(c)] +
          state.momentum * var_unbiased;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      G2N_CHECK(state.running_var[size_t(c)] >= T(0),
                "batchnorm2d: running_var must be >= 0 at channel ", c);
      mean[size_t(c)] = state.running_mean[size_t(c)];
      invstd[size_t(c)] =
          T(1) / std::sqrt(state.running_var[size_t(c)] + state.epsilon);
    }
  }

  // xhat is saved for the backward pass.
  std::vector<T> xhat(size_t(N * C * plane));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T mu = mean[size_t(c)], is = invstd[size_t(c)];
      const T ga = gp[c], be = bp[c];
      const T* p = xp + (n * C + c) * plane;
      T* xh = xhat.data() + (n * C + c) * plane;
      T* op = out.data() + (n * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mu) * is;
        op[i] = ga * xh[i] + be;
      }
    }

  Tensor<T> x = input;
  Tensor<T> gamma = state.gamma;
  Tensor<T> beta = state.beta;
  const bool train = state.mode == Mode::Train;
  return Tensor<T>::make_op(
      input.shape(), std::move(out), {input, state.gamma, state.beta},
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](
          std::span<const T> g) mutable {
        std::vector<T> sum_g(size_t(C), T(0)), sum_gx(size_t(C), T(0));
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const T* gg = g.data() + (n * C + c) * plane;
            const T* xh = xhat.data() + (n * C + c) * plane;
            T a = T(0), b = T(0);
            for (int64_t i = 0; i < plane; ++i) {
              a += gg[i];
              b += gg[i] * xh[i];
            }
            sum_g[size_t(c)] += a;
            sum_gx[size_t(c)] += b;
          }
        if (gamma.requires_grad()) {
          std::span<T> dg = gamma.grad_buffer();
          for (int64_t c = 0; c < C; ++c) dg[size_t(c)] += sum_gx[size_t(c)];
        }
        if (beta.requires_grad()) {
          std::span<T> db = beta.grad_buffer();
          for (int64_t c = 0; c < C; ++c) db[size_t(c)] += sum_g[size_t(c)];
        }
        if (!x.requires_grad()) return;
        std::span<T> dx = x.grad_buffer();
        const T* gp2 = gamma.value().data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const T ga = gp2[c], is = invstd[size_t(c)];
            const T* gg = g.data() + (n * C + c) * plane;
            const T* xh = xhat.data() + (n * C + c) * plane;
            T* dp = dx.data() + (n * C + c) * plane;
            if (train) {
              const T k1 = sum_g[size_t(c)] / T(m);
              const T k2 = sum_gx[size_t(c)] / T(m);
              for (int64_t i = 0; i < plane; ++i)
                dp[i] += ga * is * (gg[i] - k1 - xh[i] * k2);
            } else {
              for (int64_t i = 0; i < plane; ++i) dp[i] += ga * is * gg[i];
            }
          }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  std::vector<T> out(input.value().begin(), input.value().end());
  for (T& v : out)
    if (v < T(0)) v = T(0);
  Tensor<T> x = input;
  return Tensor<T>::make_op(input.shape(), std::move(out), {input},
                            [x](std::span<const T> g) mutable {
                              if (!x.requires_grad()) return;
                              std::span<T> dx = x.grad_buffer();
                              std::span<const T> xv = x.value();
                              for (size_t i = 0; i < g.size(); ++i)
                                if (xv[i] > T(0)) dx[i] += g[i];
                            });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  G2N_CHECK(a.shape() == b.shape(), "add: shape mismatch ", a.shape().str(),
            " vs ", b.shape().str());
  std::vector<T> out(size_t(a.numel()));
  std::span<const T> av = a.value(), bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor<T> ta = a, tb = b;
  return Tensor<T>::make_op(a.shape(), std::move(out), {a, b},
                            [ta, tb](std::span<const T> g) mutable {
                              ta.acc_grad(g);
                              tb.acc_grad(g);
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  G2N_CHECK(a.shape() == b.shape(), "mul: shape mismatch ", a.shape().str(),
            " vs ", b.shape().str());
  std::vector<T> out(size_t(a.numel()));
  std::span<const T> av = a.value(), bv = b.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor<T> ta = a, tb = b;
  return Tensor<T>::make_op(
      a.shape(), std::move(out), {a, b}, [ta, tb](std::span<const T> g) mutable {
        if (ta.requires_grad()) {
          std::span<T> da = ta.grad_buffer();
          std::span<const T> bv2 = tb.value();
          for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv2[i];
        }
        if (tb.requires_grad()) {
          std::span<T> db = tb.grad_buffer();
          std::span<const T> av2 = ta.value();
          for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av2[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> out(size_t(x.numel()));
  std::span<const T> xv = x.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  Tensor<T> tx = x;
  return Tensor<T>::make_op(x.shape(), std::move(out), {x},
                            [tx, s](std::span<const T> g) mutable {
                              if (!tx.requires_grad()) return;
                              std::span<T> dx = tx.grad_buffer();
                              for (size_t i = 0; i < g.size(); ++i)
                                dx[i] += g[i] * s;
                            });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.value()) acc += v;
  Tensor<T> tx = x;
  return Tensor<T>::make_op(Shape{}, std::vector<T>{acc}, {x},
                            [tx](std::span<const T> g) mutable {
                              if (!tx.requires_grad()) return;
                              std::span<T> dx = tx.grad_buffer();
                              for (size_t i = 0; i < dx.size(); ++i)
                                dx[i] += g[0];
                            });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  G2N_CHECK(!parts.empty(), "concat_channels: no parts");
  const Shape& s0 = parts[0].shape();
  G2N_CHECK(s0.rank() == 4, "concat_channels: expected rank-4 parts, got ",
            s0.str());
  int64_t total_c = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    G2N_CHECK(s.rank() == 4 && s.n() == s0.n() && s.h() == s0.h() &&
                  s.w() == s0.w(),
              "concat_channels: part ", i, " shape ", s.str(),
              " does not match batch/spatial extents of part 0 ", s0.str());
    total_c += s.c();
  }
  const int64_t N = s0.n(), H = s0.h(), W = s0.w(), plane = H * W;
  std::vector<T> out(size_t(N * total_c * plane));
  for (int64_t n = 0; n < N; ++n) {
    int64_t c_off = 0;
    for (const auto& part : parts) {
      const int64_t pc = part.shape().c();
      const T* src = part.value().data() + n * pc * plane;
      T* dst = out.data() + (n * total_c + c_off) * plane;
      std::copy(src, src + pc * plane, dst);
      c_off += pc;
    }
  }
  std::vector<Tensor<T>> held = parts;
  return Tensor<T>::make_op(
      Shape{N, total_c, H, W}, std::move(out), parts,
      [held, N, total_c, plane](std::span<const T> g) mutable {
        for (int64_t n = 0; n < N; ++n) {
          int64_t c_off = 0;
          for (auto& part : held) {
            const int64_t pc = part.shape().c();
            if (part.requires_grad()) {
              std::span<T> dp = part.grad_buffer();
              const T* src = g.data() + (n * total_c + c_off) * plane;
              T* dst = dp.data() + n * pc * plane;
              for (int64_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
            }
            c_off += pc;
          }
        }
      });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int64_t c_begin, int64_t c_end) {
  check_rank4(x, "slice_channels");
  const int64_t N = x.shape().n(), C = x.shape().c();
  const int64_t H = x.shape().h(), W = x.shape().w(), plane = H * W;
  G2N_CHECK(c_begin >= 0 && c_begin < c_end && c_end <= C,
            "slice_channels: range [", c_begin, ", ", c_end,
            ") invalid for C=", C);
  const int64_t sc = c_end - c_begin;
  std::vector<T> out(size_t(N * sc * plane));
  for (int64_t n = 0; n < N; ++n) {
    const T* src = x.value().data() + (n * C + c_begin) * plane;
    std::copy(src, src + sc * plane, out.data() + n * sc * plane);
  }
  Tensor<T> tx = x;
  return Tensor<T>::make_op(
      Shape{N, sc, H, W}, std::move(out), {x},
      [tx, c_begin, sc, N, C, plane](std::span<const T> g) mutable {
        if (!tx.requires_grad()) return;
        std::span<T> dx = tx.grad_buffer();
        for (int64_t n = 0; n < N; ++n) {
          const T* src = g.data() + n * sc * plane;
          T* dst = dx.data() + (n * C + c_begin) * plane;
          for (int64_t i = 0; i < sc * plane; ++i) dst[i] += src[i];
        }
      });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  check_rank4(x, "flatten");
  const int64_t N = x.shape().n();
  const int64_t D = x.shape().c() * x.shape().h() * x.shape().w();
  std::vector<T> out(x.value().begin(), x.value().end());
  Tensor<T> tx = x;
  return Tensor<T>::make_op(Shape{N, D}, std::move(out), {x},
                            [tx](std::span<const T> g) mutable {
                              tx.acc_grad(g);
                            });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  check_rank4(x, "global_avg_pool");
  const int64_t N = x.shape().n(), C = x.shape().c();
  const int64_t plane = x.shape().h() * x.shape().w();
  std::vector<T> out(size_t(N * C));
  const T inv = T(1) / T(plane);
  const T* xp = x.value().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* p = xp + (n * C + c) * plane;
      T acc = T(0);
      for (int64_t i = 0; i < plane; ++i) acc += p[i];
      out[size_t(n * C + c)] = acc * inv;
    }
  Tensor<T> tx = x;
  return Tensor<T>::make_op(
      Shape{N, C}, std::move(out), {x},
      [tx, N, C, plane, inv](std::span<const T> g) mutable {
        if (!tx.requires_grad()) return;
        std::span<T> dx = tx.grad_buffer();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const T gv = g[size_t(n * C + c)] * inv;
            T* dp = dx.data() + (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) dp[i] += gv;
          }
      });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias) {
  G2N_CHECK(input.shape().rank() == 2, "linear: expected rank-2 input, got ",
            input.shape().str());
  G2N_CHECK(weight.shape().rank() == 2, "linear: expected rank-2 weight, got ",
            weight.shape().str());
  const int64_t N = input.shape().dim(0), D = input.shape().dim(1);
  const int64_t Dw = weight.shape().dim(0), K = weight.shape().dim(1);
  G2N_CHECK(D == Dw, "linear: input feature dimension D=", D,
            " does not match weight rows ", Dw);
  if (bias)
    G2N_CHECK(bias->shape().rank() == 1 && bias->shape().dim(0) == K,
              "linear: bias shape ", bias->shape().str(),
              " does not match out features ", K);

  std::vector<T> out(size_t(N * K));
  CMapM<T> xm(input.value().data(), N, D);
  CMapM<T> wm(weight.value().data(), D, K);
  MapM<T> om(out.data(), N, K);
  om.noalias() = xm * wm;
  if (bias) {
    const T* b = bias->value().data();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < K; ++k) out[size_t(n * K + k)] += b[k];
  }
  Tensor<T> x = input, w = weight;
  std::optional<Tensor<T>> bt = bias;
  std::vector<Tensor<T>> parents{input, weight};
  if (bias) parents.push_back(*bias);
  return Tensor<T>::make_op(
      Shape{N, K}, std::move(out), parents,
      [=](std::span<const T> g) mutable {
        CMapM<T> gm(g.data(), N, K);
        if (x.requires_grad()) {
          std::span<T> dx = x.grad_buffer();
          MapM<T> dxm(dx.data(), N, D);
          CMapM<T> wm2(w.value().data(), D, K);
          dxm.noalias() += gm * wm2.transpose();
        }
        if (w.requires_grad()) {
          std::span<T> dw = w.grad_buffer();
          MapM<T> dwm(dw.data(), D, K);
          CMapM<T> xm2(x.value().data(), N, D);
          dwm.noalias() += xm2.transpose() * gm;
        }
        if (bt && bt->requires_grad()) {
          std::span<T> db = bt->grad_buffer();
          for (int64_t n = 0; n < N; ++n)
            for (int64_t k = 0; k < K; ++k) db[size_t(k)] += g[size_t(n * K + k)];
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, Mode mode) {
  G2N_CHECK(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1), got ",
            rate);
  if (mode == Mode::Eval || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  std::vector<uint8_t> keep(size_t(x.numel()));
  for (auto& k : keep) k = rng.bernoulli(rate) ? 0 : 1;
  std::vector<T> out(size_t(x.numel()));
  std::span<const T> xv = x.value();
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = keep[i] ? xv[i] * keep_scale : T(0);
  Tensor<T> tx = x;
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x},
      [tx, keep = std::move(keep), keep_scale](std::span<const T> g) mutable {
        if (!tx.requires_grad()) return;
        std::span<T> dx = tx.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i)
          if (keep[i]) dx[i] += g[i] * keep_scale;
      });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                const std::vector<int>& labels) {
  G2N_CHECK(logits.shape().rank() == 2,
            "softmax_cross_entropy: expected rank-2 logits, got ",
            logits.shape().str());
  const int64_t N = logits.shape().dim(0), K = logits.shape().dim(1);
  G2N_CHECK(int64_t(labels.size()) == N,
            "softmax_cross_entropy: got ", labels.size(), " labels for batch ",
            N);
  for (int64_t n = 0; n < N; ++n)
    G2N_CHECK(labels[size_t(n)] >= 0 && labels[size_t(n)] < K,
              "softmax_cross_entropy: label ", labels[size_t(n)],
              " out of range [0, ", K, ") at row ", n);

  std::vector<T> probs(size_t(N * K));
  const T* lp = logits.value().data();
  T loss = T(0);
  for (int64_t n = 0; n < N; ++n) {
    const T* row = lp + n * K;
    T mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    T denom = T(0);
    for (int64_t k = 0; k < K; ++k) {
      const T e = std::exp(row[k] - mx);
      probs[size_t(n * K + k)] = e;
      denom += e;
    }
    for (int64_t k = 0; k < K; ++k) probs[size_t(n * K + k)] /= denom;
    loss -= std::log(probs[size_t(n * K + labels[size_t(n)])]);
  }
  loss /= T(N);

  Tensor<T> lt = logits;
  return Tensor<T>::make_op(
      Shape{}, std::vector<T>{loss}, {logits},
      [lt, probs = std::move(probs), labels, N, K](std::span<const T> g) mutable {
        if (!lt.requires_grad()) return;
        std::span<T> dl = lt.grad_buffer();
        const T gv = g[0] / T(N);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t k = 0; k < K; ++k) {
            T p = probs[size_t(n * K + k)];
            if (k == labels[size_t(n)]) p -= T(1);
            dl[size_t(n * K + k)] += gv * p;
          }
      });
}

#define G2N_INSTANTIATE_OPS(T)                                                \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);       \
  template Tensor<T> pool2d<T>(const Tensor<T>&, PoolKind, int, int, int);    \
  template Tensor<T> batchnorm2d<T>(const Tensor<T>&, BatchNormState<T>&);    \
  template Tensor<T> relu<T>(const Tensor<T>&);                               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                           \
  template Tensor<T> sum<T>(const Tensor<T>&);                                \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);       \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, int64_t, int64_t);   \
  template Tensor<T> flatten<T>(const Tensor<T>&);                            \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                    \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&,            \
                               const std::optional<Tensor<T>>&);              \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Rng&, Mode);        \
  template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&,               \
                                              const std::vector<int>&);

G2N_INSTANTIATE_OPS(float)
G2N_INSTANTIATE_OPS(double)

}  // namespace g2n
