// Copyright 2026 The pdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <vector>

#include "pdarts/error.hpp"
#include "pdarts/tensor.hpp"

namespace pdarts::ops {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     to_string(s));
}

inline int conv_out(int in, int k, int stride, int pad, int dil) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

// Unfolds one sample (C,H,W) into a (C*kh*kw, Ho*Wo) matrix.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad, int dil, int Ho,
            int Wo, T* cols) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < kh; ++r)
      for (int s = 0; s < kw; ++s) {
        T* row = cols + static_cast<std::size_t>((c * kh + r) * kw + s) * P;
        const T* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + r * dil;
          T* out = row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(out, out + Wo, T(0));
            continue;
          }
          const T* xrow = xc + ih * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + s * dil;
            out[ow] = (iw >= 0 && iw < W) ? xrow[iw] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* cols, int C, int H, int W, int kh, int kw, int stride, int pad, int dil,
                int Ho, int Wo, T* dx) {
  const int P = Ho * Wo;
  for (int c = 0; c < C; ++c)
    for (int r = 0; r < kh; ++r)
      for (int s = 0; s < kw; ++s) {
        const T* row = cols + static_cast<std::size_t>((c * kh + r) * kw + s) * P;
        T* dxc = dx + static_cast<std::size_t>(c) * H * W;
        for (int oh = 0; oh < Ho; ++oh) {
          const int ih = oh * stride - pad + r * dil;
          if (ih < 0 || ih >= H) continue;
          const T* in = row + oh * Wo;
          T* dxrow = dxc + ih * W;
          for (int ow = 0; ow < Wo; ++ow) {
            const int iw = ow * stride - pad + s * dil;
            if (iw >= 0 && iw < W) dxrow[iw] += in[ow];
          }
        }
      }
}

// Output index range [lo, hi) for which in = o*stride + off stays inside [0, n).
inline void valid_range(int off, int stride, int n, int count, int& lo, int& hi) {
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = off >= n ? 0 : (n - 1 - off) / stride + 1;
  hi = std::min(hi, count);
  lo = std::min(lo, hi);
}

// Reductions use a fixed lane layout so results do not depend on buffer
// alignment. Eigen's reductions peel to the first aligned element, which
// makes the summation order vary with the allocation address.
constexpr std::size_t kLanes = 8;

template <typename T, typename F>
T lane_reduce(std::size_t n, F&& term) {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += term(i + l);
  for (std::size_t l = 0; i < n; ++i, ++l) acc[l] += term(i);
  T s = T(0);
  for (std::size_t l = 0; l < kLanes; ++l) s += acc[l];
  return s;
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  return lane_reduce<T>(n, [&](std::size_t i) { return a[i] * b[i]; });
}

template <typename T>
T sum(const T* a, std::size_t n) {
  return lane_reduce<T>(n, [&](std::size_t i) { return a[i]; });
}

template <typename T>
T sum_sq_dev(const T* a, std::size_t n, T mu) {
  return lane_reduce<T>(n, [&](std::size_t i) {
    const T d = a[i] - mu;
    return d * d;
  });
}

// Zero-padded input split into stride x stride phase planes: padded pixel
// (i, j) lives in plane (i % s, j % s) at (i / s, j / s).
struct PhaseLayout {
  int H, W, stride, pad, dil, kh, kw;
  int ph, pw;  // plane extent
  PhaseLayout(int H_, int W_, int kh_, int kw_, int stride_, int pad_, int dil_, int Ho, int Wo)
      : H(H_), W(W_), stride(stride_), pad(pad_), dil(dil_), kh(kh_), kw(kw_) {
    ph = Ho + (dil * (kh - 1)) / stride + 1;
    pw = Wo + (dil * (kw - 1)) / stride + 1;
  }
  std::size_t plane_size() const { return static_cast<std::size_t>(ph) * pw; }
  std::size_t total() const { return plane_size() * stride * stride; }
  std::size_t tap_offset(int r, int s) const {
    const int a = r * dil, b = s * dil;
    return ((a % stride) * stride + (b % stride)) * plane_size() +
           static_cast<std::size_t>(a / stride) * pw + b / stride;
  }
  // Visits every input row: calls f(input_row, plane_base, first_col_in_plane,
  // plane_col_count, col_phase_offset) for each column phase.
  template <typename F>
  void for_each_run(F&& f) const {
    for (int i = 0; i < H; ++i) {
      const int pi = i + pad;
      if (pi / stride >= ph) continue;
      const std::size_t row_base =
          (pi % stride) * stride * plane_size() + static_cast<std::size_t>(pi / stride) * pw;
      for (int b = 0; b < stride; ++b) {
        // Input columns j with (j + pad) % stride == b.
        int j0 = ((b - pad) % stride + stride) % stride;
        if (j0 >= W) continue;
        const int pj0 = (j0 + pad) / stride;
        int count = (W - j0 + stride - 1) / stride;
        count = std::min(count, pw - pj0);
        if (count <= 0) continue;
        f(i, j0, row_base + b * plane_size() + pj0, count);
      }
    }
  }
  template <typename T>
  void split(const T* x, T* planes) const {
    std::fill(planes, planes + total(), T(0));
    for_each_run([&](int i, int j0, std::size_t dst, int count) {
      const T* src = x + static_cast<std::size_t>(i) * W + j0;
      T* d = planes + dst;
      if (stride == 1) {
        std::copy_n(src, count, d);
      } else {
        for (int t = 0; t < count; ++t) d[t] = src[t * stride];
      }
    });
  }
  template <typename T>
  void merge_add(const T* planes, T* dx) const {
    for_each_run([&](int i, int j0, std::size_t src, int count) {
      T* d = dx + static_cast<std::size_t>(i) * W + j0;
      const T* p = planes + src;
      if (stride == 1) {
        for (int t = 0; t < count; ++t) d[t] += p[t];
      } else {
        for (int t = 0; t < count; ++t) d[t * stride] += p[t];
      }
    });
  }
};

}  // namespace detail

template <typename T>
Variable<T> relu(const Variable<T>& x) {
  std::vector<T> y(x.values());
  for (auto& v : y) v = v > T(0) ? v : T(0);
  auto xn = x.shared();
  return make_result<T>(x.shape(), std::move(y), {xn}, [xn](auto& self) {
    if (!xn->requires_grad) return;
    T* dx = xn->ensure_grad();
    const auto& xv = xn->value;
    const T* g = self.grad.data();
    const std::size_t n = xv.size();
    for (std::size_t i = 0; i < n; ++i) dx[i] += xv[i] > T(0) ? g[i] : T(0);
  });
}

/// Elementwise sum of equally shaped variables.
template <typename T>
Variable<T> add(const std::vector<Variable<T>>& xs) {
  if (xs.empty()) throw ContractError("add: no operands");
  std::vector<T> y(xs[0].values());
  std::vector<std::shared_ptr<typename Variable<T>::Node>> parents;
  parents.push_back(xs[0].shared());
  for (std::size_t k = 1; k < xs.size(); ++k) {
    if (xs[k].shape() != xs[0].shape())
      throw ShapeError("add: shape " + to_string(xs[k].shape()) + " vs " +
                       to_string(xs[0].shape()));
    const auto& v = xs[k].values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += v[i];
    parents.push_back(xs[k].shared());
  }
  auto ps = parents;
  return make_result<T>(xs[0].shape(), std::move(y), std::move(parents), [ps](auto& self) {
    for (const auto& p : ps) {
      if (!p->requires_grad) continue;
      T* dx = p->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
Variable<T> add(const Variable<T>& a, const Variable<T>& b) {
  return add<T>(std::vector<Variable<T>>{a, b});
}

/// Multiplies by a constant.
template <typename T>
Variable<T> scale(const Variable<T>& x, T c) {
  std::vector<T> y(x.values());
  for (auto& v : y) v *= c;
  auto xn = x.shared();
  return make_result<T>(x.shape(), std::move(y), {xn}, [xn, c](auto& self) {
    if (!xn->requires_grad) return;
    T* dx = xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += c * self.grad[i];
  });
}

/// Sum of all entries, as a scalar.
template <typename T>
Variable<T> sum(const Variable<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  auto xn = x.shared();
  return make_result<T>({1}, {s}, {xn}, [xn](auto& self) {
    if (!xn->requires_grad) return;
    T* dx = xn->ensure_grad();
    for (std::size_t i = 0; i < xn->value.size(); ++i) dx[i] += self.grad[0];
  });
}

/// Numerically stable softmax of a row.
template <typename T>
std::vector<T> softmax(const T* a, int n) {
  std::vector<T> w(n);
  if (n == 0) return w;
  T m = a[0];
  for (int i = 1; i < n; ++i) m = std::max(m, a[i]);
  T z = 0;
  for (int i = 0; i < n; ++i) z += (w[i] = std::exp(a[i] - m));
  for (auto& v : w) v /= z;
  return w;
}

/// Softmax-weighted sum over candidate outputs using row `row` of the
/// (edges, ops) tensor `alpha`. Undefined entries in `xs` stand for
/// all-zero outputs and contribute only through the normalizer.
template <typename T>
Variable<T> mixed(const std::vector<Variable<T>>& xs, const Variable<T>& alpha, int row) {
  detail::require_rank(alpha.shape(), 2, "mixed");
  const int K = alpha.dim(1);
  if (static_cast<int>(xs.size()) != K || row < 0 || row >= alpha.dim(0))
    throw ShapeError("mixed: operand count does not match alpha " + to_string(alpha.shape()));
  const T* a = alpha.data() + static_cast<std::size_t>(row) * K;
  for (int k = 0; k < K; ++k)
    if (!std::isfinite(a[k])) throw NumericError("mixed: non-finite architecture weight");
  const auto w = softmax(a, K);
  const Variable<T>* ref = nullptr;
  for (const auto& x : xs)
    if (x.defined()) {
      if (ref && x.shape() != ref->shape())
        throw ShapeError("mixed: candidate shapes differ: " + to_string(x.shape()) + " vs " +
                         to_string(ref->shape()));
      ref = &x;
    }
  if (!ref) throw ContractError("mixed: at least one candidate output must be materialized");
  std::vector<T> y(ref->size(), T(0));
  std::vector<std::shared_ptr<typename Variable<T>::Node>> parents{alpha.shared()};
  for (int k = 0; k < K; ++k) {
    parents.push_back(xs[k].defined() ? xs[k].shared() : nullptr);
    if (!xs[k].defined()) continue;
    const auto& v = xs[k].values();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += w[k] * v[i];
  }
  auto ps = parents;
  return make_result<T>(ref->shape(), std::move(y), std::move(parents),
                        [ps, w, row, K](auto& self) {
                          const auto& g = self.grad;
                          std::vector<T> dw(K, T(0));
                          for (int k = 0; k < K; ++k) {
                            const auto& p = ps[k + 1];
                            if (!p) continue;
                            const auto& v = p->value;
                            T acc = 0;
                            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * v[i];
                            dw[k] = acc;
                            if (p->requires_grad) {
                              T* dx = p->ensure_grad();
                              for (std::size_t i = 0; i < g.size(); ++i) dx[i] += w[k] * g[i];
                            }
                          }
                          const auto& an = ps[0];
                          if (!an->requires_grad) return;
                          T mean = 0;
                          for (int k = 0; k < K; ++k) mean += w[k] * dw[k];
                          T* da = an->ensure_grad() + static_cast<std::size_t>(row) * K;
                          for (int k = 0; k < K; ++k) da[k] += w[k] * (dw[k] - mean);
                        });
}

/// Dense 2-D convolution without bias. x: (N,Ci,H,W), w: (Co,Ci,kh,kw).
template <typename T>
Variable<T> conv2d(const Variable<T>& x, const Variable<T>& w, int stride, int pad,
                   int dilation = 1) {
  detail::require_rank(x.shape(), 4, "conv2d");
  detail::require_rank(w.shape(), 4, "conv2d weight");
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Ci)
    throw ShapeError("conv2d: input channels " + std::to_string(Ci) + " vs weight " +
                     to_string(w.shape()));
  const int Ho = detail::conv_out(H, kh, stride, pad, dilation);
  const int Wo = detail::conv_out(W, kw, stride, pad, dilation);
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: empty output for input " + to_string(x.shape()));
  const int K = Ci * kh * kw, P = Ho * Wo;
  const bool direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;
  using Mat = detail::RowMat<T>;
  std::vector<T> y(static_cast<std::size_t>(N) * Co * P);
  std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(K) * P);
  Eigen::Map<const Mat> Wm(w.data(), Co, K);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.data() + static_cast<std::size_t>(n) * Ci * H * W;
    const T* src = xn;
    if (!direct) {
      detail::im2col(xn, Ci, H, W, kh, kw, stride, pad, dilation, Ho, Wo, cols.data());
      src = cols.data();
    }
    Eigen::Map<Mat> Y(y.data() + static_cast<std::size_t>(n) * Co * P, Co, P);
    Y.noalias() = Wm * Eigen::Map<const Mat>(src, K, P);
  }
  auto xn = x.shared();
  auto wn = w.shared();
  return make_result<T>(
      {N, Co, Ho, Wo}, std::move(y), {xn, wn},
      [=](auto& self) {
        std::vector<T> buf(direct ? 0 : static_cast<std::size_t>(K) * P);
        std::vector<T> dcols(static_cast<std::size_t>(K) * P);
        Eigen::Map<const Mat> Wm(wn->value.data(), Co, K);
        T* dW = wn->requires_grad ? wn->ensure_grad() : nullptr;
        T* dX = xn->requires_grad ? xn->ensure_grad() : nullptr;
        for (int n = 0; n < N; ++n) {
          Eigen::Map<const Mat> G(self.grad.data() + static_cast<std::size_t>(n) * Co * P, Co, P);
          const T* xs = xn->value.data() + static_cast<std::size_t>(n) * Ci * H * W;
          if (dW) {
            const T* src = xs;
            if (!direct) {
              detail::im2col(xs, Ci, H, W, kh, kw, stride, pad, dilation, Ho, Wo, buf.data());
              src = buf.data();
            }
            Eigen::Map<Mat> DW(dW, Co, K);
            DW.noalias() += G * Eigen::Map<const Mat>(src, K, P).transpose();
          }
          if (dX) {
            T* dxs = dX + static_cast<std::size_t>(n) * Ci * H * W;
            if (direct) {
              Eigen::Map<Mat> DX(dxs, K, P);
              DX.noalias() += Wm.transpose() * G;
            } else {
              Eigen::Map<Mat> DC(dcols.data(), K, P);
              DC.noalias() = Wm.transpose() * G;
              detail::col2im_add(dcols.data(), Ci, H, W, kh, kw, stride, pad, dilation, Ho, Wo,
                                 dxs);
            }
          }
        }
      });
}

/// Depthwise convolution (groups == channels). w: (C,1,kh,kw).
///
/// Each channel is zero-padded once and split into stride x stride phase
/// planes, so every tap reads a contiguous run of the input.
template <typename T>
Variable<T> depthwise_conv2d(const Variable<T>& x, const Variable<T>& w, int stride, int pad,
                             int dilation = 1) {
  detail::require_rank(x.shape(), 4, "depthwise_conv2d");
  detail::require_rank(w.shape(), 4, "depthwise_conv2d weight");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != C || w.dim(1) != 1)
    throw ShapeError("depthwise_conv2d: weight " + to_string(w.shape()) + " for " +
                     std::to_string(C) + " channels");
  const int Ho = detail::conv_out(H, kh, stride, pad, dilation);
  const int Wo = detail::conv_out(W, kw, stride, pad, dilation);
  if (Ho <= 0 || Wo <= 0)
    throw ShapeError("depthwise_conv2d: empty output for input " + to_string(x.shape()));
  const detail::PhaseLayout L(H, W, kh, kw, stride, pad, dilation, Ho, Wo);
  std::vector<T> y(static_cast<std::size_t>(N) * C * Ho * Wo, T(0));
  std::vector<T> planes(L.total());
  const std::size_t span = static_cast<std::size_t>(Ho) * L.pw;
  std::vector<T> wide(span);
  const T* wv = w.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = static_cast<std::size_t>(n) * C + c;
      L.split(x.data() + off * H * W, planes.data());
      // Accumulate with the plane pitch, then drop the pad columns.
      std::fill(wide.begin(), wide.end(), T(0));
      for (int r = 0; r < kh; ++r)
        for (int s = 0; s < kw; ++s) {
          const T wt = wv[(c * kh + r) * kw + s];
          const T* src = planes.data() + L.tap_offset(r, s);
          T* out = wide.data();
          for (std::size_t i = 0; i < span; ++i) out[i] += wt * src[i];
        }
      T* yc = y.data() + off * Ho * Wo;
      for (int oh = 0; oh < Ho; ++oh)
        std::copy_n(wide.data() + static_cast<std::size_t>(oh) * L.pw, Wo, yc + oh * Wo);
    }
  auto xn = x.shared();
  auto wn = w.shared();
  return make_result<T>({N, C, Ho, Wo}, std::move(y), {xn, wn}, [=](auto& self) {
    T* dX = xn->requires_grad ? xn->ensure_grad() : nullptr;
    T* dW = wn->requires_grad ? wn->ensure_grad() : nullptr;
    const T* wv = wn->value.data();
    std::vector<T> planes(L.total()), dplanes(dX ? L.total() : 0);
    const std::size_t span = static_cast<std::size_t>(Ho) * L.pw;
    std::vector<T> wide(span, T(0));
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const std::size_t off = static_cast<std::size_t>(n) * C + c;
        const T* gc = self.grad.data() + off * Ho * Wo;
        // Gradient re-laid with the plane pitch; pad columns stay zero.
        for (int oh = 0; oh < Ho; ++oh)
          std::copy_n(gc + oh * Wo, Wo, wide.data() + static_cast<std::size_t>(oh) * L.pw);
        if (dW) L.split(xn->value.data() + off * H * W, planes.data());
        if (dX) std::fill(dplanes.begin(), dplanes.end(), T(0));
        const T* g = wide.data();
        for (int r = 0; r < kh; ++r)
          for (int s = 0; s < kw; ++s) {
            const int widx = (c * kh + r) * kw + s;
            const std::size_t toff = L.tap_offset(r, s);
            if (dW) {
              const T* src = planes.data() + toff;
              dW[widx] += detail::dot(g, src, span);
            }
            if (dX) {
              const T wt = wv[widx];
              T* d = dplanes.data() + toff;
              for (std::size_t i = 0; i < span; ++i) d[i] += wt * g[i];
            }
          }
        if (dX) L.merge_add(dplanes.data(), dX + off * H * W);
      }
  });
}

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
};

/// Batch normalization over (N,H,W) per channel. gamma/beta may be
/// undefined for the non-affine variant. In training mode batch statistics
/// are used and, when `update_stats` is set, folded into `stats`.
template <typename T>
Variable<T> batch_norm(const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta,
                       BatchNormStats<T>& stats, bool training, bool update_stats,
                       T momentum = T(0.1), T eps = T(1e-5)) {
  detail::require_rank(x.shape(), 4, "batch_norm");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t M = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t count = N * M;
  const bool affine = gamma.defined();
  std::vector<T> mean(C), inv_std(C);
  const T* xv = x.data();
  if (training) {
    if (count < 2) throw ShapeError("batch_norm: need more than one value per channel");
    for (int c = 0; c < C; ++c) {
      double s = 0;
      for (int n = 0; n < N; ++n)
        s += detail::sum(xv + (static_cast<std::size_t>(n) * C + c) * M, M);
      const double mu = s / count;
      double ss = 0;
      for (int n = 0; n < N; ++n) {
        ss += detail::sum_sq_dev(xv + (static_cast<std::size_t>(n) * C + c) * M, M, static_cast<T>(mu));
      }
      const double var = ss / count;
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
      if (update_stats) {
        stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * static_cast<T>(mu);
        stats.var[c] = (T(1) - momentum) * stats.var[c] +
                       momentum * static_cast<T>(ss / static_cast<double>(count - 1));
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = stats.mean[c];
      inv_std[c] = T(1) / std::sqrt(stats.var[c] + eps);
    }
  }
  std::vector<T> xhat(x.size());
  std::vector<T> y(x.size());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * M;
      const T g = affine ? gamma.data()[c] : T(1);
      const T b = affine ? beta.data()[c] : T(0);
      for (std::size_t i = 0; i < M; ++i) {
        const T h = (xv[off + i] - mean[c]) * inv_std[c];
        xhat[off + i] = h;
        y[off + i] = h * g + b;
      }
    }
  auto xn = x.shared();
  auto gn = affine ? gamma.shared() : nullptr;
  auto bn = affine ? beta.shared() : nullptr;
  return make_result<T>(
      x.shape(), std::move(y), {xn, gn, bn},
      [=, xhat = std::move(xhat)](auto& self) {
        const T* g = self.grad.data();
        T* dX = xn->requires_grad ? xn->ensure_grad() : nullptr;
        T* dG = gn && gn->requires_grad ? gn->ensure_grad() : nullptr;
        T* dB = bn && bn->requires_grad ? bn->ensure_grad() : nullptr;
        for (int c = 0; c < C; ++c) {
          const T gam = gn ? gn->value[c] : T(1);
          double sum_g = 0, sum_gh = 0;
          for (int n = 0; n < N; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * M;
            sum_g += detail::sum(g + off, M);
            sum_gh += detail::dot(g + off, xhat.data() + off, M);
          }
          if (dG) dG[c] += static_cast<T>(sum_gh);
          if (dB) dB[c] += static_cast<T>(sum_g);
          if (!dX) continue;
          if (training) {
            const T k = gam * inv_std[c];
            const T mg = static_cast<T>(sum_g / count);
            const T mgh = static_cast<T>(sum_gh / count);
            for (int n = 0; n < N; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * M;
              for (std::size_t i = 0; i < M; ++i)
                dX[off + i] += k * (g[off + i] - mg - xhat[off + i] * mgh);
            }
          } else {
            const T k = gam * inv_std[c];
            for (int n = 0; n < N; ++n) {
              const std::size_t off = (static_cast<std::size_t>(n) * C + c) * M;
              for (std::size_t i = 0; i < M; ++i) dX[off + i] += k * g[off + i];
            }
          }
        }
      });
}

/// 2-D pooling. Average pooling excludes padded cells from the divisor.
template <typename T>
Variable<T> pool2d(const Variable<T>& x, bool max_pool, int k, int stride, int pad) {
  detail::require_rank(x.shape(), 4, "pool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = detail::conv_out(H, k, stride, pad, 1);
  const int Wo = detail::conv_out(W, k, stride, pad, 1);
  if (Ho <= 0 || Wo <= 0) throw ShapeError("pool2d: empty output for input " + to_string(x.shape()));
  std::vector<T> y(static_cast<std::size_t>(N) * C * Ho * Wo);
  std::vector<int> arg(max_pool ? y.size() : 0);
  std::vector<T> inv_count(static_cast<std::size_t>(Ho) * Wo);
  for (int oh = 0; oh < Ho; ++oh)
    for (int ow = 0; ow < Wo; ++ow) {
      const int h0 = std::max(oh * stride - pad, 0), h1 = std::min(oh * stride - pad + k, H);
      const int w0 = std::max(ow * stride - pad, 0), w1 = std::min(ow * stride - pad + k, W);
      inv_count[oh * Wo + ow] = T(1) / static_cast<T>((h1 - h0) * (w1 - w0));
    }
  const T* xv = x.data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* xc = xv + static_cast<std::size_t>(nc) * H * W;
    T* yc = y.data() + static_cast<std::size_t>(nc) * Ho * Wo;
    for (int oh = 0; oh < Ho; ++oh) {
      const int h0 = std::max(oh * stride - pad, 0), h1 = std::min(oh * stride - pad + k, H);
      for (int ow = 0; ow < Wo; ++ow) {
        const int w0 = std::max(ow * stride - pad, 0), w1 = std::min(ow * stride - pad + k, W);
        if (max_pool) {
          T best = -std::numeric_limits<T>::infinity();
          int bi = h0 * W + w0;
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w)
              if (xc[h * W + w] > best) {
                best = xc[h * W + w];
                bi = h * W + w;
              }
          yc[oh * Wo + ow] = best;
          arg[static_cast<std::size_t>(nc) * Ho * Wo + oh * Wo + ow] = bi;
        } else {
          T s = 0;
          for (int h = h0; h < h1; ++h)
            for (int w = w0; w < w1; ++w) s += xc[h * W + w];
          yc[oh * Wo + ow] = s * inv_count[oh * Wo + ow];
        }
      }
    }
  }
  auto xn = x.shared();
  return make_result<T>(
      {N, C, Ho, Wo}, std::move(y), {xn},
      [=, arg = std::move(arg), inv_count = std::move(inv_count)](auto& self) {
        if (!xn->requires_grad) return;
        T* dX = xn->ensure_grad();
        for (int nc = 0; nc < N * C; ++nc) {
          T* dxc = dX + static_cast<std::size_t>(nc) * H * W;
          const T* gc = self.grad.data() + static_cast<std::size_t>(nc) * Ho * Wo;
          for (int oh = 0; oh < Ho; ++oh) {
            const int h0 = std::max(oh * stride - pad, 0), h1 = std::min(oh * stride - pad + k, H);
            for (int ow = 0; ow < Wo; ++ow) {
              const T gv = gc[oh * Wo + ow];
              if (max_pool) {
                dxc[arg[static_cast<std::size_t>(nc) * Ho * Wo + oh * Wo + ow]] += gv;
                continue;
              }
              const int w0 = std::max(ow * stride - pad, 0);
              const int w1 = std::min(ow * stride - pad + k, W);
              const T share = gv * inv_count[oh * Wo + ow];
              for (int h = h0; h < h1; ++h)
                for (int w = w0; w < w1; ++w) dxc[h * W + w] += share;
            }
          }
        }
      });
}

/// Channel-wise concatenation of NCHW maps.
template <typename T>
Variable<T> concat_channels(const std::vector<Variable<T>>& xs) {
  if (xs.empty()) throw ContractError("concat_channels: no operands");
  const int N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int C = 0;
  for (const auto& x : xs) {
    detail::require_rank(x.shape(), 4, "concat_channels");
    if (x.dim(0) != N || x.dim(2) != H || x.dim(3) != W)
      throw ShapeError("concat_channels: " + to_string(x.shape()) + " vs " +
                       to_string(xs[0].shape()));
    C += x.dim(1);
  }
  const std::size_t M = static_cast<std::size_t>(H) * W;
  std::vector<T> y(static_cast<std::size_t>(N) * C * M);
  std::vector<std::shared_ptr<typename Variable<T>::Node>> parents;
  std::vector<int> offsets;
  int c0 = 0;
  for (const auto& x : xs) {
    const int Cx = x.dim(1);
    for (int n = 0; n < N; ++n)
      std::copy_n(x.data() + static_cast<std::size_t>(n) * Cx * M, Cx * M,
                  y.data() + (static_cast<std::size_t>(n) * C + c0) * M);
    offsets.push_back(c0);
    parents.push_back(x.shared());
    c0 += Cx;
  }
  auto ps = parents;
  return make_result<T>({N, C, H, W}, std::move(y), std::move(parents), [=](auto& self) {
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (!ps[k]->requires_grad) continue;
      const int Cx = ps[k]->shape[1];
      T* dx = ps[k]->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const T* g = self.grad.data() + (static_cast<std::size_t>(n) * C + offsets[k]) * M;
        T* d = dx + static_cast<std::size_t>(n) * Cx * M;
        for (std::size_t i = 0; i < Cx * M; ++i) d[i] += g[i];
      }
    }
  });
}

/// Drops the first row and column: x[:, :, 1:, 1:].
template <typename T>
Variable<T> shift_crop(const Variable<T>& x) {
  detail::require_rank(x.shape(), 4, "shift_crop");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < 2 || W < 2) throw ShapeError("shift_crop: input too small " + to_string(x.shape()));
  std::vector<T> y(static_cast<std::size_t>(N) * C * (H - 1) * (W - 1));
  for (int nc = 0; nc < N * C; ++nc)
    for (int h = 1; h < H; ++h)
      std::copy_n(x.data() + (static_cast<std::size_t>(nc) * H + h) * W + 1, W - 1,
                  y.data() + (static_cast<std::size_t>(nc) * (H - 1) + h - 1) * (W - 1));
  auto xn = x.shared();
  return make_result<T>({N, C, H - 1, W - 1}, std::move(y), {xn}, [=](auto& self) {
    if (!xn->requires_grad) return;
    T* dx = xn->ensure_grad();
    for (int nc = 0; nc < N * C; ++nc)
      for (int h = 1; h < H; ++h) {
        const T* g = self.grad.data() + (static_cast<std::size_t>(nc) * (H - 1) + h - 1) * (W - 1);
        T* d = dx + (static_cast<std::size_t>(nc) * H + h) * W + 1;
        for (int w = 0; w < W - 1; ++w) d[w] += g[w];
      }
  });
}

/// (N,C,H,W) -> (N,C) spatial mean.
template <typename T>
Variable<T> global_avg_pool(const Variable<T>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t M = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<T> y(static_cast<std::size_t>(N) * C);
  for (std::size_t i = 0; i < y.size(); ++i) {
    T s = 0;
    const T* p = x.data() + i * M;
    for (std::size_t j = 0; j < M; ++j) s += p[j];
    y[i] = s / static_cast<T>(M);
  }
  auto xn = x.shared();
  return make_result<T>({N, C}, std::move(y), {xn}, [=](auto& self) {
    if (!xn->requires_grad) return;
    T* dx = xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T g = self.grad[i] / static_cast<T>(M);
      for (std::size_t j = 0; j < M; ++j) dx[i * M + j] += g;
    }
  });
}

/// y = x W^T + b with x: (N,in), w: (out,in), b: (out) or undefined.
template <typename T>
Variable<T> linear(const Variable<T>& x, const Variable<T>& w, const Variable<T>& b) {
  detail::require_rank(x.shape(), 2, "linear");
  detail::require_rank(w.shape(), 2, "linear weight");
  const int N = x.dim(0), In = x.dim(1), Out = w.dim(0);
  if (w.dim(1) != In)
    throw ShapeError("linear: input features " + std::to_string(In) + " vs weight " +
                     to_string(w.shape()));
  using Mat = detail::RowMat<T>;
  std::vector<T> y(static_cast<std::size_t>(N) * Out);
  Eigen::Map<Mat> Y(y.data(), N, Out);
  Y.noalias() = Eigen::Map<const Mat>(x.data(), N, In) *
                Eigen::Map<const Mat>(w.data(), Out, In).transpose();
  if (b.defined())
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < Out; ++o) Y(n, o) += b.data()[o];
  auto xn = x.shared();
  auto wn = w.shared();
  auto bn = b.defined() ? b.shared() : nullptr;
  return make_result<T>({N, Out}, std::move(y), {xn, wn, bn}, [=](auto& self) {
    Eigen::Map<const Mat> G(self.grad.data(), N, Out);
    if (xn->requires_grad) {
      Eigen::Map<Mat> DX(xn->ensure_grad(), N, In);
      DX.noalias() += G * Eigen::Map<const Mat>(wn->value.data(), Out, In);
    }
    if (wn->requires_grad) {
      Eigen::Map<Mat> DW(wn->ensure_grad(), Out, In);
      DW.noalias() += G.transpose() * Eigen::Map<const Mat>(xn->value.data(), N, In);
    }
    if (bn && bn->requires_grad) {
      T* db = bn->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < Out; ++o) db[o] += G(n, o);
    }
  });
}

/// Mean softmax cross-entropy over a batch of logits (N,K) with class ids.
template <typename T>
Variable<T> cross_entropy(const Variable<T>& logits, const std::vector<int>& labels) {
  detail::require_rank(logits.shape(), 2, "cross_entropy");
  const int N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != N) throw ShapeError("cross_entropy: label count mismatch");
  std::vector<T> probs(static_cast<std::size_t>(N) * K);
  double loss = 0;
  for (int n = 0; n < N; ++n) {
    if (labels[n] < 0 || labels[n] >= K) throw ContractError("cross_entropy: label out of range");
    auto p = softmax(logits.data() + static_cast<std::size_t>(n) * K, K);
    std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::size_t>(n) * K);
    const T* z = logits.data() + static_cast<std::size_t>(n) * K;
    T m = *std::max_element(z, z + K);
    double lse = 0;
    for (int k = 0; k < K; ++k) lse += std::exp(static_cast<double>(z[k] - m));
    loss += std::log(lse) + m - z[labels[n]];
  }
  auto ln = logits.shared();
  return make_result<T>({1}, {static_cast<T>(loss / N)}, {ln},
                        [=, probs = std::move(probs)](auto& self) {
                          if (!ln->requires_grad) return;
                          T* d = ln->ensure_grad();
                          const T g = self.grad[0] / static_cast<T>(N);
                          for (int n = 0; n < N; ++n)
                            for (int k = 0; k < K; ++k) {
                              const std::size_t i = static_cast<std::size_t>(n) * K + k;
                              d[i] += g * (probs[i] - (k == labels[n] ? T(1) : T(0)));
                            }
                        });
}

/// Mean per-entry binary cross-entropy with sigmoid on logits (N,K);
/// targets are 0/1 values laid out like the logits.
template <typename T>
Variable<T> bce_with_logits(const Variable<T>& logits, const std::vector<T>& targets) {
  detail::require_rank(logits.shape(), 2, "bce_with_logits");
  if (targets.size() != logits.size()) throw ShapeError("bce_with_logits: target count mismatch");
  const std::size_t total = logits.size();
  double loss = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const double z = logits.data()[i], t = targets[i];
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  auto ln = logits.shared();
  return make_result<T>({1}, {static_cast<T>(loss / total)}, {ln}, [=](auto& self) {
    if (!ln->requires_grad) return;
    T* d = ln->ensure_grad();
    const T g = self.grad[0] / static_cast<T>(total);
    for (std::size_t i = 0; i < total; ++i) {
      const T z = ln->value[i];
      const T s = T(1) / (T(1) + std::exp(-z));
      d[i] += g * (s - targets[i]);
    }
  });
}

/// Mean squared error against a constant target.
template <typename T>
Variable<T> mse(const Variable<T>& pred, const std::vector<T>& target) {
  if (target.size() != pred.size()) throw ShapeError("mse: target count mismatch");
  double loss = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred.data()[i] - target[i];
    loss += d * d;
  }
  const std::size_t n = target.size();
  auto pn = pred.shared();
  return make_result<T>({1}, {static_cast<T>(loss / n)}, {pn}, [=](auto& self) {
    if (!pn->requires_grad) return;
    T* d = pn->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      d[i] += self.grad[0] * T(2) * (pn->value[i] - target[i]) / static_cast<T>(n);
  });
}

}  // namespace pdarts::ops
