#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fsmt/tensor.hpp"

namespace fsmt::ops {

namespace detail {

// C[M,N] += A[M,K] * B[K,N]. Streaming saxpy form; deterministic order.
template <typename T>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  for (std::int64_t m = 0; m < M; ++m) {
    T* crow = C + m * N;
    const T* arow = A + m * K;
    for (std::int64_t k = 0; k < K; ++k) {
      const T a = arow[k];
      const T* brow = B + k * N;
      for (std::int64_t n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

// Four-lane unrolled dot product with a fixed combine tree.
template <typename T>
T dot(const T* a, const T* b, std::int64_t n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

// C[M,N] += A[M,K] * B[N,K]^T, i.e. C[m,n] += dot(A[m,:], B[n,:]).
template <typename T>
void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  for (std::int64_t m = 0; m < M; ++m) {
    const T* arow = A + m * K;
    T* crow = C + m * N;
    for (std::int64_t n = 0; n < N; ++n) crow[n] += dot(arow, B + n * K, K);
  }
}

// C[M,N] += A[K,M]^T * B[K,N], i.e. C[m,n] += sum_k A[k,m] * B[k,n].
template <typename T>
void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  for (std::int64_t k = 0; k < K; ++k) {
    const T* arow = A + k * M;
    const T* brow = B + k * N;
    for (std::int64_t m = 0; m < M; ++m) {
      const T a = arow[m];
      T* crow = C + m * N;
      for (std::int64_t n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

// Unfold one [C,H,W] image into columns [C*k*k, Ho*Wo] for stride/pad conv.
template <typename T>
void im2col(const T* x, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, T* col) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    const T* plane = x + c * H * W;
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj, ++row) {
        T* out = col + row * Ho * Wo;
        for (std::int64_t oi = 0; oi < Ho; ++oi) {
          const std::int64_t ii = oi * stride - pad + ki;
          for (std::int64_t oj = 0; oj < Wo; ++oj) {
            const std::int64_t jj = oj * stride - pad + kj;
            out[oi * Wo + oj] = (ii >= 0 && ii < H && jj >= 0 && jj < W)
                                    ? plane[ii * W + jj]
                                    : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of column gradients back into an image gradient.
template <typename T>
void col2im_add(const T* col, std::int64_t C, std::int64_t H, std::int64_t W, std::int64_t k,
                std::int64_t stride, std::int64_t pad, std::int64_t Ho, std::int64_t Wo, T* gx) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    T* plane = gx + c * H * W;
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj, ++row) {
        const T* in = col + row * Ho * Wo;
        for (std::int64_t oi = 0; oi < Ho; ++oi) {
          const std::int64_t ii = oi * stride - pad + ki;
          if (ii < 0 || ii >= H) continue;
          for (std::int64_t oj = 0; oj < Wo; ++oj) {
            const std::int64_t jj = oj * stride - pad + kj;
            if (jj >= 0 && jj < W) plane[ii * W + jj] += in[oi * Wo + oj];
          }
        }
      }
    }
  }
}

template <typename T>
bool any_requires(const std::vector<TensorT<T>>& ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

template <typename T>
TensorT<T> make_output(const char* op, Shape shape, std::vector<T> data,
                       std::vector<TensorT<T>> inputs,
                       std::function<void(const TensorT<T>&)> backward) {
  const bool req = any_requires(inputs);
  TensorT<T> out(std::move(shape), std::move(data), req);
  if (req) {
    auto node = std::make_shared<AutogradNode<T>>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.set_node(std::move(node));
  }
  return out;
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and arithmetic ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& x) {
  std::vector<T> y(x.data());
  for (auto& v : y) v = v > T(0) ? v : T(0);
  return detail::make_output<T>(
      "relu", x.shape(), std::move(y), {x}, [x](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        const auto& xd = x.data();
        std::vector<T> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = xd[i] > T(0) ? g[i] : T(0);
        x.accumulate_grad(gx.data(), static_cast<std::int64_t>(gx.size()));
      });
}

// add(a, b): same-shape elementwise, or bias broadcast where b has rank 1 and
// matches a's axis-1 extent (covers [B,D]+[D] and [B,C,H,W]+[C]).
template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = !same && b.rank() == 1 && a.rank() >= 2 && b.dim(0) == a.dim(1);
  detail::check(same || bias, "add: incompatible shapes " + shape_str(a.shape()) +
                                  " and " + shape_str(b.shape()));
  std::vector<T> y(a.data());
  std::int64_t outer = 1, mid = 1, inner = 1;
  if (bias) {
    outer = a.dim(0);
    mid = a.dim(1);
    inner = a.numel() / (outer * mid);
    const auto& bd = b.data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t m = 0; m < mid; ++m) {
        T* row = y.data() + (o * mid + m) * inner;
        const T bv = bd[static_cast<std::size_t>(m)];
        for (std::int64_t i = 0; i < inner; ++i) row[i] += bv;
      }
  } else {
    const auto& bd = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bd[i];
  }
  return detail::make_output<T>(
      "add", a.shape(), std::move(y), {a, b},
      [a, b, bias, outer, mid, inner](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) a.accumulate_grad(g.data(), out.numel());
        if (!b.requires_grad()) return;
        if (!bias) {
          b.accumulate_grad(g.data(), out.numel());
          return;
        }
        std::vector<T> gb(static_cast<std::size_t>(mid), T(0));
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t m = 0; m < mid; ++m) {
            const T* row = g.data() + (o * mid + m) * inner;
            T s = 0;
            for (std::int64_t i = 0; i < inner; ++i) s += row[i];
            gb[static_cast<std::size_t>(m)] += s;
          }
        b.accumulate_grad(gb.data(), mid);
      });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                            " vs " + shape_str(b.shape()));
  std::vector<T> y(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bd[i];
  return detail::make_output<T>(
      "mul", a.shape(), std::move(y), {a, b}, [a, b](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
          std::vector<T> ga(g.size());
          const auto& bd2 = b.data();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bd2[i];
          a.accumulate_grad(ga.data(), out.numel());
        }
        if (b.requires_grad()) {
          std::vector<T> gb(g.size());
          const auto& ad = a.data();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * ad[i];
          b.accumulate_grad(gb.data(), out.numel());
        }
      });
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T c) {
  std::vector<T> y(x.data());
  for (auto& v : y) v *= c;
  return detail::make_output<T>(
      "scale", x.shape(), std::move(y), {x}, [x, c](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        std::vector<T> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = c * g[i];
        x.accumulate_grad(gx.data(), out.numel());
      });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check(a.rank() == 2 && b.rank() == 2,
                "matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()));
  detail::check(a.dim(1) == b.dim(0), "matmul: inner dims differ, " + shape_str(a.shape()) +
                                          " x " + shape_str(b.shape()));
  const std::int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<T> y(static_cast<std::size_t>(M * N), T(0));
  detail::gemm_nn(M, N, K, a.data().data(), b.data().data(), y.data());
  return detail::make_output<T>(
      "matmul", Shape{M, N}, std::move(y), {a, b},
      [a, b, M, K, N](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        if (a.requires_grad()) {
          std::vector<T> ga(static_cast<std::size_t>(M * K), T(0));
          detail::gemm_nt(M, K, N, g.data(), b.data().data(), ga.data());
          a.accumulate_grad(ga.data(), M * K);
        }
        if (b.requires_grad()) {
          std::vector<T> gb(static_cast<std::size_t>(K * N), T(0));
          detail::gemm_tn(K, N, M, a.data().data(), g.data(), gb.data());
          b.accumulate_grad(gb.data(), K * N);
        }
      });
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, std::int64_t stride = 1,
                  std::int64_t pad = 0) {
  detail::check(x.rank() == 4, "conv2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  detail::check(w.rank() == 4 && w.dim(2) == w.dim(3),
                "conv2d: weight must be [Co,C,k,k], got " + shape_str(w.shape()));
  detail::check(x.dim(1) == w.dim(1),
                "conv2d: input channels " + std::to_string(x.dim(1)) + " != weight channels " +
                    std::to_string(w.dim(1)));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(0), k = w.dim(2);
  const std::int64_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::int64_t Wo = (W + 2 * pad - k) / stride + 1;
  detail::check(Ho >= 1 && Wo >= 1, "conv2d: kernel " + std::to_string(k) +
                                        " too large for input " + shape_str(x.shape()));
  const std::int64_t K = C * k * k, P = Ho * Wo;
  std::vector<T> y(static_cast<std::size_t>(B * Co * P), T(0));
  std::vector<T> col(static_cast<std::size_t>(K * P));
  for (std::int64_t b = 0; b < B; ++b) {
    detail::im2col(x.data().data() + b * C * H * W, C, H, W, k, stride, pad, Ho, Wo, col.data());
    detail::gemm_nn(Co, P, K, w.data().data(), col.data(), y.data() + b * Co * P);
  }
  return detail::make_output<T>(
      "conv2d", Shape{B, Co, Ho, Wo}, std::move(y), {x, w},
      [x, w, stride, pad, B, C, H, W, Co, k, Ho, Wo, K, P](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        std::vector<T> col(static_cast<std::size_t>(K * P));
        std::vector<T> gw;
        if (w.requires_grad()) gw.assign(static_cast<std::size_t>(Co * K), T(0));
        std::vector<T> gx, gcol;
        if (x.requires_grad()) {
          gx.assign(static_cast<std::size_t>(B * C * H * W), T(0));
          gcol.resize(static_cast<std::size_t>(K * P));
        }
        for (std::int64_t b = 0; b < B; ++b) {
          const T* gb = g.data() + b * Co * P;
          if (w.requires_grad()) {
            detail::im2col(x.data().data() + b * C * H * W, C, H, W, k, stride, pad, Ho, Wo,
                           col.data());
            detail::gemm_nt(Co, K, P, gb, col.data(), gw.data());
          }
          if (x.requires_grad()) {
            std::fill(gcol.begin(), gcol.end(), T(0));
            detail::gemm_tn(K, P, Co, w.data().data(), gb, gcol.data());
            detail::col2im_add(gcol.data(), C, H, W, k, stride, pad, Ho, Wo,
                               gx.data() + b * C * H * W);
          }
        }
        if (w.requires_grad()) w.accumulate_grad(gw.data(), Co * K);
        if (x.requires_grad()) x.accumulate_grad(gx.data(), B * C * H * W);
      });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> max_pool2d(const TensorT<T>& x, std::int64_t kernel, std::int64_t stride) {
  detail::check(x.rank() == 4, "max_pool2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::check(H >= kernel && W >= kernel,
                "max_pool2d: kernel " + std::to_string(kernel) + " exceeds input " +
                    shape_str(x.shape()));
  const std::int64_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  std::vector<T> y(static_cast<std::size_t>(B * C * Ho * Wo));
  std::vector<std::int64_t> argmax(y.size());
  const T* xd = x.data().data();
  std::size_t o = 0;
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* plane = xd + bc * H * W;
    for (std::int64_t oi = 0; oi < Ho; ++oi)
      for (std::int64_t oj = 0; oj < Wo; ++oj, ++o) {
        std::int64_t best = (oi * stride) * W + oj * stride;
        T bv = plane[best];
        for (std::int64_t ki = 0; ki < kernel; ++ki)
          for (std::int64_t kj = 0; kj < kernel; ++kj) {
            const std::int64_t idx = (oi * stride + ki) * W + (oj * stride + kj);
            if (plane[idx] > bv) {
              bv = plane[idx];
              best = idx;
            }
          }
        y[o] = bv;
        argmax[o] = bc * H * W + best;
      }
  }
  return detail::make_output<T>(
      "max_pool2d", Shape{B, C, Ho, Wo}, std::move(y), {x},
      [x, argmax = std::move(argmax)](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        std::vector<T> gx(static_cast<std::size_t>(x.numel()), T(0));
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[static_cast<std::size_t>(argmax[i])] += g[i];
        x.accumulate_grad(gx.data(), x.numel());
      });
}

template <typename T>
TensorT<T> avg_pool2d(const TensorT<T>& x, std::int64_t kernel, std::int64_t stride) {
  detail::check(x.rank() == 4, "avg_pool2d: input must be [B,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::check(H >= kernel && W >= kernel,
                "avg_pool2d: kernel " + std::to_string(kernel) + " exceeds input " +
                    shape_str(x.shape()));
  const std::int64_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  std::vector<T> y(static_cast<std::size_t>(B * C * Ho * Wo), T(0));
  const T* xd = x.data().data();
  std::size_t o = 0;
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* plane = xd + bc * H * W;
    for (std::int64_t oi = 0; oi < Ho; ++oi)
      for (std::int64_t oj = 0; oj < Wo; ++oj, ++o) {
        T s = 0;
        for (std::int64_t ki = 0; ki < kernel; ++ki)
          for (std::int64_t kj = 0; kj < kernel; ++kj)
            s += plane[(oi * stride + ki) * W + (oj * stride + kj)];
        y[o] = s * inv;
      }
  }
  return detail::make_output<T>(
      "avg_pool2d", Shape{B, C, Ho, Wo}, std::move(y), {x},
      [x, kernel, stride, B, C, H, W, Ho, Wo, inv](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        std::vector<T> gx(static_cast<std::size_t>(x.numel()), T(0));
        std::size_t o = 0;
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          T* plane = gx.data() + bc * H * W;
          for (std::int64_t oi = 0; oi < Ho; ++oi)
            for (std::int64_t oj = 0; oj < Wo; ++oj, ++o) {
              const T gv = g[o] * inv;
              for (std::int64_t ki = 0; ki < kernel; ++ki)
                for (std::int64_t kj = 0; kj < kernel; ++kj)
                  plane[(oi * stride + ki) * W + (oj * stride + kj)] += gv;
            }
        }
        x.accumulate_grad(gx.data(), x.numel());
      });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

// Batch normalization over axis 1 of a rank-2 [B,D] or rank-4 [B,C,H,W]
// tensor. running_mean/running_var are plain buffers (never differentiated);
// with use_batch_stats the batch statistics normalize the input, and
// update_running folds them into the buffers with the given momentum.
template <typename T>
TensorT<T> batch_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      TensorT<T>& running_mean, TensorT<T>& running_var, bool use_batch_stats,
                      bool update_running, T momentum = T(0.9), T eps = T(1e-5)) {
  detail::check(x.rank() == 2 || x.rank() == 4,
                "batch_norm: input must be rank 2 or 4, got " + shape_str(x.shape()));
  const std::int64_t Ch = x.dim(1);
  detail::check(gamma.numel() == Ch && beta.numel() == Ch && running_mean.numel() == Ch &&
                    running_var.numel() == Ch,
                "batch_norm: parameter size mismatch for " + std::to_string(Ch) + " channels");
  const std::int64_t B = x.dim(0);
  const std::int64_t inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::int64_t count = B * inner;
  const T* xd = x.data().data();

  std::vector<T> mean(static_cast<std::size_t>(Ch), T(0));
  std::vector<T> var(static_cast<std::size_t>(Ch), T(0));
  if (use_batch_stats) {
    for (std::int64_t c = 0; c < Ch; ++c) {
      T s = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* lane = xd + (b * Ch + c) * inner;
        for (std::int64_t i = 0; i < inner; ++i) s += lane[i];
      }
      const T m = s / static_cast<T>(count);
      T v = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* lane = xd + (b * Ch + c) * inner;
        for (std::int64_t i = 0; i < inner; ++i) {
          const T d = lane[i] - m;
          v += d * d;
        }
      }
      mean[static_cast<std::size_t>(c)] = m;
      var[static_cast<std::size_t>(c)] = v / static_cast<T>(count);
    }
    if (update_running) {
      auto& rm = running_mean.data();
      auto& rv = running_var.data();
      for (std::int64_t c = 0; c < Ch; ++c) {
        rm[static_cast<std::size_t>(c)] = momentum * rm[static_cast<std::size_t>(c)] +
                                          (T(1) - momentum) * mean[static_cast<std::size_t>(c)];
        rv[static_cast<std::size_t>(c)] = momentum * rv[static_cast<std::size_t>(c)] +
                                          (T(1) - momentum) * var[static_cast<std::size_t>(c)];
      }
    }
  } else {
    mean = running_mean.data();
    var = running_var.data();
  }

  std::vector<T> rstd(static_cast<std::size_t>(Ch));
  for (std::int64_t c = 0; c < Ch; ++c)
    rstd[static_cast<std::size_t>(c)] =
        T(1) / std::sqrt(var[static_cast<std::size_t>(c)] + eps);

  std::vector<T> xhat(x.data().size());
  std::vector<T> y(x.data().size());
  const auto& gd = gamma.data();
  const auto& bd = beta.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < Ch; ++c) {
      const std::size_t base = static_cast<std::size_t>((b * Ch + c) * inner);
      const T m = mean[static_cast<std::size_t>(c)];
      const T r = rstd[static_cast<std::size_t>(c)];
      const T ga = gd[static_cast<std::size_t>(c)];
      const T be = bd[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < inner; ++i) {
        const T h = (xd[base + static_cast<std::size_t>(i)] - m) * r;
        xhat[base + static_cast<std::size_t>(i)] = h;
        y[base + static_cast<std::size_t>(i)] = ga * h + be;
      }
    }

  return detail::make_output<T>(
      "batch_norm", x.shape(), std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), use_batch_stats, B, Ch,
       inner, count](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        const auto& gd = gamma.data();
        if (gamma.requires_grad() || beta.requires_grad()) {
          std::vector<T> dgamma(static_cast<std::size_t>(Ch), T(0));
          std::vector<T> dbeta(static_cast<std::size_t>(Ch), T(0));
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < Ch; ++c) {
              const std::size_t base = static_cast<std::size_t>((b * Ch + c) * inner);
              T sg = 0, sb = 0;
              for (std::int64_t i = 0; i < inner; ++i) {
                sg += g[base + static_cast<std::size_t>(i)] *
                      xhat[base + static_cast<std::size_t>(i)];
                sb += g[base + static_cast<std::size_t>(i)];
              }
              dgamma[static_cast<std::size_t>(c)] += sg;
              dbeta[static_cast<std::size_t>(c)] += sb;
            }
          if (gamma.requires_grad()) gamma.accumulate_grad(dgamma.data(), Ch);
          if (beta.requires_grad()) beta.accumulate_grad(dbeta.data(), Ch);
        }
        if (!x.requires_grad()) return;
        std::vector<T> gx(g.size());
        if (!use_batch_stats) {
          // Affine map with fixed statistics.
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < Ch; ++c) {
              const std::size_t base = static_cast<std::size_t>((b * Ch + c) * inner);
              const T s = gd[static_cast<std::size_t>(c)] * rstd[static_cast<std::size_t>(c)];
              for (std::int64_t i = 0; i < inner; ++i)
                gx[base + static_cast<std::size_t>(i)] =
                    g[base + static_cast<std::size_t>(i)] * s;
            }
        } else {
          // Differentiate through the batch statistics.
          for (std::int64_t c = 0; c < Ch; ++c) {
            T sum_g = 0, sum_gx = 0;
            for (std::int64_t b = 0; b < B; ++b) {
              const std::size_t base = static_cast<std::size_t>((b * Ch + c) * inner);
              for (std::int64_t i = 0; i < inner; ++i) {
                const T gi = g[base + static_cast<std::size_t>(i)] *
                             gd[static_cast<std::size_t>(c)];
                sum_g += gi;
                sum_gx += gi * xhat[base + static_cast<std::size_t>(i)];
              }
            }
            const T inv_count = T(1) / static_cast<T>(count);
            const T r = rstd[static_cast<std::size_t>(c)];
            for (std::int64_t b = 0; b < B; ++b) {
              const std::size_t base = static_cast<std::size_t>((b * Ch + c) * inner);
              for (std::int64_t i = 0; i < inner; ++i) {
                const T gi = g[base + static_cast<std::size_t>(i)] *
                             gd[static_cast<std::size_t>(c)];
                gx[base + static_cast<std::size_t>(i)] =
                    r * (gi - inv_count * sum_g -
                         xhat[base + static_cast<std::size_t>(i)] * inv_count * sum_gx);
              }
            }
          }
        }
        x.accumulate_grad(gx.data(), x.numel());
      });
}

// Unit-normalize along `axis`. Divides by max(norm, eps); exactly-zero lanes
// raise an error in strict mode.
template <typename T>
TensorT<T> l2_normalize(const TensorT<T>& x, std::int64_t axis, bool strict = false,
                        T eps = T(1e-12)) {
  detail::check(axis >= 0 && axis < static_cast<std::int64_t>(x.rank()),
                "l2_normalize: axis " + std::to_string(axis) + " out of range for " +
                    shape_str(x.shape()));
  std::int64_t outer = 1, lane = x.dim(static_cast<std::size_t>(axis)), inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const T* xd = x.data().data();
  std::vector<T> denom(static_cast<std::size_t>(outer * inner));
  std::vector<T> y(x.data().size());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      T s = 0;
      for (std::int64_t l = 0; l < lane; ++l) {
        const T v = xd[(o * lane + l) * inner + i];
        s += v * v;
      }
      const T norm = std::sqrt(s);
      if (strict && norm == T(0))
        throw Error("l2_normalize: zero vector along axis " + std::to_string(axis));
      const T d = std::max(norm, eps);
      denom[static_cast<std::size_t>(o * inner + i)] = d;
      for (std::int64_t l = 0; l < lane; ++l)
        y[static_cast<std::size_t>((o * lane + l) * inner + i)] =
            xd[(o * lane + l) * inner + i] / d;
    }
  return detail::make_output<T>(
      "l2_normalize", x.shape(), std::move(y), {x},
      [x, outer, lane, inner, denom = std::move(denom)](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        const auto& yd = out.data();
        std::vector<T> gx(g.size());
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < inner; ++i) {
            const T d = denom[static_cast<std::size_t>(o * inner + i)];
            T gy = 0;
            for (std::int64_t l = 0; l < lane; ++l) {
              const std::size_t idx = static_cast<std::size_t>((o * lane + l) * inner + i);
              gy += g[idx] * yd[idx];
            }
            for (std::int64_t l = 0; l < lane; ++l) {
              const std::size_t idx = static_cast<std::size_t>((o * lane + l) * inner + i);
              gx[idx] = (g[idx] - yd[idx] * gy) / d;
            }
          }
        x.accumulate_grad(gx.data(), x.numel());
      });
}

// ---------------------------------------------------------------------------
// Losses and reductions
// ---------------------------------------------------------------------------

// Mean cross-entropy of logits [B,C] against integer labels, fused with a
// numerically stable log-softmax.
template <typename T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits, const std::vector<std::int32_t>& labels) {
  detail::check(logits.rank() == 2,
                "softmax_cross_entropy: logits must be [B,C], got " + shape_str(logits.shape()));
  const std::int64_t B = logits.dim(0), C = logits.dim(1);
  detail::check(static_cast<std::int64_t>(labels.size()) == B,
                "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                    std::to_string(B));
  for (std::int32_t l : labels)
    if (l < 0 || l >= C)
      throw Error("softmax_cross_entropy: label " + std::to_string(l) + " out of range [0," +
                  std::to_string(C) + ")");
  const T* zd = logits.data().data();
  std::vector<T> probs(logits.data().size());
  T loss = 0;
  for (std::int64_t b = 0; b < B; ++b) {
    const T* row = zd + b * C;
    T m = row[0];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, row[c]);
    T se = 0;
    for (std::int64_t c = 0; c < C; ++c) se += std::exp(row[c] - m);
    const T lse = m + std::log(se);
    for (std::int64_t c = 0; c < C; ++c)
      probs[static_cast<std::size_t>(b * C + c)] = std::exp(row[c] - lse);
    loss += lse - row[labels[static_cast<std::size_t>(b)]];
  }
  loss /= static_cast<T>(B);
  return detail::make_output<T>(
      "softmax_cross_entropy", Shape{}, std::vector<T>{loss}, {logits},
      [logits, labels, probs = std::move(probs), B, C](const TensorT<T>& out) mutable {
        const T go = out.grad()[0] / static_cast<T>(B);
        std::vector<T> gz(probs.size());
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c) {
            const std::size_t idx = static_cast<std::size_t>(b * C + c);
            gz[idx] = go * (probs[idx] - (labels[static_cast<std::size_t>(b)] == c ? T(1) : T(0)));
          }
        logits.accumulate_grad(gz.data(), logits.numel());
      });
}

template <typename T>
TensorT<T> mse(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check(a.shape() == b.shape(), "mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                                            shape_str(b.shape()));
  const std::int64_t n = a.numel();
  const auto& ad = a.data();
  const auto& bd = b.data();
  T s = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T d = ad[static_cast<std::size_t>(i)] - bd[static_cast<std::size_t>(i)];
    s += d * d;
  }
  s /= static_cast<T>(n);
  return detail::make_output<T>(
      "mse", Shape{}, std::vector<T>{s}, {a, b}, [a, b, n](const TensorT<T>& out) mutable {
        const T go = out.grad()[0] * T(2) / static_cast<T>(n);
        const auto& ad = a.data();
        const auto& bd = b.data();
        std::vector<T> d(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i)
          d[static_cast<std::size_t>(i)] =
              go * (ad[static_cast<std::size_t>(i)] - bd[static_cast<std::size_t>(i)]);
        if (a.requires_grad()) a.accumulate_grad(d.data(), n);
        if (b.requires_grad()) {
          for (auto& v : d) v = -v;
          b.accumulate_grad(d.data(), n);
        }
      });
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  const auto& xd = x.data();
  T s = 0;
  for (const T& v : xd) s += v;
  return detail::make_output<T>(
      "sum", Shape{}, std::vector<T>{s}, {x}, [x](const TensorT<T>& out) mutable {
        const T go = out.grad()[0];
        std::vector<T> gx(static_cast<std::size_t>(x.numel()), go);
        x.accumulate_grad(gx.data(), x.numel());
      });
}

template <typename T>
TensorT<T> mean(const TensorT<T>& x) {
  const auto& xd = x.data();
  T s = 0;
  for (const T& v : xd) s += v;
  s /= static_cast<T>(x.numel());
  return detail::make_output<T>(
      "mean", Shape{}, std::vector<T>{s}, {x}, [x](const TensorT<T>& out) mutable {
        const T go = out.grad()[0] / static_cast<T>(x.numel());
        std::vector<T> gx(static_cast<std::size_t>(x.numel()), go);
        x.accumulate_grad(gx.data(), x.numel());
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  detail::check(shape_numel(shape) == x.numel(),
                "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<T> y(x.data());
  return detail::make_output<T>(
      "reshape", std::move(shape), std::move(y), {x}, [x](const TensorT<T>& out) mutable {
        x.accumulate_grad(out.grad().data(), x.numel());
      });
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& xs, std::int64_t axis) {
  detail::check(!xs.empty(), "concat: no inputs");
  const std::size_t rank = xs[0].rank();
  detail::check(axis >= 0 && axis < static_cast<std::int64_t>(rank),
                "concat: axis " + std::to_string(axis) + " out of range");
  Shape out_shape = xs[0].shape();
  std::int64_t axis_total = 0;
  for (const auto& t : xs) {
    detail::check(t.rank() == rank, "concat: rank mismatch");
    for (std::size_t d = 0; d < rank; ++d)
      if (d != static_cast<std::size_t>(axis))
        detail::check(t.dim(d) == xs[0].dim(d),
                      "concat: dim " + std::to_string(d) + " mismatch " +
                          shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
    axis_total += t.dim(static_cast<std::size_t>(axis));
  }
  out_shape[static_cast<std::size_t>(axis)] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= xs[0].dim(static_cast<std::size_t>(d));
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < rank; ++d) inner *= xs[0].dim(d);

  std::vector<T> y(static_cast<std::size_t>(outer * axis_total * inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t off = 0;
    for (const auto& t : xs) {
      const std::int64_t block = t.dim(static_cast<std::size_t>(axis)) * inner;
      const T* src = t.data().data() + o * block;
      std::copy(src, src + block, y.data() + (o * axis_total + off) * inner);
      off += t.dim(static_cast<std::size_t>(axis));
    }
  }
  return detail::make_output<T>(
      "concat", std::move(out_shape), std::move(y), xs,
      [xs, axis, outer, inner, axis_total](const TensorT<T>& out) mutable {
        const auto& g = out.grad();
        for (std::int64_t o = 0; o < outer; ++o) {
          std::int64_t off = 0;
          for (auto& t : xs) {
            const std::int64_t len = t.dim(static_cast<std::size_t>(axis));
            if (t.requires_grad()) {
              // Accumulate one outer-slice at a time.
              std::vector<T> gt(static_cast<std::size_t>(len * inner));
              std::copy(g.data() + (o * axis_total + off) * inner,
                        g.data() + (o * axis_total + off + len) * inner, gt.data());
              T* dst = t.ensure_grad().data() + o * len * inner;
              for (std::int64_t i = 0; i < len * inner; ++i)
                dst[i] += gt[static_cast<std::size_t>(i)];
            }
            off += len;
          }
        }
      });
}

}  // namespace fsmt::ops
