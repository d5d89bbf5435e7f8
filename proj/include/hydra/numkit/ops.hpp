#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "hydra/numkit/rng.hpp"
#include "hydra/numkit/tensor.hpp"

namespace hydra::num {

// ---------------------------------------------------------------------------
// Scalar activations
// ---------------------------------------------------------------------------

template <class T>
inline T sigmoid(T x) noexcept {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
inline T silu(T x) noexcept {
  return x * sigmoid(x);
}

/// d/dx [x * sigmoid(x)]
template <class T>
inline T silu_grad(T x) noexcept {
  const T s = sigmoid(x);
  return s * (T(1) + x * (T(1) - s));
}

/// log(1 + exp(x)) without overflow.
template <class T>
inline T softplus(T x) noexcept {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------
// Matrix products. Weight matrices follow the [out x in] convention, so a
// position-wise linear map over rows of x is x * W^T (`matmul_nt`).
// ---------------------------------------------------------------------------

namespace detail {
inline void require_rank2(const Shape& s, const char* op, const char* arg) {
  if (s.size() != 2) {
    throw ShapeError(std::string(op) + ": " + arg + " must be rank 2, got " + shape_str(s));
  }
}
}  // namespace detail

/// c = a * b for a [m x k], b [k x p].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a.shape(), "matmul", "a");
  detail::require_rank2(b.shape(), "matmul", "b");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ, a " + shape_str(a.shape()) + " vs b " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  Tensor<T> c({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * p;
    for (std::size_t q = 0; q < k; ++q) {
      const T aiq = a(i, q);
      const T* brow = b.data() + q * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aiq * brow[j];
    }
  }
  return c;
}

/// c = a * b^T for a [m x k], b [p x k].
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a.shape(), "matmul_nt", "a");
  detail::require_rank2(b.shape(), "matmul_nt", "b");
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: inner extents differ, a " + shape_str(a.shape()) + " vs b^T of " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), p = b.rows();
  Tensor<T> c({m, p});
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * k;
    for (std::size_t j = 0; j < p; ++j) {
      const T* brow = b.data() + j * k;
      T s = 0;
      for (std::size_t q = 0; q < k; ++q) s += arow[q] * brow[q];
      c(i, j) = s;
    }
  }
  return c;
}

/// c += a^T * b for a [k x m], b [k x p]; c [m x p].
template <class T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols()) {
    throw ShapeError("matmul_tn: a " + shape_str(a.shape()) + ", b " + shape_str(b.shape()) +
                     ", c " + shape_str(c.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), p = b.cols();
  for (std::size_t q = 0; q < k; ++q) {
    const T* arow = a.data() + q * m;
    const T* brow = b.data() + q * p;
    for (std::size_t i = 0; i < m; ++i) {
      const T aqi = arow[i];
      if (aqi == T(0)) continue;
      T* crow = c.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aqi * brow[j];
    }
  }
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank2(a.shape(), "transpose", "a");
  Tensor<T> t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// Gradients of c = a * b given dc.
template <class T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dc, Tensor<T>& da,
                     Tensor<T>& db) {
  da = matmul_nt(dc, b);
  db = Tensor<T>(b.shape());
  matmul_tn_acc(a, dc, db);
}

/// Forward of y = x W^T.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  return matmul_nt(x, w);
}

/// Backward of y = x W^T. Accumulates into dw; returns dx.
template <class T>
Tensor<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                          Tensor<T>& dw) {
  matmul_tn_acc(dy, x, dw);
  return matmul(dy, w);
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

template <class T>
T logsumexp(std::span<const T> x) {
  if (x.empty()) throw ShapeError("logsumexp: empty input");
  T m = x[0];
  for (T v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  T s = 0;
  for (T v : x) s += std::exp(v - m);
  return m + std::log(s);
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.empty()) throw ShapeError("softmax: empty input");
  T m = x[0];
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, x[i]);
  Tensor<T> y(x.shape());
  T s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    s += y[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= s;
  return y;
}

/// dx given y = softmax(x) and dy.
template <class T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  T dot = 0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - dot);
  return dx;
}

// ---------------------------------------------------------------------------
// RMSNorm over the last axis
// ---------------------------------------------------------------------------

template <class T>
struct RmsNormCache {
  std::vector<T> inv_rms;  // one per row
};

template <class T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, T eps,
                  RmsNormCache<T>* cache = nullptr) {
  const std::size_t d = x.shape().back();
  if (d == 0) throw ShapeError("rmsnorm: last extent must be >= 1");
  if (gain.size() != d) {
    throw ShapeError("rmsnorm: gain has " + std::to_string(gain.size()) +
                     " entries, last extent is " + std::to_string(d));
  }
  if (!(eps >= T(0))) throw ShapeError("rmsnorm: eps must be non-negative");
  const std::size_t rows = x.size() / d;
  Tensor<T> y(x.shape());
  if (cache) cache->inv_rms.assign(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T ss = 0;
    for (std::size_t j = 0; j < d; ++j) ss += xr[j] * xr[j];
    const T inv = T(1) / std::sqrt(ss / T(d) + eps);
    T* yr = y.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] = xr[j] * inv * gain[j];
    if (cache) cache->inv_rms[r] = inv;
  }
  return y;
}

/// Backward of rmsnorm. Accumulates into dgain; returns dx.
template <class T>
Tensor<T> rmsnorm_backward(const Tensor<T>& x, const Tensor<T>& gain, const RmsNormCache<T>& cache,
                           const Tensor<T>& dy, Tensor<T>& dgain) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  Tensor<T> dx(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    const T* dyr = dy.data() + r * d;
    const T inv = cache.inv_rms[r];
    T dot = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain[j] += dyr[j] * xr[j] * inv;
      dot += gain[j] * dyr[j] * xr[j];
    }
    const T coef = inv * inv * inv * dot / T(d);
    T* dxr = dx.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) dxr[j] = inv * gain[j] * dyr[j] - coef * xr[j];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = silu(x[i]);
  return y;
}

template <class T>
Tensor<T> silu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * silu_grad(x[i]);
  return dx;
}

template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

/// Inverted-dropout mask: entries are 0 or 1/(1-p). p == 0 gives all ones.
template <class T>
Tensor<T> dropout_mask(const Shape& shape, double p, SeededRng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ShapeError("dropout: p must be in [0, 1)");
  Tensor<T> m(shape, T(1));
  if (p == 0.0) return m;
  const T keep = T(1) / T(1.0 - p);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < p ? T(0) : keep;
  return m;
}

}  // namespace hydra::num
