#pragma once

// Selective state-space head with a scalar-per-head decay. One head maps a
// [n x d_c] slice of the latent input to a [n x d_c] output:
//
//   in_proj -> causal depthwise conv -> SiLU -> selective scan -> out_proj
//
// The scan keeps an [E x N] state per head (E = expand * d_c channels, N state
// dims). Delta, B and C are computed from the scan input and shared by every
// channel of the head; the output at step t reads the post-update state.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "hydra/numkit/ops.hpp"
#include "hydra/numkit/rng.hpp"
#include "hydra/numkit/tensor.hpp"

namespace hydra::ssm {

struct SsmConfig {
  std::size_t expand = 2;
  std::size_t state = 16;
  std::size_t conv_width = 4;
  bool use_conv = true;
};

template <class T>
struct MambaHeadParams {
  Tensor<T> in_proj;      // [E x d_c]
  Tensor<T> conv_kernel;  // [E x w]
  Tensor<T> a_log;        // [1], A = -exp(a_log)
  Tensor<T> delta_proj;   // [E]
  Tensor<T> delta_bias;   // [1]
  Tensor<T> b_proj;       // [N x E]
  Tensor<T> c_proj;       // [N x E]
  Tensor<T> skip_d;       // [E]
  Tensor<T> out_proj;     // [d_c x E]

  static MambaHeadParams zeros(std::size_t d_c, const SsmConfig& cfg) {
    if (d_c == 0 || cfg.expand == 0 || cfg.state == 0 || cfg.conv_width == 0) {
      throw ShapeError("mamba head: d_c, expand, state and conv_width must all be >= 1");
    }
    const std::size_t e = cfg.expand * d_c, n = cfg.state, w = cfg.conv_width;
    MambaHeadParams p;
    p.in_proj = Tensor<T>({e, d_c});
    p.conv_kernel = Tensor<T>({e, w});
    p.a_log = Tensor<T>({1});
    p.delta_proj = Tensor<T>({e});
    p.delta_bias = Tensor<T>({1});
    p.b_proj = Tensor<T>({n, e});
    p.c_proj = Tensor<T>({n, e});
    p.skip_d = Tensor<T>({e});
    p.out_proj = Tensor<T>({d_c, e});
    return p;
  }

  std::size_t channels() const { return in_proj.rows(); }
  std::size_t latent_dim() const { return in_proj.cols(); }
  std::size_t state_dim() const { return b_proj.rows(); }
  std::size_t conv_width() const { return conv_kernel.cols(); }
  T decay_rate() const { return -std::exp(a_log[0]); }

  template <class F>
  void for_each(F&& f) {
    f("in_proj", in_proj);
    f("conv_kernel", conv_kernel);
    f("a_log", a_log);
    f("delta_proj", delta_proj);
    f("delta_bias", delta_bias);
    f("b_proj", b_proj);
    f("c_proj", c_proj);
    f("skip_d", skip_d);
    f("out_proj", out_proj);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<MambaHeadParams*>(this)->for_each(
        [&](const char* name, Tensor<T>& t) { f(name, static_cast<const Tensor<T>&>(t)); });
  }
};

/// Mamba-2 reference initialisation: a_log = ln U[1,16], projections
/// truncated-normal(0.02), D = 1, conv kernel U[-1/sqrt(w), 1/sqrt(w)], and
/// the delta bias set so softplus(bias) is log-uniform in [1e-3, 1e-1].
template <class T>
void init_mamba_head(MambaHeadParams<T>& p, SeededRng& rng, double std = 0.02) {
  auto tn = [&](Tensor<T>& t) {
    for (auto& v : t.values()) v = static_cast<T>(rng.truncated_normal(std));
  };
  tn(p.in_proj);
  const double bound = 1.0 / std::sqrt(static_cast<double>(p.conv_width()));
  for (auto& v : p.conv_kernel.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  p.a_log[0] = static_cast<T>(std::log(rng.uniform(1.0, 16.0)));
  tn(p.delta_proj);
  const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
  p.delta_bias[0] = static_cast<T>(dt + std::log(-std::expm1(-dt)));
  tn(p.b_proj);
  tn(p.c_proj);
  p.skip_d.fill(T(1));
  tn(p.out_proj);
}

template <class T>
struct ScanState {
  Tensor<T> h;  // [E x N]

  static ScanState zeros(std::size_t channels, std::size_t state) {
    return {Tensor<T>({channels, state})};
  }
};

template <class T>
struct Discretized {
  T a_bar;
  std::vector<T> b_bar;
};

/// Zero-order hold for the scalar decay, Euler rule for B.
template <class T>
Discretized<T> discretize(T delta, T a_log, std::span<const T> b) {
  if (!(delta > T(0))) throw std::invalid_argument("discretize: delta must be > 0");
  Discretized<T> out{std::exp(delta * -std::exp(a_log)), std::vector<T>(b.size())};
  for (std::size_t j = 0; j < b.size(); ++j) out.b_bar[j] = delta * b[j];
  return out;
}

/// Per-step quantities kept by the scan for the backward pass.
template <class T>
struct ScanRecord {
  std::vector<T> z;      // pre-softplus delta logit, [n]
  std::vector<T> delta;  // [n]
  std::vector<T> a_bar;  // [n]
  Tensor<T> b;           // [n x N]
  Tensor<T> c;           // [n x N]
  std::vector<Tensor<T>> states;  // n + 1 states, states[0] is the initial state
};

template <class T>
struct ScanResult {
  Tensor<T> y;  // [n x E]
  ScanState<T> state;
};

namespace detail {

template <class T>
void check_scan_shapes(const Tensor<T>& x, const MambaHeadParams<T>& p, const ScanState<T>& s0) {
  if (x.rank() != 2 || x.cols() != p.channels()) {
    throw ShapeError("scan: input " + shape_str(x.shape()) + " needs " +
                     std::to_string(p.channels()) + " channels");
  }
  if (s0.h.shape() != Shape{p.channels(), p.state_dim()}) {
    throw ShapeError("scan: state " + shape_str(s0.h.shape()) + " expected " +
                     shape_str({p.channels(), p.state_dim()}));
  }
}

/// Delta, B, C for one step.
template <class T>
void step_projections(const MambaHeadParams<T>& p, const T* u, T& z, T& delta, T* b, T* c) {
  const std::size_t e = p.channels(), n = p.state_dim();
  T acc = p.delta_bias[0];
  for (std::size_t k = 0; k < e; ++k) acc += p.delta_proj[k] * u[k];
  z = acc;
  delta = num::softplus(acc);
  for (std::size_t j = 0; j < n; ++j) {
    const T* br = p.b_proj.data() + j * e;
    const T* cr = p.c_proj.data() + j * e;
    T sb = 0, sc = 0;
    for (std::size_t k = 0; k < e; ++k) {
      sb += br[k] * u[k];
      sc += cr[k] * u[k];
    }
    b[j] = sb;
    c[j] = sc;
  }
}

}  // namespace detail

/// Reference recurrence, one step at a time.
template <class T>
ScanResult<T> scan_sequential(const Tensor<T>& x, const MambaHeadParams<T>& p,
                              const ScanState<T>& state0, ScanRecord<T>* rec = nullptr) {
  detail::check_scan_shapes(x, p, state0);
  const std::size_t len = x.rows(), e = p.channels(), n = p.state_dim();
  const T a_rate = p.decay_rate();
  ScanResult<T> out{Tensor<T>({len, e}), state0};
  Tensor<T>& h = out.state.h;
  if (rec) {
    rec->z.assign(len, T(0));
    rec->delta.assign(len, T(0));
    rec->a_bar.assign(len, T(0));
    rec->b = Tensor<T>({len, n});
    rec->c = Tensor<T>({len, n});
    rec->states.assign(1, state0.h);
    rec->states.reserve(len + 1);
  }
  std::vector<T> b(n), c(n), bb(n);
  for (std::size_t t = 0; t < len; ++t) {
    const T* u = x.data() + t * e;
    T z, delta;
    detail::step_projections(p, u, z, delta, b.data(), c.data());
    const T a_bar = std::exp(delta * a_rate);
    for (std::size_t j = 0; j < n; ++j) bb[j] = delta * b[j];
    T* y = out.y.data() + t * e;
    for (std::size_t ch = 0; ch < e; ++ch) {
      T* hr = h.data() + ch * n;
      const T uc = u[ch];
      T acc = 0;
      for (std::size_t j = 0; j < n; ++j) {
        hr[j] = a_bar * hr[j] + bb[j] * uc;
        acc += hr[j] * c[j];
      }
      y[ch] = acc + p.skip_d[ch] * uc;
    }
    if (rec) {
      rec->z[t] = z;
      rec->delta[t] = delta;
      rec->a_bar[t] = a_bar;
      std::copy(b.begin(), b.end(), rec->b.data() + t * n);
      std::copy(c.begin(), c.end(), rec->c.data() + t * n);
      rec->states.push_back(h);
    }
  }
  return out;
}

/// Chunked formulation: within each chunk the output is the closed-form
/// decayed sum y_t = C_t (prod a) H_0 + sum_{s<=t} exp(cum_t - cum_s) <C_t, Bbar_s> x_s,
/// evaluated as a lower-triangular [chunk x chunk] kernel, and the state is
/// carried across chunk boundaries.
template <class T>
ScanResult<T> scan_chunked(const Tensor<T>& x, const MambaHeadParams<T>& p,
                           const ScanState<T>& state0, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("scan_chunked: chunk must be >= 1");
  detail::check_scan_shapes(x, p, state0);
  const std::size_t len = x.rows(), e = p.channels(), n = p.state_dim();
  const T a_rate = p.decay_rate();
  ScanResult<T> out{Tensor<T>({len, e}), state0};
  Tensor<T>& h = out.state.h;

  std::vector<T> cum, bb, c, g;
  std::vector<T> b(n);
  for (std::size_t s0 = 0; s0 < len; s0 += chunk) {
    const std::size_t m = std::min(chunk, len - s0);
    cum.assign(m, T(0));
    bb.assign(m * n, T(0));
    c.assign(m * n, T(0));
    T running = 0;
    for (std::size_t t = 0; t < m; ++t) {
      T z, delta;
      detail::step_projections(p, x.data() + (s0 + t) * e, z, delta, b.data(), c.data() + t * n);
      running += delta * a_rate;
      cum[t] = running;
      for (std::size_t j = 0; j < n; ++j) bb[t * n + j] = delta * b[j];
    }
    // g[t][s] = exp(cum_t - cum_s) <c_t, bb_s>, s <= t
    g.assign(m * m, T(0));
    for (std::size_t t = 0; t < m; ++t) {
      for (std::size_t s = 0; s <= t; ++s) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += c[t * n + j] * bb[s * n + j];
        g[t * m + s] = std::exp(cum[t] - cum[s]) * dot;
      }
    }
    for (std::size_t t = 0; t < m; ++t) {
      const T decay0 = std::exp(cum[t]);
      const T* ct = c.data() + t * n;
      const T* ut = x.data() + (s0 + t) * e;
      T* y = out.y.data() + (s0 + t) * e;
      for (std::size_t ch = 0; ch < e; ++ch) {
        const T* hr = h.data() + ch * n;
        T carry = 0;
        for (std::size_t j = 0; j < n; ++j) carry += ct[j] * hr[j];
        T acc = decay0 * carry;
        for (std::size_t s = 0; s <= t; ++s) acc += g[t * m + s] * x(s0 + s, ch);
        y[ch] = acc + p.skip_d[ch] * ut[ch];
      }
    }
    const T last = cum[m - 1];
    const T decay_all = std::exp(last);
    for (std::size_t ch = 0; ch < e; ++ch) {
      T* hr = h.data() + ch * n;
      for (std::size_t j = 0; j < n; ++j) {
        T acc = decay_all * hr[j];
        for (std::size_t s = 0; s < m; ++s) {
          acc += std::exp(last - cum[s]) * bb[s * n + j] * x(s0 + s, ch);
        }
        hr[j] = acc;
      }
    }
  }
  return out;
}

/// Backward of scan_sequential. Accumulates parameter gradients into `grads`
/// (fields a_log, delta_proj, delta_bias, b_proj, c_proj, skip_d) and returns dx.
template <class T>
Tensor<T> scan_backward(const Tensor<T>& x, const MambaHeadParams<T>& p, const ScanRecord<T>& rec,
                        const Tensor<T>& dy, MambaHeadParams<T>& grads) {
  const std::size_t len = x.rows(), e = p.channels(), n = p.state_dim();
  if (rec.states.size() != len + 1) throw std::logic_error("scan_backward: record does not match input");
  const T a_rate = p.decay_rate();
  Tensor<T> dx({len, e});
  Tensor<T> dh({e, n});
  std::vector<T> dc(n), dbb(n), db(n);
  for (std::size_t tt = len; tt-- > 0;) {
    const T* u = x.data() + tt * e;
    const T* dyt = dy.data() + tt * e;
    const T* ct = rec.c.data() + tt * n;
    const T* bt = rec.b.data() + tt * n;
    const Tensor<T>& h_now = rec.states[tt + 1];
    const Tensor<T>& h_prev = rec.states[tt];
    const T delta = rec.delta[tt];
    const T a_bar = rec.a_bar[tt];
    T* dxt = dx.data() + tt * e;
    std::fill(dc.begin(), dc.end(), T(0));
    std::fill(dbb.begin(), dbb.end(), T(0));
    T da = 0;
    for (std::size_t ch = 0; ch < e; ++ch) {
      const T g = dyt[ch];
      grads.skip_d[ch] += g * u[ch];
      T du = g * p.skip_d[ch];
      T* dhr = dh.data() + ch * n;
      const T* hn = h_now.data() + ch * n;
      const T* hp = h_prev.data() + ch * n;
      for (std::size_t j = 0; j < n; ++j) {
        dhr[j] += g * ct[j];
        dc[j] += g * hn[j];
        da += dhr[j] * hp[j];
        du += dhr[j] * delta * bt[j];
        dbb[j] += dhr[j] * u[ch];
        dhr[j] *= a_bar;
      }
      dxt[ch] = du;
    }
    T ddelta = 0;
    for (std::size_t j = 0; j < n; ++j) {
      ddelta += dbb[j] * bt[j];
      db[j] = dbb[j] * delta;
    }
    // a_bar = exp(delta * A), A = -exp(a_log)
    ddelta += da * a_bar * a_rate;
    grads.a_log[0] += da * a_bar * delta * a_rate;
    const T dz = ddelta * num::sigmoid(rec.z[tt]);
    grads.delta_bias[0] += dz;
    for (std::size_t k = 0; k < e; ++k) {
      grads.delta_proj[k] += dz * u[k];
      dxt[k] += dz * p.delta_proj[k];
    }
    for (std::size_t j = 0; j < n; ++j) {
      T* gb = grads.b_proj.data() + j * e;
      T* gc = grads.c_proj.data() + j * e;
      const T* pb = p.b_proj.data() + j * e;
      const T* pc = p.c_proj.data() + j * e;
      for (std::size_t k = 0; k < e; ++k) {
        gb[k] += db[j] * u[k];
        gc[k] += dc[j] * u[k];
        dxt[k] += db[j] * pb[k] + dc[j] * pc[k];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Full head
// ---------------------------------------------------------------------------

/// Causal depthwise convolution, zero left padding. out[t,c] = sum_k K[c,k] x[t-(w-1)+k, c].
template <class T>
Tensor<T> causal_conv(const Tensor<T>& x, const Tensor<T>& kernel) {
  const std::size_t len = x.rows(), e = x.cols(), w = kernel.cols();
  Tensor<T> y({len, e});
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t k = 0; k < w; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(w - 1);
      if (src < 0) continue;
      const T* xr = x.data() + static_cast<std::size_t>(src) * e;
      T* yr = y.data() + t * e;
      for (std::size_t c = 0; c < e; ++c) yr[c] += kernel(c, k) * xr[c];
    }
  }
  return y;
}

template <class T>
struct HeadCache {
  bool valid = false;
  Tensor<T> x;    // [n x d_c]
  Tensor<T> xin;  // [n x E] after in_proj
  Tensor<T> xc;   // [n x E] after conv, before SiLU
  Tensor<T> u;    // [n x E] scan input
  Tensor<T> y;    // [n x E] scan output
  ScanRecord<T> scan;
};

template <class T>
Tensor<T> mamba_head_forward(const Tensor<T>& x, const MambaHeadParams<T>& p, const SsmConfig& cfg,
                             HeadCache<T>* cache = nullptr) {
  if (x.rank() != 2 || x.cols() != p.latent_dim()) {
    throw ShapeError("mamba head: input " + shape_str(x.shape()) + " expects width " +
                     std::to_string(p.latent_dim()));
  }
  Tensor<T> xin = num::linear(x, p.in_proj);
  Tensor<T> xc = cfg.use_conv ? causal_conv(xin, p.conv_kernel) : xin;
  Tensor<T> u = num::silu(xc);
  auto state0 = ScanState<T>::zeros(p.channels(), p.state_dim());
  ScanResult<T> scan = scan_sequential(u, p, state0, cache ? &cache->scan : nullptr);
  Tensor<T> out = num::linear(scan.y, p.out_proj);
  if (cache) {
    cache->x = x;
    cache->xin = std::move(xin);
    cache->xc = std::move(xc);
    cache->u = std::move(u);
    cache->y = std::move(scan.y);
    cache->valid = true;
  }
  return out;
}

/// Backward of mamba_head_forward. Accumulates into `grads`; returns dx.
template <class T>
Tensor<T> mamba_head_backward(const MambaHeadParams<T>& p, const SsmConfig& cfg,
                              const HeadCache<T>& cache, const Tensor<T>& d_out,
                              MambaHeadParams<T>& grads) {
  if (!cache.valid) throw std::logic_error("mamba_head_backward: no recorded forward pass");
  if (d_out.shape() != Shape{cache.x.rows(), p.latent_dim()}) {
    throw ShapeError("mamba_head_backward: upstream gradient " + shape_str(d_out.shape()));
  }
  Tensor<T> dy = num::linear_backward(cache.y, p.out_proj, d_out, grads.out_proj);
  Tensor<T> du = scan_backward(cache.u, p, cache.scan, dy, grads);
  Tensor<T> dxc = num::silu_backward(cache.xc, du);
  Tensor<T> dxin;
  if (cfg.use_conv) {
    const std::size_t len = dxc.rows(), e = dxc.cols(), w = p.conv_width();
    dxin = Tensor<T>({len, e});
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t k = 0; k < w; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(w - 1);
        if (src < 0) continue;
        const auto s = static_cast<std::size_t>(src);
        for (std::size_t c = 0; c < e; ++c) {
          grads.conv_kernel(c, k) += dxc(t, c) * cache.xin(s, c);
          dxin(s, c) += p.conv_kernel(c, k) * dxc(t, c);
        }
      }
    }
  } else {
    dxin = std::move(dxc);
  }
  return num::linear_backward(cache.x, p.in_proj, dxin, grads.in_proj);
}

// ---------------------------------------------------------------------------
// Incremental decoding
// ---------------------------------------------------------------------------

template <class T>
struct HeadStepState {
  Tensor<T> conv_hist;  // [(w-1) x E], oldest row first
  ScanState<T> scan;

  static HeadStepState zeros(const MambaHeadParams<T>& p) {
    const std::size_t w = p.conv_width();
    return {Tensor<T>({w > 0 ? w - 1 : 0, p.channels()}),
            ScanState<T>::zeros(p.channels(), p.state_dim())};
  }
};

/// One position of mamba_head_forward given the carried state; O(E*(d_c + N + w)) work.
template <class T>
std::vector<T> mamba_head_step(const MambaHeadParams<T>& p, const SsmConfig& cfg,
                               HeadStepState<T>& st, std::type_identity_t<std::span<const T>> x) {
  const std::size_t e = p.channels(), n = p.state_dim(), dc = p.latent_dim(), w = p.conv_width();
  std::vector<T> xin(e, T(0)), u(e);
  for (std::size_t c = 0; c < e; ++c) {
    const T* wr = p.in_proj.data() + c * dc;
    T s = 0;
    for (std::size_t k = 0; k < dc; ++k) s += wr[k] * x[k];
    xin[c] = s;
  }
  if (cfg.use_conv) {
    for (std::size_t c = 0; c < e; ++c) {
      T s = p.conv_kernel(c, w - 1) * xin[c];
      for (std::size_t k = 0; k + 1 < w; ++k) s += p.conv_kernel(c, k) * st.conv_hist(k, c);
      u[c] = num::silu(s);
    }
    if (w > 1) {
      for (std::size_t k = 0; k + 2 < w; ++k)
        for (std::size_t c = 0; c < e; ++c) st.conv_hist(k, c) = st.conv_hist(k + 1, c);
      for (std::size_t c = 0; c < e; ++c) st.conv_hist(w - 2, c) = xin[c];
    }
  } else {
    for (std::size_t c = 0; c < e; ++c) u[c] = num::silu(xin[c]);
  }
  std::vector<T> b(n), cc(n), y(e);
  T z, delta;
  detail::step_projections(p, u.data(), z, delta, b.data(), cc.data());
  const T a_bar = std::exp(delta * p.decay_rate());
  for (std::size_t ch = 0; ch < e; ++ch) {
    T* hr = st.scan.h.data() + ch * n;
    T acc = 0;
    for (std::size_t j = 0; j < n; ++j) {
      hr[j] = a_bar * hr[j] + delta * b[j] * u[ch];
      acc += hr[j] * cc[j];
    }
    y[ch] = acc + p.skip_d[ch] * u[ch];
  }
  std::vector<T> out(dc);
  for (std::size_t k = 0; k < dc; ++k) {
    const T* wr = p.out_proj.data() + k * e;
    T s = 0;
    for (std::size_t c = 0; c < e; ++c) s += wr[c] * y[c];
    out[k] = s;
  }
  return out;
}

}  // namespace hydra::ssm
