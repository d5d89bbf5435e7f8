#pragma once

// One Hydra layer: input network + multi-head latent interaction (MLI),
// followed by the gated feed-forward block. Both halves are pre-norm residual.

#include <cmath>
#include <type_traits>
#include <vector>

#include "hydra/model/config.hpp"
#include "hydra/model/params.hpp"
#include "hydra/model/rope.hpp"
#include "hydra/numkit/ops.hpp"
#include "hydra/ssm/mamba_head.hpp"

namespace hydra {

template <class T>
struct InputNetworkOutput {
  std::vector<Tensor<T>> x;  // v head inputs, each [n x d_c]
  Tensor<T> z;               // [n x v*d_c], rotary-encoded item information
};

template <class T>
struct InputNetworkCache {
  Tensor<T> x_pre;  // W^X H~ before SiLU
  Tensor<T> z_pre;  // W^Z H~ before SiLU
};

/// Splits the columns of a [n x v*d_c] matrix into v blocks of width d_c.
template <class T>
std::vector<Tensor<T>> split_heads(const Tensor<T>& m, std::size_t heads) {
  const std::size_t n = m.rows(), dc = m.cols() / heads;
  std::vector<Tensor<T>> out(heads, Tensor<T>({n, dc}));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t k = 0; k < dc; ++k) out[h](t, k) = m(t, h * dc + k);
  return out;
}

template <class T>
Tensor<T> concat_heads(const std::vector<Tensor<T>>& blocks) {
  const std::size_t n = blocks.front().rows(), dc = blocks.front().cols();
  Tensor<T> m({n, dc * blocks.size()});
  for (std::size_t h = 0; h < blocks.size(); ++h)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t k = 0; k < dc; ++k) m(t, h * dc + k) = blocks[h](t, k);
  return m;
}

/// X = Split(SiLU(W^X H~)), Z = RoPE(SiLU(W^Z H~)).
template <class T>
InputNetworkOutput<T> input_network(const Tensor<T>& h_tilde, const Tensor<T>& w_x,
                                    const Tensor<T>& w_z, std::size_t heads, double rope_base,
                                    std::type_identity_t<InputNetworkCache<T>>* cache = nullptr,
                                    std::size_t first_position = 0) {
  if (w_x.cols() != h_tilde.cols() || w_z.cols() != h_tilde.cols() ||
      w_x.rows() != w_z.rows() || w_x.rows() % heads != 0) {
    throw ShapeError("input network: H~ " + shape_str(h_tilde.shape()) + ", W^X " +
                     shape_str(w_x.shape()) + ", W^Z " + shape_str(w_z.shape()) + ", heads " +
                     std::to_string(heads));
  }
  Tensor<T> x_pre = num::linear(h_tilde, w_x);
  Tensor<T> z_pre = num::linear(h_tilde, w_z);
  InputNetworkOutput<T> out{split_heads(num::silu(x_pre), heads),
                            apply_rope(num::silu(z_pre), rope_base, first_position)};
  if (cache) {
    cache->x_pre = std::move(x_pre);
    cache->z_pre = std::move(z_pre);
  }
  return out;
}

template <class T>
struct MliCache {
  Tensor<T> h_in;     // H^(l)
  Tensor<T> h_tilde;  // normalised input (== h_in for the first layer)
  num::RmsNormCache<T> norm;
  InputNetworkCache<T> input;
  std::vector<Tensor<T>> x;
  Tensor<T> z;
  std::vector<ssm::HeadCache<T>> heads;
  Tensor<T> y;        // concat of head outputs
  Tensor<T> p;        // (Y . Z) / sqrt(v)
  Tensor<T> mask;     // branch dropout mask, empty when unused
};

/// Multi-head latent interaction with its pre-norm and residual:
/// out = W^out((Y . Z) / sqrt(v)) + H, Y = Concat_i Mamba_i(X_i).
template <class T>
Tensor<T> mli_forward(const Tensor<T>& h, const LayerParams<T>& lp, const HydraConfig& cfg,
                      bool first_layer, MliCache<T>* cache = nullptr,
                      const Tensor<T>* branch_mask = nullptr) {
  if (h.rank() != 2 || h.cols() != cfg.d) {
    throw ShapeError("mli: input " + shape_str(h.shape()) + " expects width " + std::to_string(cfg.d));
  }
  num::RmsNormCache<T> norm_cache;
  Tensor<T> h_tilde = first_layer ? h : num::rmsnorm(h, lp.mixer_norm, T(cfg.norm_eps), &norm_cache);
  InputNetworkCache<T> in_cache;
  auto in = input_network(h_tilde, lp.w_x, lp.w_z, cfg.heads, cfg.rope_base, &in_cache);

  std::vector<ssm::HeadCache<T>> head_caches(cache ? cfg.heads : 0);
  std::vector<Tensor<T>> ys;
  ys.reserve(cfg.heads);
  for (std::size_t i = 0; i < cfg.heads; ++i) {
    ys.push_back(ssm::mamba_head_forward(in.x[i], lp.heads[i], cfg.ssm,
                                         cache ? &head_caches[i] : nullptr));
  }
  Tensor<T> y = concat_heads(ys);
  const T scale = T(1) / std::sqrt(static_cast<T>(cfg.heads));
  Tensor<T> p(y.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = y[i] * in.z[i] * scale;
  Tensor<T> branch = num::linear(p, lp.w_out);
  if (branch_mask) {
    for (std::size_t i = 0; i < branch.size(); ++i) branch[i] *= (*branch_mask)[i];
  }
  Tensor<T> out = branch;
  num::add_inplace(out, h);
  if (cache) {
    cache->h_in = h;
    cache->h_tilde = std::move(h_tilde);
    cache->norm = std::move(norm_cache);
    cache->input = std::move(in_cache);
    cache->x = std::move(in.x);
    cache->z = std::move(in.z);
    cache->heads = std::move(head_caches);
    cache->y = std::move(y);
    cache->p = std::move(p);
    cache->mask = branch_mask ? *branch_mask : Tensor<T>();
  }
  return out;
}

/// Backward of mli_forward. Accumulates into `g`; returns dH.
template <class T>
Tensor<T> mli_backward(const LayerParams<T>& lp, const HydraConfig& cfg, bool first_layer,
                       const MliCache<T>& c, const Tensor<T>& d_out, LayerParams<T>& g) {
  Tensor<T> dh = d_out;  // residual path
  Tensor<T> d_branch = d_out;
  if (!c.mask.empty()) {
    for (std::size_t i = 0; i < d_branch.size(); ++i) d_branch[i] *= c.mask[i];
  }
  Tensor<T> dp = num::linear_backward(c.p, lp.w_out, d_branch, g.w_out);
  const T scale = T(1) / std::sqrt(static_cast<T>(cfg.heads));
  Tensor<T> dy(dp.shape()), dz(dp.shape());
  for (std::size_t i = 0; i < dp.size(); ++i) {
    dy[i] = dp[i] * c.z[i] * scale;
    dz[i] = dp[i] * c.y[i] * scale;
  }
  auto dy_heads = split_heads(dy, cfg.heads);
  std::vector<Tensor<T>> dx_heads;
  dx_heads.reserve(cfg.heads);
  for (std::size_t i = 0; i < cfg.heads; ++i) {
    dx_heads.push_back(ssm::mamba_head_backward(lp.heads[i], cfg.ssm, c.heads[i], dy_heads[i], g.heads[i]));
  }
  Tensor<T> dx = concat_heads(dx_heads);
  Tensor<T> dz_silu = apply_rope_backward(dz, cfg.rope_base);
  Tensor<T> dx_pre = num::silu_backward(c.input.x_pre, dx);
  Tensor<T> dz_pre = num::silu_backward(c.input.z_pre, dz_silu);
  Tensor<T> dht = num::linear_backward(c.h_tilde, lp.w_x, dx_pre, g.w_x);
  num::add_inplace(dht, num::linear_backward(c.h_tilde, lp.w_z, dz_pre, g.w_z));
  if (first_layer) {
    num::add_inplace(dh, dht);
  } else {
    num::add_inplace(dh, num::rmsnorm_backward(c.h_in, lp.mixer_norm, c.norm, dht, g.mixer_norm));
  }
  return dh;
}

template <class T>
struct FfnCache {
  Tensor<T> y_in;  // interaction output
  Tensor<T> g;     // RMSNorm(y_in)
  num::RmsNormCache<T> norm;
  Tensor<T> a;     // g W^gate
  Tensor<T> b;     // g W^up
  Tensor<T> hid;   // SiLU(a) . b
  Tensor<T> mask;
};

/// H^(l+1) = FFN(RMSNorm(Y)) + Y with FFN(x) = (SiLU(x W^gate) . (x W^up)) W^down, no biases.
template <class T>
Tensor<T> ffn_forward(const Tensor<T>& y, const Tensor<T>& w_gate, const Tensor<T>& w_up,
                      const Tensor<T>& w_down, const Tensor<T>& norm_gain, T eps,
                      FfnCache<T>* cache = nullptr, const Tensor<T>* branch_mask = nullptr) {
  num::RmsNormCache<T> norm_cache;
  Tensor<T> g = num::rmsnorm(y, norm_gain, eps, &norm_cache);
  Tensor<T> a = num::matmul(g, w_gate);
  Tensor<T> b = num::matmul(g, w_up);
  Tensor<T> hid(a.shape());
  for (std::size_t i = 0; i < hid.size(); ++i) hid[i] = num::silu(a[i]) * b[i];
  Tensor<T> f = num::matmul(hid, w_down);
  if (branch_mask) {
    for (std::size_t i = 0; i < f.size(); ++i) f[i] *= (*branch_mask)[i];
  }
  num::add_inplace(f, y);
  if (cache) {
    *cache = {y, std::move(g), std::move(norm_cache), std::move(a), std::move(b), std::move(hid),
              branch_mask ? *branch_mask : Tensor<T>()};
  }
  return f;
}

/// Backward of ffn_forward; returns dY.
template <class T>
Tensor<T> ffn_backward(const Tensor<T>& w_gate, const Tensor<T>& w_up, const Tensor<T>& w_down,
                       const Tensor<T>& norm_gain, const FfnCache<T>& c, const Tensor<T>& d_out,
                       Tensor<T>& g_gate, Tensor<T>& g_up, Tensor<T>& g_down, Tensor<T>& g_norm) {
  Tensor<T> df = d_out;
  if (!c.mask.empty()) {
    for (std::size_t i = 0; i < df.size(); ++i) df[i] *= c.mask[i];
  }
  num::matmul_tn_acc(c.hid, df, g_down);
  Tensor<T> dhid = num::matmul_nt(df, w_down);
  Tensor<T> da(dhid.shape()), db(dhid.shape());
  for (std::size_t i = 0; i < dhid.size(); ++i) {
    da[i] = dhid[i] * c.b[i] * num::silu_grad(c.a[i]);
    db[i] = dhid[i] * num::silu(c.a[i]);
  }
  num::matmul_tn_acc(c.g, da, g_gate);
  num::matmul_tn_acc(c.g, db, g_up);
  Tensor<T> dg = num::matmul_nt(da, w_gate);
  num::add_inplace(dg, num::matmul_nt(db, w_up));
  Tensor<T> dy = num::rmsnorm_backward(c.y_in, norm_gain, c.norm, dg, g_norm);
  num::add_inplace(dy, d_out);
  return dy;
}

}  // namespace hydra
