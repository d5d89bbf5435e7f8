#pragma once

#include <string>
#include <vector>

#include "hydra/model/config.hpp"
#include "hydra/numkit/rng.hpp"
#include "hydra/numkit/tensor.hpp"
#include "hydra/ssm/mamba_head.hpp"

namespace hydra {

template <class T>
struct LayerParams {
  Tensor<T> mixer_norm;  // [d]; unused (empty) for the first layer
  Tensor<T> w_x;         // [v*d_c x d]
  Tensor<T> w_z;         // [v*d_c x d]
  Tensor<T> w_out;       // [d x v*d_c]
  std::vector<ssm::MambaHeadParams<T>> heads;
  Tensor<T> ffn_norm;    // [d]
  Tensor<T> w_gate;      // [d x d]
  Tensor<T> w_up;        // [d x d]
  Tensor<T> w_down;      // [d x d]
};

template <class T>
struct HydraParams {
  std::vector<Tensor<T>> embeddings;  // per domain, [(|I_s| + 1) x d]
  Tensor<T> embed_norm;               // [d]
  std::vector<LayerParams<T>> layers;
  Tensor<T> final_norm;               // [d]

  /// Zero-valued parameter set with the shapes implied by `cfg`.
  static HydraParams zeros(const HydraConfig& cfg) {
    cfg.validate();
    HydraParams p;
    const std::size_t d = cfg.d, lw = cfg.latent_width();
    for (std::size_t v : cfg.vocab_sizes) p.embeddings.emplace_back(Shape{v + 1, d});
    p.embed_norm = Tensor<T>({d});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      LayerParams<T> lp;
      if (l > 0) lp.mixer_norm = Tensor<T>({d});
      lp.w_x = Tensor<T>({lw, d});
      lp.w_z = Tensor<T>({lw, d});
      lp.w_out = Tensor<T>({d, lw});
      for (std::size_t h = 0; h < cfg.heads; ++h)
        lp.heads.push_back(ssm::MambaHeadParams<T>::zeros(cfg.d_c, cfg.ssm));
      lp.ffn_norm = Tensor<T>({d});
      lp.w_gate = Tensor<T>({d, d});
      lp.w_up = Tensor<T>({d, d});
      lp.w_down = Tensor<T>({d, d});
      p.layers.push_back(std::move(lp));
    }
    p.final_norm = Tensor<T>({d});
    return p;
  }

  /// Visits every parameter tensor in a fixed order with a stable dotted name.
  template <class F>
  void for_each(F&& f) {
    for (std::size_t s = 0; s < embeddings.size(); ++s)
      f("embed." + std::to_string(s), embeddings[s]);
    f(std::string("embed_norm.gain"), embed_norm);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& lp = layers[l];
      const std::string pre = "layers." + std::to_string(l) + ".";
      if (!lp.mixer_norm.empty()) f(pre + "mixer_norm.gain", lp.mixer_norm);
      f(pre + "w_x", lp.w_x);
      f(pre + "w_z", lp.w_z);
      f(pre + "w_out", lp.w_out);
      for (std::size_t h = 0; h < lp.heads.size(); ++h) {
        const std::string hp = pre + "heads." + std::to_string(h) + ".";
        lp.heads[h].for_each([&](const char* name, Tensor<T>& t) { f(hp + name, t); });
      }
      f(pre + "ffn_norm.gain", lp.ffn_norm);
      f(pre + "w_gate", lp.w_gate);
      f(pre + "w_up", lp.w_up);
      f(pre + "w_down", lp.w_down);
    }
    f(std::string("final_norm.gain"), final_norm);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<HydraParams*>(this)->for_each(
        [&](const std::string& name, Tensor<T>& t) { f(name, static_cast<const Tensor<T>&>(t)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    for_each([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Tensor<T>& t) { ok = ok && t.all_finite(); });
    return ok;
  }

  void set_zero() {
    for_each([](const std::string&, Tensor<T>& t) { t.fill(T(0)); });
  }

  template <class U>
  HydraParams<U> cast() const {
    HydraParams<U> out;
    out.embeddings.clear();
    for (const auto& e : embeddings) out.embeddings.push_back(e.template cast<U>());
    out.embed_norm = embed_norm.template cast<U>();
    for (const auto& lp : layers) {
      LayerParams<U> q;
      q.mixer_norm = lp.mixer_norm.template cast<U>();
      q.w_x = lp.w_x.template cast<U>();
      q.w_z = lp.w_z.template cast<U>();
      q.w_out = lp.w_out.template cast<U>();
      for (const auto& h : lp.heads) {
        ssm::MambaHeadParams<U> hq;
        hq.in_proj = h.in_proj.template cast<U>();
        hq.conv_kernel = h.conv_kernel.template cast<U>();
        hq.a_log = h.a_log.template cast<U>();
        hq.delta_proj = h.delta_proj.template cast<U>();
        hq.delta_bias = h.delta_bias.template cast<U>();
        hq.b_proj = h.b_proj.template cast<U>();
        hq.c_proj = h.c_proj.template cast<U>();
        hq.skip_d = h.skip_d.template cast<U>();
        hq.out_proj = h.out_proj.template cast<U>();
        q.heads.push_back(std::move(hq));
      }
      q.ffn_norm = lp.ffn_norm.template cast<U>();
      q.w_gate = lp.w_gate.template cast<U>();
      q.w_up = lp.w_up.template cast<U>();
      q.w_down = lp.w_down.template cast<U>();
      out.layers.push_back(std::move(q));
    }
    out.final_norm = final_norm.template cast<U>();
    return out;
  }
};

/// Names of parameters that AdamW leaves undecayed: norm gains and the
/// per-head scalars/vectors of the state-space block.
inline bool is_decay_exempt(const std::string& name) {
  auto ends_with = [&](const char* suffix) {
    const std::string s(suffix);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".gain") || ends_with("a_log") || ends_with("delta_bias") || ends_with("skip_d");
}

/// Truncated normal(0.02) for matrices and embeddings, unit norm gains,
/// Mamba reference init for each head. Padding rows stay zero.
template <class T>
HydraParams<T> init_params(const HydraConfig& cfg, std::uint64_t seed, double std = 0.02) {
  HydraParams<T> p = HydraParams<T>::zeros(cfg);
  SeededRng root(seed);
  SeededRng rng = root.fork(stream_tag("init"));
  auto tn = [&](Tensor<T>& t) {
    for (auto& v : t.values()) v = static_cast<T>(rng.truncated_normal(std));
  };
  for (auto& e : p.embeddings) {
    tn(e);
    for (std::size_t j = 0; j < e.cols(); ++j) e(0, j) = T(0);
  }
  p.embed_norm.fill(T(1));
  for (auto& lp : p.layers) {
    if (!lp.mixer_norm.empty()) lp.mixer_norm.fill(T(1));
    tn(lp.w_x);
    tn(lp.w_z);
    tn(lp.w_out);
    for (auto& h : lp.heads) ssm::init_mamba_head(h, rng, std);
    lp.ffn_norm.fill(T(1));
    tn(lp.w_gate);
    tn(lp.w_up);
    tn(lp.w_down);
  }
  p.final_norm.fill(T(1));
  return p;
}

}  // namespace hydra
