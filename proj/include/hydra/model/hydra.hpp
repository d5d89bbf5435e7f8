#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hydra/model/config.hpp"
#include "hydra/model/layers.hpp"
#include "hydra/model/params.hpp"
#include "hydra/numkit/ops.hpp"
#include "hydra/numkit/rng.hpp"

namespace hydra {

/// An item reference: embedding table (domain) and row. Row 0 is padding.
struct Token {
  int domain = 0;
  int item = 0;
  friend bool operator==(const Token&, const Token&) = default;
};

inline std::vector<Token> tokens_of(std::span<const int> items, int domain = 0) {
  std::vector<Token> out;
  out.reserve(items.size());
  for (int it : items) out.push_back({domain, it});
  return out;
}

struct ForwardOptions {
  bool train = false;
  SeededRng* rng = nullptr;  // required when train is true and any dropout rate is > 0
  bool record = true;        // keep what backward needs
};

template <class T>
struct ForwardTrace {
  std::vector<Tensor<T>> layer_inputs;         // H^(l), l = 1..L
  std::vector<Tensor<T>> interaction_outputs;  // per layer MLI output
  Tensor<T> stream;                            // H^(L+1), before the final norm
  Tensor<T> hidden;                            // final hidden sequence [n x d]

  // Backward context.
  bool recorded = false;
  std::vector<Token> tokens;  // empty when the forward started from raw vectors
  Tensor<T> embed_mask;       // dropout mask on H^(0), empty when identity
  Tensor<T> embed_in;         // Dropout(H^(0))
  num::RmsNormCache<T> embed_norm;
  std::vector<MliCache<T>> mli;
  std::vector<FfnCache<T>> ffn;
  num::RmsNormCache<T> final_norm;

  std::size_t length() const { return hidden.rows(); }
  std::span<const T> last() const { return hidden.row(hidden.rows() - 1); }
};

/// Rows of the embedding tables for each token: H^(0).
template <class T>
Tensor<T> gather_embeddings(const HydraParams<T>& p, std::span<const Token> tokens) {
  const std::size_t d = p.embed_norm.size();
  Tensor<T> h0({tokens.size(), d});
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Token tk = tokens[t];
    if (tk.domain < 0 || static_cast<std::size_t>(tk.domain) >= p.embeddings.size()) {
      throw std::out_of_range("embed: domain " + std::to_string(tk.domain) + " out of range (" +
                              std::to_string(p.embeddings.size()) + " domains)");
    }
    const auto& e = p.embeddings[static_cast<std::size_t>(tk.domain)];
    const std::size_t vocab = e.rows() - 1;
    if (tk.item < 1 || static_cast<std::size_t>(tk.item) > vocab) {
      throw std::out_of_range("embed: item id " + std::to_string(tk.item) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
    auto src = e.row(static_cast<std::size_t>(tk.item));
    std::copy(src.begin(), src.end(), h0.data() + t * d);
  }
  return h0;
}

/// H^(1) = RMSNorm(Dropout(H^(0))). Dropout is the identity when `train` is false.
template <class T>
Tensor<T> embed_context(const Tensor<T>& h0, const Tensor<T>& gain, const HydraConfig& cfg,
                        bool train, SeededRng* rng, Tensor<T>* mask_out = nullptr,
                        Tensor<T>* dropped_out = nullptr, num::RmsNormCache<T>* norm = nullptr) {
  Tensor<T> dropped = h0;
  Tensor<T> mask;
  if (train && cfg.dropout > 0.0) {
    if (!rng) throw std::invalid_argument("embed: training-mode dropout needs an rng");
    mask = num::dropout_mask<T>(h0.shape(), cfg.dropout, *rng);
    for (std::size_t i = 0; i < dropped.size(); ++i) dropped[i] *= mask[i];
  }
  Tensor<T> h1 = num::rmsnorm(dropped, gain, T(cfg.norm_eps), norm);
  if (mask_out) *mask_out = std::move(mask);
  if (dropped_out) *dropped_out = std::move(dropped);
  return h1;
}

/// Runs the stack on precomputed item vectors H^(0) ([n x d]). This is also
/// the entry point for externally supplied (frozen) item representations.
template <class T>
ForwardTrace<T> forward_vectors(const HydraParams<T>& p, const HydraConfig& cfg,
                                const Tensor<T>& h0, const ForwardOptions& opt = {}) {
  if (h0.rank() != 2 || h0.rows() == 0) throw std::invalid_argument("forward: empty context");
  if (h0.cols() != cfg.d) {
    throw ShapeError("forward: item vectors " + shape_str(h0.shape()) + " expect width " +
                     std::to_string(cfg.d));
  }
  if (h0.rows() > cfg.n_max) {
    throw std::invalid_argument("forward: context length " + std::to_string(h0.rows()) +
                                " exceeds n_max " + std::to_string(cfg.n_max));
  }
  if (p.layers.size() != cfg.layers) throw ShapeError("forward: parameter layer count differs from config");
  ForwardTrace<T> tr;
  tr.recorded = opt.record;
  Tensor<T> h = embed_context(h0, p.embed_norm, cfg, opt.train, opt.rng, &tr.embed_mask,
                              opt.record ? &tr.embed_in : nullptr, &tr.embed_norm);
  const bool layer_dropout = opt.train && cfg.dropout_in_layers && cfg.dropout > 0.0;
  if (opt.record) {
    tr.mli.resize(cfg.layers);
    tr.ffn.resize(cfg.layers);
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& lp = p.layers[l];
    tr.layer_inputs.push_back(h);
    std::optional<Tensor<T>> m1, m2;
    if (layer_dropout) {
      m1 = num::dropout_mask<T>(h.shape(), cfg.dropout, *opt.rng);
      m2 = num::dropout_mask<T>(h.shape(), cfg.dropout, *opt.rng);
    }
    Tensor<T> y = mli_forward(h, lp, cfg, l == 0, opt.record ? &tr.mli[l] : nullptr,
                              m1 ? &*m1 : nullptr);
    tr.interaction_outputs.push_back(y);
    h = ffn_forward(y, lp.w_gate, lp.w_up, lp.w_down, lp.ffn_norm, T(cfg.norm_eps),
                    opt.record ? &tr.ffn[l] : nullptr, m2 ? &*m2 : nullptr);
  }
  tr.hidden = num::rmsnorm(h, p.final_norm, T(cfg.norm_eps), &tr.final_norm);
  tr.stream = std::move(h);
  return tr;
}

template <class T>
ForwardTrace<T> forward(const HydraParams<T>& p, const HydraConfig& cfg,
                        std::span<const Token> tokens, const ForwardOptions& opt = {}) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty context");
  ForwardTrace<T> tr = forward_vectors(p, cfg, gather_embeddings(p, tokens), opt);
  if (opt.record) tr.tokens.assign(tokens.begin(), tokens.end());
  return tr;
}

template <class T>
ForwardTrace<T> forward(const HydraParams<T>& p, const HydraConfig& cfg, std::span<const int> items,
                        const ForwardOptions& opt = {}) {
  const auto toks = tokens_of(items);
  return forward(p, cfg, std::span<const Token>(toks), opt);
}

/// Backpropagates d(loss)/d(hidden) through the stack. Gradients are
/// accumulated into `g`; when the trace came from tokens the item-vector
/// gradient is scattered into the embedding tables. Returns d(loss)/dH^(0).
template <class T>
Tensor<T> backward(const HydraParams<T>& p, const HydraConfig& cfg, const ForwardTrace<T>& tr,
                   const Tensor<T>& d_hidden, HydraParams<T>& g) {
  if (!tr.recorded) throw std::logic_error("backward: forward pass was not recorded");
  if (d_hidden.shape() != tr.hidden.shape()) {
    throw ShapeError("backward: gradient " + shape_str(d_hidden.shape()) + " vs hidden " +
                     shape_str(tr.hidden.shape()));
  }
  Tensor<T> dh = num::rmsnorm_backward(tr.stream, p.final_norm, tr.final_norm, d_hidden, g.final_norm);
  for (std::size_t l = cfg.layers; l-- > 0;) {
    const auto& lp = p.layers[l];
    auto& gl = g.layers[l];
    Tensor<T> dy = ffn_backward(lp.w_gate, lp.w_up, lp.w_down, lp.ffn_norm, tr.ffn[l], dh,
                                gl.w_gate, gl.w_up, gl.w_down, gl.ffn_norm);
    dh = mli_backward(lp, cfg, l == 0, tr.mli[l], dy, gl);
  }
  Tensor<T> d0 = num::rmsnorm_backward(tr.embed_in, p.embed_norm, tr.embed_norm, dh, g.embed_norm);
  if (!tr.embed_mask.empty()) {
    for (std::size_t i = 0; i < d0.size(); ++i) d0[i] *= tr.embed_mask[i];
  }
  if (!tr.tokens.empty()) {
    const std::size_t d = cfg.d;
    for (std::size_t t = 0; t < tr.tokens.size(); ++t) {
      auto& ge = g.embeddings[static_cast<std::size_t>(tr.tokens[t].domain)];
      T* dst = ge.data() + static_cast<std::size_t>(tr.tokens[t].item) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += d0(t, j);
    }
  }
  return d0;
}

/// Logits <h, E_i> for real items 1..|I|; entry k corresponds to item k + 1.
template <class T>
std::vector<T> item_logits(std::span<const T> h, const Tensor<T>& table) {
  const std::size_t d = table.cols(), vocab = table.rows() - 1;
  if (h.size() != d) throw ShapeError("item_logits: hidden width " + std::to_string(h.size()) + " vs " + std::to_string(d));
  std::vector<T> out(vocab);
  for (std::size_t i = 0; i < vocab; ++i) {
    const T* e = table.data() + (i + 1) * d;
    T s = 0;
    for (std::size_t j = 0; j < d; ++j) s += h[j] * e[j];
    out[i] = s;
  }
  return out;
}

/// Next-item distribution Softmax(H_n E^T) over real items; entry k is item k + 1.
template <class T>
Tensor<T> predict_scores(std::span<const T> h_last, const Tensor<T>& table) {
  auto logits = item_logits(h_last, table);
  const std::size_t n = logits.size();
  return num::softmax(Tensor<T>({n}, std::move(logits)));
}

/// Multi-domain next-item distribution Softmax(E^s (H^s_{n_s} + H_{n_merge})).
template <class T>
Tensor<T> multi_domain_predict(std::span<const T> h_domain, std::span<const T> h_merged,
                               const Tensor<T>& table) {
  if (table.rows() < 2) throw std::invalid_argument("multi_domain_predict: empty domain vocabulary");
  if (h_domain.size() != h_merged.size()) throw ShapeError("multi_domain_predict: hidden widths differ");
  std::vector<T> sum(h_domain.size());
  for (std::size_t j = 0; j < sum.size(); ++j) sum[j] = h_domain[j] + h_merged[j];
  return predict_scores(std::span<const T>(sum), table);
}

// ---------------------------------------------------------------------------
// State-carrying incremental inference: each step costs O(L (d^2 + v d_c (E + N)))
// independent of how many positions came before.
// ---------------------------------------------------------------------------

template <class T>
class HydraDecoder {
 public:
  HydraDecoder(const HydraParams<T>& p, const HydraConfig& cfg) : p_(&p), cfg_(cfg) {
    for (const auto& lp : p.layers) {
      std::vector<ssm::HeadStepState<T>> hs;
      for (const auto& hp : lp.heads) hs.push_back(ssm::HeadStepState<T>::zeros(hp));
      states_.push_back(std::move(hs));
    }
  }

  std::size_t position() const { return position_; }

  /// Consumes one item and returns the final hidden state at this position.
  std::vector<T> step(Token token) {
    const Token one[1] = {token};
    return step_vector(gather_embeddings(*p_, std::span<const Token>(one)));
  }

  std::vector<T> step_vector(const Tensor<T>& h0_row) {
    Tensor<T> h = embed_context(h0_row, p_->embed_norm, cfg_, false, nullptr);
    const std::size_t dc = cfg_.d_c;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const auto& lp = p_->layers[l];
      Tensor<T> ht = l == 0 ? h : num::rmsnorm(h, lp.mixer_norm, T(cfg_.norm_eps));
      auto in = input_network(ht, lp.w_x, lp.w_z, cfg_.heads, cfg_.rope_base, nullptr, position_);
      Tensor<T> y({1, cfg_.latent_width()});
      for (std::size_t i = 0; i < cfg_.heads; ++i) {
        auto yi = ssm::mamba_head_step(lp.heads[i], cfg_.ssm, states_[l][i], in.x[i].row(0));
        std::copy(yi.begin(), yi.end(), y.data() + i * dc);
      }
      const T scale = T(1) / std::sqrt(static_cast<T>(cfg_.heads));
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = y[k] * in.z[k] * scale;
      Tensor<T> mix = num::linear(y, lp.w_out);
      num::add_inplace(mix, h);
      h = ffn_forward(mix, lp.w_gate, lp.w_up, lp.w_down, lp.ffn_norm, T(cfg_.norm_eps));
    }
    ++position_;
    Tensor<T> out = num::rmsnorm(h, p_->final_norm, T(cfg_.norm_eps));
    return out.values();
  }

 private:
  const HydraParams<T>* p_;
  HydraConfig cfg_;
  std::vector<std::vector<ssm::HeadStepState<T>>> states_;
  std::size_t position_ = 0;
};

}  // namespace hydra
