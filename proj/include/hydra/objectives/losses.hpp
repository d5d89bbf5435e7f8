#pragma once

// Contrastive next-item objectives. Similarities are raw dot products
// between hidden states and embedding-table rows, divided by tau.

#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hydra/model/hydra.hpp"
#include "hydra/numkit/tensor.hpp"
#include "hydra/objectives/negatives.hpp"

namespace hydra::obj {

namespace detail {

inline void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("infonce: tau must be positive");
}

/// Loss for logits s (positive first) and, in g, dLoss/ds = softmax(s) - e_0.
inline double infonce_from_logits(std::span<const double> s, std::vector<double>& g) {
  double m = s[0];
  for (double v : s) m = std::max(m, v);
  double z = 0.0;
  for (double v : s) z += std::exp(v - m);
  const double lse = m + std::log(z);
  g.resize(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) g[j] = std::exp(s[j] - lse);
  g[0] -= 1.0;
  return lse - s[0];
}

template <class T>
double dot(const T* a, const T* b, std::size_t d) {
  T s = 0;
  for (std::size_t j = 0; j < d; ++j) s += a[j] * b[j];
  return static_cast<double>(s);
}

}  // namespace detail

/// -log(exp(<p,a>/tau) / (exp(<p,a>/tau) + sum_j exp(<n_j,a>/tau))).
template <class T>
double infonce(std::span<const T> anchor, std::span<const T> positive, const Tensor<T>& negatives, double tau,
               std::vector<T>* d_anchor = nullptr, std::vector<T>* d_positive = nullptr,
               Tensor<T>* d_negatives = nullptr) {
  detail::check_tau(tau);
  const std::size_t d = anchor.size();
  if (negatives.rank() != 2 || negatives.rows() == 0) throw std::invalid_argument("infonce: need k >= 1 negatives");
  if (positive.size() != d || negatives.cols() != d) {
    throw ShapeError("infonce: anchor width " + std::to_string(d) + ", positive " +
                     std::to_string(positive.size()) + ", negatives " + shape_str(negatives.shape()));
  }
  const std::size_t k = negatives.rows();
  std::vector<double> s(k + 1), g;
  s[0] = detail::dot(anchor.data(), positive.data(), d) / tau;
  for (std::size_t j = 0; j < k; ++j) s[j + 1] = detail::dot(anchor.data(), negatives.data() + j * d, d) / tau;
  const double loss = detail::infonce_from_logits(s, g);
  if (d_anchor) {
    d_anchor->assign(d, T(0));
    for (std::size_t c = 0; c < d; ++c) {
      double acc = g[0] * positive[c];
      for (std::size_t j = 0; j < k; ++j) acc += g[j + 1] * negatives(j, c);
      (*d_anchor)[c] = static_cast<T>(acc / tau);
    }
  }
  if (d_positive) {
    d_positive->resize(d);
    for (std::size_t c = 0; c < d; ++c) (*d_positive)[c] = static_cast<T>(g[0] * anchor[c] / tau);
  }
  if (d_negatives) {
    *d_negatives = Tensor<T>(negatives.shape());
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c) (*d_negatives)(j, c) = static_cast<T>(g[j + 1] * anchor[c] / tau);
  }
  return loss;
}

/// Gradient sinks for the sequence losses; null members are skipped. Gradients
/// are accumulated (scaled by `scale`) into existing tensors.
template <class T>
struct LossGrads {
  Tensor<T>* d_hidden = nullptr;
  std::vector<Tensor<T>*> d_tables;  // indexed by domain, may be shorter than the table list
  double scale = 1.0;
};

/// Sum over positions of the InfoNCE term between hidden row i and the
/// embedding row of targets[i]. Positions with item 0 are padding and skipped.
/// `negatives_for(i)` returns the NegativeSet used at position i; its domain
/// must equal the target's.
template <class T, class NegFor>
double sequence_infonce(const Tensor<T>& hidden, std::span<const Token> targets,
                        const std::vector<const Tensor<T>*>& tables, NegFor&& negatives_for, double tau,
                        const LossGrads<T>& grads = {}) {
  detail::check_tau(tau);
  if (hidden.rank() != 2 || hidden.rows() != targets.size()) {
    throw std::invalid_argument("sequence loss: hidden " + shape_str(hidden.shape()) + " vs " +
                                std::to_string(targets.size()) + " targets");
  }
  const std::size_t d = hidden.cols();
  if (grads.d_hidden && grads.d_hidden->shape() != hidden.shape()) {
    throw ShapeError("sequence loss: d_hidden " + shape_str(grads.d_hidden->shape()) + " vs hidden " +
                     shape_str(hidden.shape()));
  }
  double total = 0.0;
  std::vector<double> s, g;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Token tk = targets[i];
    if (tk.item == 0) continue;
    if (tk.domain < 0) throw std::invalid_argument("cross-domain loss: position " + std::to_string(i) + " has no domain tag");
    if (static_cast<std::size_t>(tk.domain) >= tables.size()) {
      throw std::out_of_range("sequence loss: domain " + std::to_string(tk.domain) + " has no table");
    }
    const Tensor<T>& e = *tables[static_cast<std::size_t>(tk.domain)];
    const NegativeSet& neg = negatives_for(i);
    if (neg.domain != tk.domain) {
      throw std::invalid_argument("sequence loss: negatives at position " + std::to_string(i) + " come from domain " +
                                  std::to_string(neg.domain) + ", target from " + std::to_string(tk.domain));
    }
    if (neg.ids.empty()) throw std::invalid_argument("sequence loss: empty negative set");
    const std::size_t vocab = e.rows() - 1;
    auto row_of = [&](int id) {
      if (id < 1 || static_cast<std::size_t>(id) > vocab) {
        throw std::out_of_range("sequence loss: item " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(vocab));
      }
      return e.data() + static_cast<std::size_t>(id) * d;
    };
    const T* h = hidden.data() + i * d;
    s.resize(neg.ids.size() + 1);
    s[0] = detail::dot(h, row_of(tk.item), d) / tau;
    for (std::size_t j = 0; j < neg.ids.size(); ++j) s[j + 1] = detail::dot(h, row_of(neg.ids[j]), d) / tau;
    total += detail::infonce_from_logits(s, g);

    const double c = grads.scale / tau;
    if (grads.d_hidden) {
      T* dh = grads.d_hidden->data() + i * d;
      const T* ep = row_of(tk.item);
      for (std::size_t q = 0; q < d; ++q) dh[q] += static_cast<T>(c * g[0]) * ep[q];
      for (std::size_t j = 0; j < neg.ids.size(); ++j) {
        const T* en = row_of(neg.ids[j]);
        const T w = static_cast<T>(c * g[j + 1]);
        for (std::size_t q = 0; q < d; ++q) dh[q] += w * en[q];
      }
    }
    const auto dom = static_cast<std::size_t>(tk.domain);
    if (dom < grads.d_tables.size() && grads.d_tables[dom]) {
      Tensor<T>& de = *grads.d_tables[dom];
      auto add_row = [&](int id, double coef) {
        T* dst = de.data() + static_cast<std::size_t>(id) * d;
        const T w = static_cast<T>(c * coef);
        for (std::size_t q = 0; q < d; ++q) dst[q] += w * h[q];
      };
      add_row(tk.item, g[0]);
      for (std::size_t j = 0; j < neg.ids.size(); ++j) add_row(neg.ids[j], g[j + 1]);
    }
  }
  return total;
}

/// Single-domain loss with one negative set shared by every position.
template <class T>
double single_domain_loss(const Tensor<T>& hidden, std::span<const int> targets, const Tensor<T>& table,
                          const NegativeSet& negatives, double tau, Tensor<T>* d_hidden = nullptr,
                          Tensor<T>* d_table = nullptr, double scale = 1.0) {
  const auto toks = tokens_of(targets, negatives.domain);
  LossGrads<T> g{d_hidden, {}, scale};
  std::vector<const Tensor<T>*> tables(static_cast<std::size_t>(negatives.domain) + 1, nullptr);
  tables.back() = &table;
  if (d_table) {
    g.d_tables.assign(tables.size(), nullptr);
    g.d_tables.back() = d_table;
  }
  return sequence_infonce(hidden, std::span<const Token>(toks), tables,
                          [&](std::size_t) -> const NegativeSet& { return negatives; }, tau, g);
}

/// Single-domain loss with a separate negative set per position.
template <class T>
double single_domain_loss(const Tensor<T>& hidden, std::span<const int> targets, const Tensor<T>& table,
                          std::span<const NegativeSet> per_position, double tau, Tensor<T>* d_hidden = nullptr,
                          Tensor<T>* d_table = nullptr, double scale = 1.0) {
  if (per_position.size() != targets.size()) {
    throw std::invalid_argument("single_domain_loss: " + std::to_string(per_position.size()) +
                                " negative sets for " + std::to_string(targets.size()) + " positions");
  }
  const int dom = per_position.empty() ? 0 : per_position[0].domain;
  const auto toks = tokens_of(targets, dom);
  std::vector<const Tensor<T>*> tables(static_cast<std::size_t>(dom) + 1, nullptr);
  tables.back() = &table;
  LossGrads<T> g{d_hidden, {}, scale};
  if (d_table) {
    g.d_tables.assign(tables.size(), nullptr);
    g.d_tables.back() = d_table;
  }
  return sequence_infonce(hidden, std::span<const Token>(toks), tables,
                          [&](std::size_t i) -> const NegativeSet& { return per_position[i]; }, tau, g);
}

/// Cross-domain loss over a merged context: each position's target is scored
/// against its own domain's table and that domain's negatives.
/// `per_domain[s]` holds the negatives for domain s.
template <class T>
double cross_domain_loss(const Tensor<T>& hidden, std::span<const Token> targets,
                         const std::vector<const Tensor<T>*>& tables, std::span<const NegativeSet> per_domain,
                         double tau, const LossGrads<T>& grads = {}) {
  for (std::size_t s = 0; s < per_domain.size(); ++s) {
    if (per_domain[s].domain != static_cast<int>(s)) {
      throw std::invalid_argument("cross_domain_loss: negative set " + std::to_string(s) + " is tagged domain " +
                                  std::to_string(per_domain[s].domain));
    }
  }
  return sequence_infonce(
      hidden, targets, tables,
      [&](std::size_t i) -> const NegativeSet& {
        const int dom = targets[i].domain;
        if (dom < 0) {
          throw std::invalid_argument("cross-domain loss: position " + std::to_string(i) + " has no domain tag");
        }
        if (static_cast<std::size_t>(dom) >= per_domain.size()) {
          throw std::out_of_range("cross_domain_loss: no negatives for domain " + std::to_string(dom));
        }
        return per_domain[static_cast<std::size_t>(dom)];
      },
      tau, grads);
}

/// Combined multi-domain loss: total = cross + sum of singles, summed in that
/// order with domains visited in sorted label order.
struct LossReport {
  double total = 0.0;
  double cross = 0.0;
  std::map<std::string, double> singles;
};

inline LossReport total_multi_domain_loss(double cross, const std::map<std::string, double>& singles) {
  LossReport r{cross, cross, singles};
  for (const auto& [name, v] : singles) r.total += v;
  return r;
}

}  // namespace hydra::obj
