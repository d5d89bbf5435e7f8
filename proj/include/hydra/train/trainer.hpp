#pragma once

// Training loops. `fit` trains on single-domain next-item examples,
// `train_multi_domain` on merged contexts plus their per-domain parts. Both
// run mini-batch AdamW with the warmup + cosine schedule and stop early on
// the validation NDCG@10.

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hydra/data/multi_domain.hpp"
#include "hydra/eval/evaluate.hpp"
#include "hydra/model/hydra.hpp"
#include "hydra/numkit/parallel.hpp"
#include "hydra/objectives/losses.hpp"
#include "hydra/train/optim.hpp"

namespace hydra::train {

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, std::size_t step)
      : std::runtime_error(what), epoch_(epoch), step_(step) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }

 private:
  std::size_t epoch_, step_;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0;          // rate at the last step of the epoch
  double train_loss = 0;  // mean per-position loss
  nlohmann::json val;     // validation metrics
  double seconds = 0;
  std::size_t rejected_steps = 0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},   {"lr", lr},           {"train_loss", train_loss},
            {"val", val},       {"seconds", seconds}, {"rejected_steps", rejected_steps}};
  }
};

template <class T>
struct FitResult {
  HydraParams<T> best;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_metric = 0;
  bool early_stopped = false;
  std::size_t steps = 0;
};

template <class T>
using Validator = std::function<eval::MetricsReport(const HydraParams<T>&)>;

template <class T>
struct FitHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(const HydraParams<T>&, const EpochLog&)> on_best;  // new best checkpoint
  std::function<void(const std::string&)> on_incident;                 // rejected optimizer steps
};

inline constexpr const char* kStopMetric = "N@10";

namespace detail {

/// Up to k negatives from `vocab` outside `exclude`; fewer when the domain is small.
inline obj::NegativeSet draw_negatives(std::size_t vocab, const std::vector<int>& exclude, std::size_t k,
                                       SeededRng& rng, int domain) {
  std::vector<char> seen(vocab + 1, 0);
  std::size_t banned = 0;
  for (int id : exclude)
    if (id >= 1 && static_cast<std::size_t>(id) <= vocab && !seen[static_cast<std::size_t>(id)]++) ++banned;
  return obj::sample_negatives(vocab, exclude, std::min(k, vocab - banned), rng, domain);
}

inline std::vector<int> items_in(const data::Example& ex, int domain) {
  std::vector<int> out;
  for (const auto& t : ex.inputs)
    if (t.domain == domain) out.push_back(t.item);
  for (const auto& t : ex.targets)
    if (t.domain == domain) out.push_back(t.item);
  return out;
}

inline std::size_t target_positions(const data::Example& ex) {
  std::size_t n = 0;
  for (const auto& t : ex.targets) n += t.item != 0;
  return n;
}

template <class T>
void add_into(HydraParams<T>& acc, HydraParams<T>& part) {
  auto a = acc.tensors(), b = part.tensors();
  for (std::size_t k = 0; k < a.size(); ++k) {
    auto& x = a[k]->values();
    const auto& y = b[k]->values();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  }
}

/// Gradient of one example: adds scale * d(loss)/d(params) into `g` and
/// returns the unscaled loss sum over its positions.
template <class T>
using ExampleGrad = std::function<double(const HydraParams<T>& p, std::size_t index, std::size_t epoch, double scale,
                                         HydraParams<T>& g)>;

/// Shared epoch loop. Examples are shuffled per epoch and cut into batches;
/// within a batch, contiguous shards are processed in parallel and their
/// gradients summed in shard order, so a fixed thread count gives
/// bit-identical runs.
template <class T>
FitResult<T> run(HydraParams<T> params, const HydraConfig& cfg, const TrainConfig& tc,
                 const std::vector<std::size_t>& positions, const ExampleGrad<T>& grad_of,
                 const Validator<T>& validate, const FitHooks<T>& hooks) {
  tc.validate();
  cfg.validate();
  if (positions.empty()) throw std::invalid_argument("fit: no training examples");
  if (!validate) throw std::invalid_argument("fit: a validation function is required");
  const std::size_t n = positions.size();
  const std::size_t per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = per_epoch * tc.max_epochs;

  const SeededRng root(tc.seed);
  AdamState<T> state = AdamState<T>::like(params);
  EarlyStopper stopper(tc.patience);
  FitResult<T> res;
  res.best = params;
  const std::size_t shards_max = std::max<std::size_t>(1, tc.threads);
  std::vector<HydraParams<T>> shard_grads(shards_max, state.m);
  std::vector<double> shard_loss(shards_max);

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    SeededRng shuffle = root.fork(stream_tag("shuffle"), epoch);
    shuffle.shuffle(order.begin(), order.end());

    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t pos_sum = 0;
    for (std::size_t b = 0; b < n; b += tc.batch_size) {
      const std::size_t rows = std::min(tc.batch_size, n - b);
      std::size_t batch_pos = 0;
      for (std::size_t r = 0; r < rows; ++r) batch_pos += positions[order[b + r]];
      ++res.steps;
      const double lr = lr_at_step(res.steps, total_steps, tc);
      log.lr = lr;
      if (batch_pos == 0) continue;
      const double scale = 1.0 / static_cast<double>(batch_pos);
      const std::size_t shards = std::min(shards_max, rows);
      parallel_for(shards, shards, [&](std::size_t s) {
        shard_grads[s].set_zero();
        double l = 0.0;
        for (std::size_t r = s * rows / shards; r < (s + 1) * rows / shards; ++r)
          l += grad_of(params, order[b + r], epoch, scale, shard_grads[s]);
        shard_loss[s] = l;
      });
      double batch_loss = 0.0;
      for (std::size_t s = 0; s < shards; ++s) batch_loss += shard_loss[s];
      for (std::size_t s = 1; s < shards; ++s) add_into(shard_grads[0], shard_grads[s]);
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(res.steps),
                              epoch, res.steps);
      }
      loss_sum += batch_loss;
      pos_sum += batch_pos;
      HydraParams<T>& g = shard_grads[0];
      clip_global_norm(g, tc.grad_clip);
      if (!adamw_step(params, g, state, lr, tc)) {
        ++log.rejected_steps;
        if (hooks.on_incident) {
          hooks.on_incident("epoch " + std::to_string(epoch) + ", step " + std::to_string(res.steps) +
                            ": non-finite gradient, update skipped");
        }
      }
    }
    if (!params.all_finite()) {
      throw DivergenceError("training diverged: non-finite parameters after epoch " + std::to_string(epoch), epoch,
                            res.steps);
    }
    log.train_loss = pos_sum ? loss_sum / static_cast<double>(pos_sum) : 0.0;
    const eval::MetricsReport rep = validate(params);
    log.val = rep.to_json();
    const double metric = rep.at(kStopMetric);
    const bool improved = stopper.observe(epoch, metric);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (improved) {
      res.best = params;
      if (hooks.on_best) hooks.on_best(res.best, log);
    }
    if (stopper.should_stop()) {
      res.early_stopped = epoch < tc.max_epochs;
      break;
    }
  }
  res.best_epoch = stopper.best_epoch();
  res.best_metric = stopper.best();
  return res;
}

inline SeededRng example_rng(const TrainConfig& tc, const char* what, std::size_t epoch, std::size_t index) {
  return SeededRng(tc.seed).fork(stream_tag(what), epoch).fork(index);
}

template <class T>
ForwardTrace<T> train_forward(const HydraParams<T>& p, const HydraConfig& cfg, const std::vector<Token>& inputs,
                              SeededRng& rng) {
  return forward(p, cfg, std::span<const Token>(inputs), ForwardOptions{true, &rng, true});
}

/// Single-domain loss and gradient for one example against its negatives.
template <class T>
double single_example_grad(const HydraParams<T>& p, const HydraConfig& cfg, const TrainConfig& tc,
                           const data::Example& ex, const obj::NegativeSet& shared, SeededRng& neg_rng,
                           SeededRng& drop_rng, double scale, HydraParams<T>& g) {
  const int dom = shared.domain;
  const auto du = static_cast<std::size_t>(dom);
  auto tr = train_forward(p, cfg, ex.inputs, drop_rng);
  std::vector<int> targets;
  for (const auto& t : ex.targets) targets.push_back(t.item);
  Tensor<T> dh(tr.hidden.shape());
  double loss;
  if (tc.per_position_negatives) {
    const auto excl = items_in(ex, dom);
    std::vector<obj::NegativeSet> per;
    for (std::size_t i = 0; i < targets.size(); ++i)
      per.push_back(draw_negatives(cfg.vocab_sizes[du], excl, tc.k_neg, neg_rng, dom));
    loss = obj::single_domain_loss(tr.hidden, std::span<const int>(targets), p.embeddings[du],
                                   std::span<const obj::NegativeSet>(per), tc.tau, &dh, &g.embeddings[du], scale);
  } else {
    loss = obj::single_domain_loss(tr.hidden, std::span<const int>(targets), p.embeddings[du], shared, tc.tau, &dh,
                                   &g.embeddings[du], scale);
  }
  backward(p, cfg, tr, dh, g);
  return loss;
}

}  // namespace detail

/// Single-domain training on next-item examples. Each epoch draws a fresh
/// negative set per sequence (items outside that sequence).
template <class T>
FitResult<T> fit(HydraParams<T> params, const HydraConfig& cfg, const TrainConfig& tc,
                 const std::vector<data::Example>& train, const Validator<T>& validate,
                 const FitHooks<T>& hooks = {}) {
  std::vector<std::size_t> positions;
  for (const auto& ex : train) {
    if (ex.targets.empty() || ex.targets[0].domain < 0 ||
        static_cast<std::size_t>(ex.targets[0].domain) >= cfg.vocab_sizes.size()) {
      throw std::invalid_argument("fit: example for user " + std::to_string(ex.user) + " has no valid domain");
    }
    positions.push_back(detail::target_positions(ex));
  }
  detail::ExampleGrad<T> grad = [&](const HydraParams<T>& p, std::size_t i, std::size_t epoch, double scale,
                                    HydraParams<T>& g) {
    const auto& ex = train[i];
    const int dom = ex.targets[0].domain;
    SeededRng neg_rng = detail::example_rng(tc, "negatives", epoch, i);
    SeededRng drop_rng = detail::example_rng(tc, "dropout", epoch, i);
    const auto shared = tc.per_position_negatives
                            ? obj::NegativeSet{dom, {}}
                            : detail::draw_negatives(cfg.vocab_sizes[static_cast<std::size_t>(dom)],
                                                     detail::items_in(ex, dom), tc.k_neg, neg_rng, dom);
    return detail::single_example_grad(p, cfg, tc, ex, shared, neg_rng, drop_rng, scale, g);
  };
  return detail::run(std::move(params), cfg, tc, positions, grad, validate, hooks);
}

/// L_total for one user: the cross-domain loss over the merged context plus
/// each per-domain loss (keyed by domain index), all against `negs[s]` for
/// domain s. With `g`, adds scale * gradient into it. Dropout is active only
/// when `dropout` is given.
template <class T>
obj::LossReport multi_domain_example_loss(const HydraParams<T>& p, const HydraConfig& cfg,
                                          const data::MultiDomainExample& mx,
                                          std::span<const obj::NegativeSet> negs, double tau,
                                          HydraParams<T>* g = nullptr, double scale = 1.0,
                                          SeededRng* dropout = nullptr) {
  const ForwardOptions opt{dropout != nullptr, dropout, g != nullptr};
  std::vector<const Tensor<T>*> tables;
  obj::LossGrads<T> lg;
  lg.scale = scale;
  for (std::size_t s = 0; s < p.embeddings.size(); ++s) {
    tables.push_back(&p.embeddings[s]);
    if (g) lg.d_tables.push_back(&g->embeddings[s]);
  }
  auto tr = forward(p, cfg, std::span<const Token>(mx.merged.inputs), opt);
  Tensor<T> dh(tr.hidden.shape());
  if (g) lg.d_hidden = &dh;
  const double cross = obj::cross_domain_loss(tr.hidden, std::span<const Token>(mx.merged.targets), tables, negs, tau, lg);
  if (g) backward(p, cfg, tr, dh, *g);
  std::map<std::string, double> singles;
  for (const auto& ex : mx.singles) {
    const int dom = ex.targets.at(0).domain;
    const auto du = static_cast<std::size_t>(dom);
    auto ts = forward(p, cfg, std::span<const Token>(ex.inputs), opt);
    std::vector<int> targets;
    for (const auto& t : ex.targets) targets.push_back(t.item);
    Tensor<T> ds(ts.hidden.shape());
    singles[std::to_string(dom)] =
        obj::single_domain_loss(ts.hidden, std::span<const int>(targets), p.embeddings[du], negs[du], tau,
                                g ? &ds : nullptr, g ? &g->embeddings[du] : nullptr, scale);
    if (g) backward(p, cfg, ts, ds, *g);
  }
  return obj::total_multi_domain_loss(cross, singles);
}

/// Multi-domain training: per user, the loss is the cross-domain term over
/// the merged context plus one single-domain term per domain with a usable
/// prefix. One negative set per (user, domain) is shared by all terms.
template <class T>
FitResult<T> train_multi_domain(HydraParams<T> params, const HydraConfig& cfg, const TrainConfig& tc,
                                const data::MultiDomainData& md, const Validator<T>& validate,
                                const FitHooks<T>& hooks = {}) {
  if (cfg.vocab_sizes.size() < 2) {
    throw std::invalid_argument("multi-domain training needs at least 2 domains, config has " +
                                std::to_string(cfg.vocab_sizes.size()));
  }
  for (std::size_t s = 0; s < cfg.vocab_sizes.size(); ++s)
    if (cfg.vocab_sizes[s] == 0) throw std::invalid_argument("domain " + std::to_string(s) + " has an empty vocabulary");
  std::vector<std::size_t> positions;
  for (const auto& mx : md.train) {
    std::size_t n = detail::target_positions(mx.merged);
    for (const auto& ex : mx.singles) n += detail::target_positions(ex);
    positions.push_back(n);
  }
  const std::size_t domains = cfg.vocab_sizes.size();
  detail::ExampleGrad<T> grad = [&](const HydraParams<T>& p, std::size_t i, std::size_t epoch, double scale,
                                    HydraParams<T>& g) {
    const auto& mx = md.train[i];
    SeededRng neg_rng = detail::example_rng(tc, "negatives", epoch, i);
    SeededRng drop_rng = detail::example_rng(tc, "dropout", epoch, i);
    std::vector<obj::NegativeSet> negs;
    for (std::size_t s = 0; s < domains; ++s) {
      const int dom = static_cast<int>(s);
      negs.push_back(detail::draw_negatives(cfg.vocab_sizes[s], detail::items_in(mx.merged, dom), tc.k_neg, neg_rng,
                                            dom));
    }
    return multi_domain_example_loss(p, cfg, mx, std::span<const obj::NegativeSet>(negs), tc.tau, &g, scale, &drop_rng)
        .total;
  };
  return detail::run(std::move(params), cfg, tc, positions, grad, validate, hooks);
}

/// Per-epoch validation by sampled ranking over fixed candidate sets.
template <class T>
Validator<T> sampled_validator(const HydraConfig& cfg, std::vector<eval::EvalCase> cases, std::size_t threads = 1) {
  return [cfg, cases = std::move(cases), threads](const HydraParams<T>& p) {
    return eval::evaluate(p, cfg, cases, eval::Mode::sampled, threads);
  };
}

/// Mean of each metric over domains; per-domain values are kept as
/// "<domain>/<metric>".
inline eval::MetricsReport average_reports(const std::vector<std::string>& names,
                                           const std::vector<eval::MetricsReport>& reports) {
  if (reports.empty() || names.size() != reports.size()) throw std::invalid_argument("average_reports: size mismatch");
  eval::MetricsReport out;
  for (std::size_t s = 0; s < reports.size(); ++s) {
    for (const auto& [k, v] : reports[s].values) {
      out.values[k] += v / static_cast<double>(reports.size());
      out.values[names[s] + "/" + k] = v;
    }
    out.users += reports[s].users;
    out.skipped += reports[s].skipped;
  }
  return out;
}

template <class T>
Validator<T> multi_domain_validator(const HydraConfig& cfg, std::vector<std::string> names,
                                    std::vector<std::vector<eval::EvalCase>> per_domain, std::size_t threads = 1) {
  return [cfg, names = std::move(names), per_domain = std::move(per_domain), threads](const HydraParams<T>& p) {
    std::vector<eval::MetricsReport> reps;
    for (const auto& cases : per_domain) reps.push_back(eval::evaluate(p, cfg, cases, eval::Mode::sampled, threads));
    return average_reports(names, reps);
  };
}

}  // namespace hydra::train
