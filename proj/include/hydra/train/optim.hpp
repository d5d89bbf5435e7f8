#pragma once

// Optimizer pieces: training hyperparameters, the warmup + cosine schedule,
// AdamW with decoupled decay, global-norm clipping and early stopping.

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "hydra/model/config.hpp"
#include "hydra/model/params.hpp"

namespace hydra::train {

struct TrainConfig {
  double lr_peak = 1e-3;
  double weight_decay = 0.01;
  std::size_t max_epochs = 20;
  double warmup_frac = 0.05;
  std::size_t patience = 3;
  double tau = 0.05;
  std::size_t k_neg = 512;
  std::size_t batch_size = 64;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;              // global L2 norm; 0 disables
  bool per_position_negatives = false;  // default: one negative set per sequence
  std::size_t val_negatives = 512;      // sampled candidates for per-epoch validation
  std::size_t threads = 1;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
    if (!(lr_peak > 0.0 && std::isfinite(lr_peak))) fail("lr_peak must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (max_epochs == 0) fail("max_epochs must be >= 1");
    if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) fail("warmup_frac must be in (0, 1)");
    if (patience == 0) fail("patience must be >= 1");
    if (!(tau > 0.0 && std::isfinite(tau))) fail("tau must be > 0");
    if (k_neg == 0) fail("k_neg must be >= 1");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must be in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be > 0");
    if (!(grad_clip >= 0.0)) fail("grad_clip must be >= 0");
    if (val_negatives == 0) fail("val_negatives must be >= 1");
  }
};

/// Linear warmup from 0 to lr_peak over the first warmup_frac of the steps,
/// then cosine annealing to 0 at total_steps.
inline double lr_at_step(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0) throw std::invalid_argument("lr_at_step: total_steps must be >= 1");
  if (step > total_steps) {
    throw std::out_of_range("lr_at_step: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
  }
  const double total = static_cast<double>(total_steps);
  const double warm = cfg.warmup_frac * total;
  const double s = static_cast<double>(step);
  if (s <= warm) return cfg.lr_peak * s / warm;
  const double progress = (s - warm) / (total - warm);
  return cfg.lr_peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
struct AdamState {
  std::size_t step = 0;
  HydraParams<T> m, v;

  static AdamState like(const HydraParams<T>& p) {
    AdamState s;
    s.m = p;
    s.m.set_zero();
    s.v = s.m;
    return s;
  }
};

namespace detail {

template <class T>
std::vector<std::pair<std::string, Tensor<T>*>> named(HydraParams<T>& p) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  p.for_each([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, &t); });
  return out;
}

template <class T>
void require_same_shapes(HydraParams<T>& a, HydraParams<T>& b, const char* what) {
  auto na = named(a), nb = named(b);
  if (na.size() != nb.size()) throw ShapeError(std::string(what) + ": parameter count differs");
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].second->shape() != nb[i].second->shape()) {
      throw ShapeError(std::string(what) + ": " + na[i].first + " " + shape_str(na[i].second->shape()) + " vs " +
                       shape_str(nb[i].second->shape()));
    }
  }
}

}  // namespace detail

template <class T>
bool all_finite(const HydraParams<T>& g) {
  return g.all_finite();
}

/// Global L2 norm over every gradient tensor (accumulated in double).
template <class T>
double global_norm(const HydraParams<T>& g) {
  double s = 0.0;
  g.for_each([&](const std::string&, const Tensor<T>& t) {
    for (T x : t.values()) s += static_cast<double>(x) * static_cast<double>(x);
  });
  return std::sqrt(s);
}

/// Rescales `g` so its global norm is at most max_norm. Returns the norm
/// before clipping. max_norm = 0 disables clipping.
template <class T>
double clip_global_norm(HydraParams<T>& g, double max_norm) {
  const double norm = global_norm(g);
  if (max_norm > 0.0 && std::isfinite(norm) && norm > max_norm) {
    const T c = static_cast<T>(max_norm / norm);
    g.for_each([&](const std::string&, Tensor<T>& t) {
      for (T& x : t.values()) x *= c;
    });
  }
  return norm;
}

/// One AdamW update: theta <- theta - lr*wd*theta (skipped for exempt names),
/// then theta <- theta - lr * m_hat / (sqrt(v_hat) + eps). A non-finite
/// gradient leaves params and state untouched and returns false.
template <class T>
bool adamw_step(HydraParams<T>& params, const HydraParams<T>& grads, AdamState<T>& st, double lr,
                const TrainConfig& cfg) {
  auto& g = const_cast<HydraParams<T>&>(grads);
  detail::require_same_shapes(params, g, "adamw_step");
  detail::require_same_shapes(params, st.m, "adamw_step (first moment)");
  detail::require_same_shapes(params, st.v, "adamw_step (second moment)");
  if (!grads.all_finite()) return false;
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  auto np = detail::named(params), ng = detail::named(g), nm = detail::named(st.m), nv = detail::named(st.v);
  for (std::size_t k = 0; k < np.size(); ++k) {
    auto& w = np[k].second->values();
    const auto& gr = ng[k].second->values();
    auto& m = nm[k].second->values();
    auto& v = nv[k].second->values();
    const double decay = is_decay_exempt(np[k].first) ? 0.0 : lr * cfg.weight_decay;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(gr[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double wi = static_cast<double>(w[i]);
      wi -= decay * wi;
      wi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      w[i] = static_cast<T>(wi);
    }
  }
  return true;
}

/// Tracks the best validation metric (higher is better). Stops once
/// `patience` consecutive epochs pass without a strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw std::invalid_argument("early stopping: patience must be >= 1");
  }

  /// Records an epoch's metric; returns true if it is a new best.
  bool observe(std::size_t epoch, double metric) {
    if (metric > best_) {
      best_ = metric;
      best_epoch_ = epoch;
      since_ = 0;
      return true;
    }
    ++since_;
    return false;
  }

  bool should_stop() const { return since_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_best() const { return since_; }

 private:
  std::size_t patience_;
  double best_ = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_ = 0;
};

}  // namespace hydra::train
