#pragma once

// Wall-clock scaling of the Hydra stack with context length: training cost
// per position (forward + backward) and per-step cost of state-carrying decode.

#include <algorithm>
#include <chrono>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

#include "hydra/model/hydra.hpp"
#include "hydra/numkit/rng.hpp"

namespace hydra::eval {

struct BenchOptions {
  std::vector<std::size_t> lengths{64, 128, 256, 512};
  std::size_t repeats = 3;
  std::size_t positions_per_sample = 4096;  // training positions timed per repeat
  std::size_t decode_steps = 64;            // decode steps timed at the end of each context
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::size_t n = 0;
  double train_per_position_s = 0;
  double decode_per_step_s = 0;
  bool ok = true;
  std::string note;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T>
double time_training(const HydraParams<T>& p, const HydraConfig& cfg, std::size_t n, std::size_t positions,
                     SeededRng& rng) {
  const std::size_t seqs = std::max<std::size_t>(1, (positions + n - 1) / n);
  std::vector<std::vector<int>> items(seqs, std::vector<int>(n));
  for (auto& s : items)
    for (auto& v : s) v = 1 + static_cast<int>(rng.uniform_int(cfg.vocab_sizes[0]));
  Tensor<T> dh({n, cfg.d});
  for (auto& v : dh.values()) v = static_cast<T>(rng.uniform(-1, 1));
  HydraParams<T> g = p;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& s : items) {
    g.set_zero();
    auto tr = forward(p, cfg, std::span<const int>(s));
    backward(p, cfg, tr, dh, g);
  }
  return seconds_since(t0) / static_cast<double>(seqs * n);
}

template <class T>
double time_decode(const HydraParams<T>& p, const HydraConfig& cfg, std::size_t n, std::size_t steps, SeededRng& rng) {
  steps = std::min(steps, n);
  HydraDecoder<T> dec(p, cfg);
  const auto vocab = cfg.vocab_sizes[0];
  for (std::size_t t = 0; t + steps < n; ++t) dec.step({0, 1 + static_cast<int>(rng.uniform_int(vocab))});
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t t = 0; t < steps; ++t) dec.step({0, 1 + static_cast<int>(rng.uniform_int(vocab))});
  return seconds_since(t0) / static_cast<double>(steps);
}

}  // namespace detail

/// Median timings per context length. Lengths that exhaust memory yield a
/// row flagged not-ok instead of aborting the table.
template <class T>
std::vector<BenchRow> bench_scaling(const HydraParams<T>& p, HydraConfig cfg, const BenchOptions& opt) {
  if (opt.lengths.empty()) throw std::invalid_argument("bench: no lengths");
  if (!std::is_sorted(opt.lengths.begin(), opt.lengths.end())) throw std::invalid_argument("bench: lengths must be ascending");
  if (opt.repeats == 0) throw std::invalid_argument("bench: repeats must be >= 1");
  cfg.n_max = std::max(cfg.n_max, opt.lengths.back());
  SeededRng rng(opt.seed);
  std::vector<BenchRow> rows;
  for (std::size_t n : opt.lengths) {
    BenchRow row;
    row.n = n;
    try {
      std::vector<double> train, decode;
      detail::time_training(p, cfg, n, n, rng);  // warm-up, untimed
      for (std::size_t r = 0; r < opt.repeats; ++r) {
        train.push_back(detail::time_training(p, cfg, n, opt.positions_per_sample, rng));
        decode.push_back(detail::time_decode(p, cfg, n, opt.decode_steps, rng));
      }
      row.train_per_position_s = median(train);
      row.decode_per_step_s = median(decode);
    } catch (const std::bad_alloc&) {
      row.ok = false;
      row.note = "out of memory";
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace hydra::eval
