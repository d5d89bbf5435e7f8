#pragma once

// Shared helpers for the test suites: flattening parameter sets for
// finite-difference sweeps and building small random configurations.

#include <string>
#include <vector>

#include "hydra/model/hydra.hpp"
#include "hydra/numkit/rng.hpp"

namespace hydra::testing {

inline HydraConfig tiny_config(std::size_t vocab = 10) {
  HydraConfig cfg;
  cfg.d = 8;
  cfg.d_c = 4;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.n_max = 16;
  cfg.dropout = 0.0;
  cfg.ssm = {2, 4, 4, true};
  cfg.vocab_sizes = {vocab};
  return cfg;
}

/// Parameters with larger-than-default scale so every path carries signal.
inline HydraParams<double> random_params(const HydraConfig& cfg, std::uint64_t seed, double std = 0.3) {
  auto p = init_params<double>(cfg, seed, std);
  SeededRng rng(seed ^ 0xabcdefULL);
  p.for_each([&](const std::string& name, Tensor<double>& t) {
    if (name.find("gain") != std::string::npos || name.find("skip_d") != std::string::npos) {
      for (auto& v : t.values()) v = rng.uniform(0.5, 1.5);
    }
  });
  return p;
}

inline Tensor<double> pack(const HydraParams<double>& p) {
  std::vector<double> v;
  p.for_each([&](const std::string&, const Tensor<double>& t) {
    v.insert(v.end(), t.values().begin(), t.values().end());
  });
  const std::size_t n = v.size();
  return Tensor<double>({n}, std::move(v));
}

inline void unpack(const Tensor<double>& flat, HydraParams<double>& p) {
  std::size_t o = 0;
  p.for_each([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.values()) v = flat[o++];
  });
}

inline HydraParams<double> zeros_like(const HydraParams<double>& p) {
  auto g = p;
  g.set_zero();
  return g;
}

inline std::vector<int> random_items(std::size_t n, std::size_t vocab, SeededRng& rng) {
  std::vector<int> out(n);
  for (auto& v : out) v = static_cast<int>(rng.uniform_int(vocab)) + 1;
  return out;
}

}  // namespace hydra::testing
