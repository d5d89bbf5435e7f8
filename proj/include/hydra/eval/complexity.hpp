#pragma once

// Asymptotic cost of one sequence-mixing layer, in proportionality units
// (constant factors dropped), for context length n, width d, v heads of
// latent width d_c.
//
//              state    train FLOPs   inference FLOPs   memory
//   attention  n        n^2 d         n d               n^2
//   mamba2     d        n d^2         d^2               n d
//   mli        v d_c    n v d_c^2     v d_c^2           n v d_c

#include <stdexcept>
#include <string>

namespace hydra::eval {

enum class Arch { attention, mamba2, mli };

inline Arch parse_arch(const std::string& s) {
  if (s == "attention" || s == "attention-est") return Arch::attention;
  if (s == "mamba2") return Arch::mamba2;
  if (s == "mli") return Arch::mli;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected attention, mamba2 or mli)");
}

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::attention: return "attention";
    case Arch::mamba2: return "mamba2";
    case Arch::mli: return "mli";
  }
  return "?";
}

struct ComplexityEstimate {
  double state_size = 0;
  double train_flops = 0;
  double infer_flops = 0;
  double memory = 0;
  friend bool operator==(const ComplexityEstimate&, const ComplexityEstimate&) = default;
};

inline ComplexityEstimate estimate_complexity(Arch arch, double n, double d, double v, double d_c) {
  if (!(n > 0 && d > 0 && v > 0 && d_c > 0)) throw std::invalid_argument("estimate_complexity: arguments must be positive");
  switch (arch) {
    case Arch::attention: return {n, n * n * d, n * d, n * n};
    case Arch::mamba2: return {d, n * d * d, d * d, n * d};
    case Arch::mli: return {v * d_c, n * v * d_c * d_c, v * d_c * d_c, n * v * d_c};
  }
  throw std::invalid_argument("estimate_complexity: unknown architecture");
}

inline ComplexityEstimate estimate_complexity(const std::string& arch, double n, double d, double v, double d_c) {
  return estimate_complexity(parse_arch(arch), n, d, v, d_c);
}

}  // namespace hydra::eval
