#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "hydra/numkit/rng.hpp"

namespace hydra::obj {

/// Sampled negative item ids (1-based rows of one domain's embedding table).
struct NegativeSet {
  int domain = 0;
  std::vector<int> ids;
};

class InsufficientCandidates : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Draws k distinct ids uniformly from {1..vocab} minus `exclude`.
/// Rejection sampling while the allowed set is large relative to k,
/// otherwise a partial Fisher-Yates over the explicit allowed list.
inline NegativeSet sample_negatives(std::size_t vocab, std::span<const int> exclude, std::size_t k,
                                    SeededRng& rng, int domain = 0) {
  std::vector<char> banned(vocab + 1, 0);
  std::size_t n_banned = 0;
  for (int id : exclude) {
    if (id >= 1 && static_cast<std::size_t>(id) <= vocab && !banned[static_cast<std::size_t>(id)]) {
      banned[static_cast<std::size_t>(id)] = 1;
      ++n_banned;
    }
  }
  const std::size_t allowed = vocab - n_banned;
  if (allowed < k) {
    throw InsufficientCandidates("sample_negatives: need " + std::to_string(k) + " negatives but only " +
                                 std::to_string(allowed) + " of " + std::to_string(vocab) +
                                 " items remain after excluding " + std::to_string(n_banned));
  }
  NegativeSet out{domain, {}};
  out.ids.reserve(k);
  if (allowed >= 4 * k) {
    while (out.ids.size() < k) {
      const std::size_t id = 1 + static_cast<std::size_t>(rng.uniform_int(vocab));
      if (banned[id]) continue;
      banned[id] = 1;
      out.ids.push_back(static_cast<int>(id));
    }
    return out;
  }
  std::vector<int> pool;
  pool.reserve(allowed);
  for (std::size_t id = 1; id <= vocab; ++id)
    if (!banned[id]) pool.push_back(static_cast<int>(id));
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(pool.size() - i));
    std::swap(pool[i], pool[j]);
    out.ids.push_back(pool[i]);
  }
  return out;
}

}  // namespace hydra::obj
