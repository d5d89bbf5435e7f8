#pragma once

// Seeded synthetic interaction logs with known sequential structure.

#include <algorithm>
#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "hydra/data/interactions.hpp"
#include "hydra/numkit/rng.hpp"

namespace hydra::data {

inline std::string padded_id(char prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
  return buf;
}

/// First-order Markov chain over items: every item has `successors.size()`
/// distinct preferred next items taken with the listed probabilities; the
/// remaining mass goes to a uniform draw over all items.
struct MarkovSpec {
  std::size_t items = 200;
  std::size_t users = 2000;
  std::size_t min_len = 20;
  std::size_t max_len = 50;
  std::vector<double> successors{0.5, 0.25, 0.15};
  std::uint64_t seed = 7;
};

/// Transition table for items 0..items-1: row i lists i's preferred successors.
inline std::vector<std::vector<std::size_t>> markov_successors(std::size_t items, std::size_t k, SeededRng& rng) {
  std::vector<std::vector<std::size_t>> succ(items);
  for (std::size_t i = 0; i < items; ++i) {
    while (succ[i].size() < k) {
      const std::size_t j = rng.uniform_int(items);
      if (j != i && std::find(succ[i].begin(), succ[i].end(), j) == succ[i].end()) succ[i].push_back(j);
    }
  }
  return succ;
}

inline std::size_t markov_next(std::size_t cur, const std::vector<std::vector<std::size_t>>& succ,
                               const std::vector<double>& probs, std::size_t items, SeededRng& rng) {
  double u = rng.uniform();
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (u < probs[j]) return succ[cur][j];
    u -= probs[j];
  }
  return rng.uniform_int(items);
}

inline std::vector<Interaction> markov_corpus(const MarkovSpec& spec) {
  SeededRng root(spec.seed);
  SeededRng chain_rng = root.fork(stream_tag("markov.chain"));
  SeededRng walk = root.fork(stream_tag("markov.walk"));
  const auto succ = markov_successors(spec.items, spec.successors.size(), chain_rng);
  std::vector<Interaction> out;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t len = spec.min_len + walk.uniform_int(spec.max_len - spec.min_len + 1);
    std::size_t cur = walk.uniform_int(spec.items);
    const std::string user = padded_id('u', u, 6);
    for (std::size_t t = 0; t < len; ++t) {
      out.push_back({user, padded_id('i', cur, 5), static_cast<std::int64_t>(1000 * u + t), "default"});
      cur = markov_next(cur, succ, spec.successors, spec.items, walk);
    }
  }
  return out;
}

/// Two domains sharing users. Domain "a" is a Markov chain as above; after
/// each "a" event, with probability `p_b` the user also consumes a "b" item
/// one tick later, equal to a fixed map of the "a" item with probability
/// `p_map` and uniform otherwise. The "b" domain alone carries little
/// sequential signal; the cross-domain context carries most of it.
struct TwoDomainSpec {
  std::size_t items_a = 120;
  std::size_t items_b = 40;
  std::size_t users = 800;
  std::size_t min_len = 20;
  std::size_t max_len = 50;
  std::vector<double> successors{0.5, 0.25, 0.15};
  double p_b = 0.25;
  double p_map = 0.8;
  std::uint64_t seed = 11;
};

inline std::vector<Interaction> two_domain_corpus(const TwoDomainSpec& spec) {
  SeededRng root(spec.seed);
  SeededRng chain_rng = root.fork(stream_tag("two_domain.chain"));
  SeededRng walk = root.fork(stream_tag("two_domain.walk"));
  const auto succ = markov_successors(spec.items_a, spec.successors.size(), chain_rng);
  std::vector<std::size_t> map_b(spec.items_a);
  for (auto& m : map_b) m = chain_rng.uniform_int(spec.items_b);
  std::vector<Interaction> out;
  for (std::size_t u = 0; u < spec.users; ++u) {
    const std::size_t len = spec.min_len + walk.uniform_int(spec.max_len - spec.min_len + 1);
    std::size_t cur = walk.uniform_int(spec.items_a);
    const std::string user = padded_id('u', u, 6);
    for (std::size_t t = 0; t < len; ++t) {
      const auto ts = static_cast<std::int64_t>(10000 * u + 2 * t);
      out.push_back({user, padded_id('a', cur, 5), ts, "a"});
      if (walk.uniform() < spec.p_b) {
        const std::size_t b = walk.uniform() < spec.p_map ? map_b[cur] : walk.uniform_int(spec.items_b);
        out.push_back({user, padded_id('b', b, 5), ts + 1, "b"});
      }
      cur = markov_next(cur, succ, spec.successors, spec.items_a, walk);
    }
  }
  return out;
}

}  // namespace hydra::data
