#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hydra::eval {

struct RankResult {
  std::size_t rank = 0;  // 1-based
  std::size_t candidates = 0;
};

/// 1 + #{scores strictly above the target} + #{equal scores at a smaller index}.
template <class T>
RankResult rank_target(std::span<const T> scores, std::size_t target) {
  if (scores.empty()) throw std::invalid_argument("rank_target: no candidates");
  if (target >= scores.size()) {
    throw std::out_of_range("rank_target: target " + std::to_string(target) + " outside " +
                            std::to_string(scores.size()) + " candidates");
  }
  const T st = scores[target];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > st || (scores[i] == st && i < target)) ++rank;
  }
  return {rank, scores.size()};
}

inline void check_metric_args(std::span<const std::size_t> ranks, std::size_t k, const char* name) {
  if (ranks.empty()) throw std::invalid_argument(std::string(name) + ": empty rank list");
  if (k == 0) throw std::invalid_argument(std::string(name) + ": K must be >= 1");
}

/// Fraction of users whose target ranks within the top K.
inline double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  check_metric_args(ranks, k, "recall_at_k");
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

/// Mean of 1/log2(rank + 1) over users with rank <= K (one relevant item, IDCG = 1).
inline double ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  check_metric_args(ranks, k, "ndcg_at_k");
  double sum = 0.0;
  for (std::size_t r : ranks)
    if (r <= k) sum += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return sum / static_cast<double>(ranks.size());
}

}  // namespace hydra::eval
