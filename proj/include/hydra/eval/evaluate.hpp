#pragma once

// Leave-one-out ranking evaluation. Each case holds a user's context and
// held-out target; scores come from the model (or a baseline) over the
// target domain's vocabulary.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hydra/data/multi_domain.hpp"
#include "hydra/eval/metrics.hpp"
#include "hydra/model/hydra.hpp"
#include "hydra/numkit/parallel.hpp"
#include "hydra/objectives/negatives.hpp"

namespace hydra::eval {

enum class Mode { full, sampled };
enum class Target { val, test };

inline Mode parse_mode(const std::string& s) {
  if (s == "full") return Mode::full;
  if (s == "sampled") return Mode::sampled;
  throw std::invalid_argument("unknown evaluation mode '" + s + "' (expected full or sampled)");
}

inline Target parse_target(const std::string& s) {
  if (s == "val" || s == "validation") return Target::val;
  if (s == "test") return Target::test;
  throw std::invalid_argument("unknown split '" + s + "' (expected val or test)");
}

struct EvalCase {
  std::size_t user = 0;
  int domain = 0;
  int target = 0;
  std::vector<Token> context;         // same-domain history
  std::vector<Token> merged_context;  // cross-domain history; empty for single-domain scoring
  std::vector<int> negatives;         // candidates besides the target in sampled mode
};

inline const std::vector<std::size_t>& default_cutoffs() {
  static const std::vector<std::size_t> ks{10, 50, 200};
  return ks;
}

struct MetricsReport {
  std::map<std::string, double> values;  // "R@10", "N@10", ...
  std::size_t users = 0;
  std::size_t skipped = 0;
  std::vector<std::size_t> ranks;

  double at(const std::string& key) const { return values.at(key); }
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values) j[k] = v;
    j["users"] = users;
    j["skipped"] = skipped;
    return j;
  }
};

inline MetricsReport summarize(std::vector<std::size_t> ranks, std::size_t skipped,
                               const std::vector<std::size_t>& ks = default_cutoffs()) {
  MetricsReport r;
  r.users = ranks.size();
  r.skipped = skipped;
  for (std::size_t k : ks) {
    r.values["R@" + std::to_string(k)] = ranks.empty() ? 0.0 : recall_at_k(ranks, k);
    r.values["N@" + std::to_string(k)] = ranks.empty() ? 0.0 : ndcg_at_k(ranks, k);
  }
  r.ranks = std::move(ranks);
  return r;
}

/// Contexts for a single-domain split: validation targets see the training
/// prefix, test targets see the prefix plus the validation item.
inline std::vector<EvalCase> single_domain_cases(const data::SplitSpec& sp, Target which, std::size_t n_max) {
  std::vector<EvalCase> out;
  for (const auto& us : sp.users) {
    EvalCase c;
    c.user = us.user;
    c.domain = sp.domain;
    auto ctx = us.train;
    if (which == Target::test) ctx.push_back(us.val);
    c.target = (which == Target::test ? us.test : us.val).item;
    c.context = data::truncate_left(data::tokens_of_events(ctx, sp.domain), n_max);
    out.push_back(std::move(c));
  }
  return out;
}

/// As single_domain_cases, plus the merged history preceding each target.
inline std::vector<EvalCase> multi_domain_cases(const data::Dataset& ds, const data::SplitSpec& sp, Target which,
                                                std::size_t n_max) {
  auto out = single_domain_cases(sp, which, n_max);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& us = sp.users[i];
    out[i].merged_context =
        data::merged_context_before(ds, us.user, sp.domain, which == Target::test ? us.test : us.val, n_max);
  }
  return out;
}

/// Draws k negatives per case outside the user's full sequence in that
/// domain. Each user's draw comes from its own fork of `seed`, so the sets
/// do not depend on case order.
inline void attach_negatives(std::vector<EvalCase>& cases, const data::Dataset& ds, std::size_t k, std::uint64_t seed) {
  SeededRng root(seed);
  for (auto& c : cases) {
    const auto dom = static_cast<std::size_t>(c.domain);
    std::vector<int> seen;
    for (const auto& e : ds.sequences[c.user][dom]) seen.push_back(e.item);
    SeededRng rng = root.fork(c.user, dom);
    const std::size_t vocab = ds.vocab_size(dom);
    const std::size_t allowed = vocab - std::min(vocab, std::set<int>(seen.begin(), seen.end()).size());
    c.negatives = obj::sample_negatives(vocab, seen, std::min(k, allowed), rng, c.domain).ids;
  }
}

/// Ranks every case's target. `scores(case)` returns one score per item of
/// the case's domain (entry j is item j + 1). Sampled mode ranks the target
/// among itself and the case's negatives, ties broken by item index.
template <class ScoreFn>
MetricsReport evaluate_scores(const std::vector<EvalCase>& cases, Mode mode, ScoreFn&& scores, std::size_t threads = 1,
                              const std::vector<std::size_t>& ks = default_cutoffs()) {
  std::vector<std::size_t> ranks(cases.size(), 0);
  parallel_for(cases.size(), threads, [&](std::size_t i) {
    const auto& c = cases[i];
    if (c.context.empty() && c.merged_context.empty()) return;
    const std::vector<double> s = scores(c);
    if (mode == Mode::full) {
      ranks[i] = rank_target(std::span<const double>(s), static_cast<std::size_t>(c.target - 1)).rank;
      return;
    }
    std::vector<int> cand = c.negatives;
    cand.push_back(c.target);
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    std::vector<double> sub;
    std::size_t t = 0;
    for (std::size_t j = 0; j < cand.size(); ++j) {
      if (cand[j] == c.target) t = j;
      sub.push_back(s[static_cast<std::size_t>(cand[j] - 1)]);
    }
    ranks[i] = rank_target(std::span<const double>(sub), t).rank;
  });
  std::vector<std::size_t> kept;
  std::size_t skipped = 0;
  for (std::size_t r : ranks) {
    if (r == 0) ++skipped;
    else kept.push_back(r);
  }
  return summarize(std::move(kept), skipped, ks);
}

/// Final hidden state for a case: H^s_n, plus H_merge when a merged context is present.
template <class T>
std::vector<T> case_representation(const HydraParams<T>& p, const HydraConfig& cfg, const EvalCase& c) {
  const ForwardOptions opt{false, nullptr, false};
  std::vector<T> h(cfg.d, T(0));
  if (!c.context.empty()) {
    auto tr = forward(p, cfg, std::span<const Token>(c.context), opt);
    auto last = tr.last();
    std::copy(last.begin(), last.end(), h.begin());
  }
  if (!c.merged_context.empty()) {
    auto tr = forward(p, cfg, std::span<const Token>(c.merged_context), opt);
    auto last = tr.last();
    for (std::size_t j = 0; j < cfg.d; ++j) h[j] += last[j];
  }
  return h;
}

/// Model scores over the whole target-domain vocabulary (pre-softmax logits;
/// the softmax is monotone so ranks are unchanged).
template <class T>
MetricsReport evaluate(const HydraParams<T>& p, const HydraConfig& cfg, const std::vector<EvalCase>& cases, Mode mode,
                       std::size_t threads = 1, const std::vector<std::size_t>& ks = default_cutoffs()) {
  return evaluate_scores(
      cases, mode,
      [&](const EvalCase& c) {
        const auto h = case_representation(p, cfg, c);
        const auto logits = item_logits(std::span<const T>(h), p.embeddings.at(static_cast<std::size_t>(c.domain)));
        return std::vector<double>(logits.begin(), logits.end());
      },
      threads, ks);
}

/// Item frequencies over the training prefixes of a split, indexed by item - 1.
inline std::vector<double> popularity_counts(const data::Dataset& ds, const data::SplitSpec& sp) {
  std::vector<double> counts(ds.vocab_size(static_cast<std::size_t>(sp.domain)), 0.0);
  for (const auto& us : sp.users)
    for (const auto& e : us.train) counts[static_cast<std::size_t>(e.item - 1)] += 1.0;
  return counts;
}

inline MetricsReport evaluate_popularity(const std::vector<double>& counts, const std::vector<EvalCase>& cases,
                                         Mode mode, const std::vector<std::size_t>& ks = default_cutoffs()) {
  return evaluate_scores(cases, mode, [&](const EvalCase&) { return counts; }, 1, ks);
}

}  // namespace hydra::eval
