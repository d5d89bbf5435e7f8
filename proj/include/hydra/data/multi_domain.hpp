#pragma once

// Multi-domain views: per-domain leave-one-out splits, merged chronological
// training contexts, and the merged context that precedes a held-out target.

#include <vector>

#include "hydra/data/dataset.hpp"

namespace hydra::data {

struct MultiDomainExample {
  std::size_t user = 0;
  Example merged;                // cross-domain next-item example
  std::vector<Example> singles;  // one per domain with a usable training prefix
};

struct MultiDomainData {
  std::vector<SplitSpec> splits;  // indexed by domain
  std::vector<MultiDomainExample> train;
};

/// Events of `user` in domain s that may be used for training: the split's
/// training prefix when the user is evaluated in s, otherwise every event.
inline std::vector<std::vector<Event>> training_events(const Dataset& ds,
                                                       const std::vector<const UserSplit*>& by_domain,
                                                       std::size_t user) {
  std::vector<std::vector<Event>> out(ds.num_domains());
  for (std::size_t s = 0; s < ds.num_domains(); ++s)
    out[s] = by_domain[s] ? by_domain[s]->train : ds.sequences[user][s];
  return out;
}

inline MultiDomainData prepare_multi_domain(const Dataset& ds, std::size_t n_max) {
  if (ds.num_domains() < 2) {
    throw DataError("multi-domain training needs at least 2 domains, dataset has " +
                    std::to_string(ds.num_domains()));
  }
  MultiDomainData md;
  for (std::size_t s = 0; s < ds.num_domains(); ++s) {
    if (ds.vocab_size(s) == 0) throw DataError("domain '" + ds.domains[s] + "' has an empty vocabulary");
    md.splits.push_back(leave_one_out_split(ds, static_cast<int>(s)));
  }
  std::vector<std::vector<const UserSplit*>> lookup(ds.num_users(),
                                                     std::vector<const UserSplit*>(ds.num_domains(), nullptr));
  for (std::size_t s = 0; s < ds.num_domains(); ++s)
    for (const auto& us : md.splits[s].users) lookup[us.user][s] = &us;
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    const auto events = training_events(ds, lookup[u], u);
    MultiDomainExample mx;
    mx.user = u;
    std::vector<Token> merged;
    for (const auto& te : merge_domains(events)) merged.push_back(te.token());
    if (!make_example(u, merged, n_max, mx.merged)) continue;
    for (std::size_t s = 0; s < ds.num_domains(); ++s) {
      Example ex;
      if (lookup[u][s] && make_example(u, tokens_of_events(lookup[u][s]->train, static_cast<int>(s)), n_max, ex))
        mx.singles.push_back(std::move(ex));
    }
    md.train.push_back(std::move(mx));
  }
  return md;
}

/// All of the user's events (any domain) strictly before `target` in merged
/// order, as tokens, keeping the n_max most recent.
inline std::vector<Token> merged_context_before(const Dataset& ds, std::size_t user, int domain, const Event& target,
                                                std::size_t n_max) {
  const TaggedEvent t{domain, target};
  std::vector<Token> out;
  for (const auto& te : merge_domains(ds.sequences[user]))
    if (merged_before(te, t)) out.push_back(te.token());
  return truncate_left(out, n_max);
}

}  // namespace hydra::data
