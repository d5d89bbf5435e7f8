#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "hydra/data/interactions.hpp"
#include "hydra/model/hydra.hpp"
#include "hydra/numkit/binary_io.hpp"
#include "hydra/numkit/rng.hpp"

namespace hydra::data {

/// One event of a user in one domain. `order` is the row's position in the
/// input log and breaks timestamp ties.
struct Event {
  int item = 0;
  std::int64_t ts = 0;
  std::uint64_t order = 0;
  friend bool operator==(const Event&, const Event&) = default;
};

/// Indexed interaction data. Domain labels and users are sorted; within a
/// domain, item index i + 1 corresponds to item_ids[domain][i] (ids sorted),
/// and index 0 is padding.
struct Dataset {
  std::vector<std::string> domains;
  std::vector<std::vector<std::string>> item_ids;
  std::vector<std::string> users;
  std::vector<std::vector<std::vector<Event>>> sequences;  // [user][domain], sorted by (ts, order)

  std::size_t num_domains() const { return domains.size(); }
  std::size_t num_users() const { return users.size(); }
  std::size_t vocab_size(std::size_t s) const { return item_ids.at(s).size(); }
  std::vector<std::size_t> vocab_sizes() const {
    std::vector<std::size_t> v;
    for (const auto& ids : item_ids) v.push_back(ids.size());
    return v;
  }
  int domain_index(const std::string& label) const {
    auto it = std::lower_bound(domains.begin(), domains.end(), label);
    if (it == domains.end() || *it != label) throw DataError("unknown domain '" + label + "'");
    return static_cast<int>(it - domains.begin());
  }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline Dataset build_dataset(const std::vector<Interaction>& rows) {
  Dataset ds;
  std::map<std::string, std::map<std::string, int>> items;
  std::map<std::string, std::size_t> users;
  for (const auto& r : rows) {
    items[r.domain][r.item_id] = 0;
    users[r.user_id] = 0;
  }
  for (auto& [dom, ids] : items) {
    ds.domains.push_back(dom);
    std::vector<std::string> names;
    int next = 1;
    for (auto& [id, idx] : ids) {
      idx = next++;
      names.push_back(id);
    }
    ds.item_ids.push_back(std::move(names));
  }
  std::size_t u = 0;
  for (auto& [id, idx] : users) {
    idx = u++;
    ds.users.push_back(id);
  }
  std::map<std::string, std::size_t> dom_index;
  for (std::size_t s = 0; s < ds.domains.size(); ++s) dom_index[ds.domains[s]] = s;
  ds.sequences.assign(ds.users.size(), std::vector<std::vector<Event>>(ds.domains.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    ds.sequences[users.at(r.user_id)][dom_index.at(r.domain)].push_back(
        {items.at(r.domain).at(r.item_id), r.timestamp, static_cast<std::uint64_t>(i)});
  }
  for (auto& per_user : ds.sequences)
    for (auto& seq : per_user)
      std::sort(seq.begin(), seq.end(),
                [](const Event& a, const Event& b) { return std::tie(a.ts, a.order) < std::tie(b.ts, b.order); });
  return ds;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct DomainStats {
  std::string domain;
  std::size_t users = 0, items = 0, interactions = 0;
};

inline std::vector<DomainStats> dataset_stats(const Dataset& ds) {
  std::vector<DomainStats> out;
  for (std::size_t s = 0; s < ds.num_domains(); ++s) {
    DomainStats st{ds.domains[s], 0, ds.vocab_size(s), 0};
    for (const auto& per_user : ds.sequences) {
      if (!per_user[s].empty()) ++st.users;
      st.interactions += per_user[s].size();
    }
    out.push_back(st);
  }
  return out;
}

/// Plain-text table: one row per domain with users, items and interactions.
inline std::string format_stats(const std::vector<DomainStats>& stats) {
  std::ostringstream os;
  os << "Dataset\t#User\t#Item\t#Interaction\n";
  for (const auto& s : stats) os << s.domain << '\t' << s.users << '\t' << s.items << '\t' << s.interactions << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Leave-one-out split
// ---------------------------------------------------------------------------

struct UserSplit {
  std::size_t user = 0;
  std::vector<Event> train;
  Event val;   // second-to-last; its context is `train`
  Event test;  // last; its context is `train` + `val`
};

struct SplitSpec {
  int domain = 0;
  std::vector<UserSplit> users;
  std::size_t excluded = 0;  // users with fewer than 3 events in the domain
};

inline SplitSpec leave_one_out_split(const Dataset& ds, int domain = 0) {
  SplitSpec sp;
  sp.domain = domain;
  for (std::size_t u = 0; u < ds.num_users(); ++u) {
    const auto& seq = ds.sequences[u][static_cast<std::size_t>(domain)];
    if (seq.empty()) continue;
    if (seq.size() < 3) {
      ++sp.excluded;
      continue;
    }
    UserSplit us;
    us.user = u;
    us.train.assign(seq.begin(), seq.end() - 2);
    us.val = seq[seq.size() - 2];
    us.test = seq.back();
    sp.users.push_back(std::move(us));
  }
  return sp;
}

// ---------------------------------------------------------------------------
// Multi-domain merge
// ---------------------------------------------------------------------------

struct TaggedEvent {
  int domain = 0;
  Event event;
  Token token() const { return {domain, event.item}; }
  friend bool operator==(const TaggedEvent&, const TaggedEvent&) = default;
};

/// Orders events by timestamp; ties go to the smaller domain label (domain
/// indices follow sorted labels), then to the earlier input row.
inline bool merged_before(const TaggedEvent& a, const TaggedEvent& b) {
  return std::tie(a.event.ts, a.domain, a.event.order) < std::tie(b.event.ts, b.domain, b.event.order);
}

/// Chronological merge of one user's per-domain sequences (indexed by domain).
inline std::vector<TaggedEvent> merge_domains(const std::vector<std::vector<Event>>& per_domain) {
  std::vector<TaggedEvent> out;
  for (std::size_t s = 0; s < per_domain.size(); ++s)
    for (const auto& e : per_domain[s]) out.push_back({static_cast<int>(s), e});
  std::stable_sort(out.begin(), out.end(), merged_before);
  return out;
}

// ---------------------------------------------------------------------------
// Training examples and batches
// ---------------------------------------------------------------------------

/// Next-item training example: inputs[i] predicts targets[i].
struct Example {
  std::size_t user = 0;
  std::vector<Token> inputs;
  std::vector<Token> targets;
};

/// Keeps the most recent n_max items of a context.
template <class V>
V truncate_left(const V& seq, std::size_t n_max) {
  if (seq.size() <= n_max) return seq;
  return V(seq.end() - static_cast<std::ptrdiff_t>(n_max), seq.end());
}

/// Builds an example from a chronological token sequence: inputs are all but
/// the last token, targets are shifted by one. Returns false if too short.
inline bool make_example(std::size_t user, const std::vector<Token>& seq, std::size_t n_max, Example& out) {
  if (seq.size() < 2) return false;
  std::vector<Token> in(seq.begin(), seq.end() - 1), tgt(seq.begin() + 1, seq.end());
  out.user = user;
  out.inputs = truncate_left(in, n_max);
  out.targets = truncate_left(tgt, n_max);
  return true;
}

inline std::vector<Token> tokens_of_events(const std::vector<Event>& seq, int domain) {
  std::vector<Token> out;
  out.reserve(seq.size());
  for (const auto& e : seq) out.push_back({domain, e.item});
  return out;
}

/// One example per user from the training prefix of a single-domain split.
inline std::vector<Example> single_domain_examples(const SplitSpec& sp, std::size_t n_max) {
  std::vector<Example> out;
  for (const auto& us : sp.users) {
    Example ex;
    if (make_example(us.user, tokens_of_events(us.train, sp.domain), n_max, ex)) out.push_back(std::move(ex));
  }
  return out;
}

/// Right-padded batch. Row r holds example indices[r]; positions with
/// mask 0 carry item 0 and never reach a loss or metric.
struct Batch {
  std::vector<std::size_t> indices;
  std::size_t width = 0;
  std::vector<Token> inputs;   // rows x width
  std::vector<Token> targets;  // rows x width
  std::vector<std::uint8_t> mask;

  std::size_t rows() const { return indices.size(); }
  std::size_t length(std::size_t r) const {
    std::size_t n = 0;
    while (n < width && mask[r * width + n]) ++n;
    return n;
  }
};

/// Shuffles example order with `rng` and groups into padded batches.
/// Contexts are truncated to the n_max most recent positions.
inline std::vector<Batch> make_batches(const std::vector<Example>& examples, std::size_t batch_size, std::size_t n_max,
                                       SeededRng& rng) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  std::vector<Batch> out;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    Batch batch;
    batch.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + batch_size)));
    for (std::size_t i : batch.indices) batch.width = std::max(batch.width, std::min(examples[i].inputs.size(), n_max));
    const std::size_t w = batch.width;
    batch.inputs.assign(batch.rows() * w, Token{});
    batch.targets.assign(batch.rows() * w, Token{});
    batch.mask.assign(batch.rows() * w, 0);
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      const auto& ex = examples[batch.indices[r]];
      const auto in = truncate_left(ex.inputs, n_max);
      const auto tg = truncate_left(ex.targets, n_max);
      for (std::size_t t = 0; t < in.size(); ++t) {
        batch.inputs[r * w + t] = in[t];
        batch.targets[r * w + t] = tg[t];
        batch.mask[r * w + t] = 1;
      }
      for (std::size_t t = in.size(); t < w; ++t) {
        batch.inputs[r * w + t].domain = in.empty() ? 0 : in[0].domain;
        batch.targets[r * w + t].domain = batch.inputs[r * w + t].domain;
      }
    }
    out.push_back(std::move(batch));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary cache
// ---------------------------------------------------------------------------
//
//   "HYDRADS"  7-byte magic
//   u32        version (1)
//   u32        domain count, then per domain: u32-length label,
//              u32 item count, u32-length item ids (index order)
//   u32        user count, then u32-length user ids
//   per user, per domain: u32 event count, then (u32 item, i64 ts, u64 order)
//   u64        FNV-1a checksum of all preceding bytes

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.put_bytes("HYDRADS", 7);
  w.put(std::uint32_t{1});
  w.put(static_cast<std::uint32_t>(ds.domains.size()));
  for (std::size_t s = 0; s < ds.domains.size(); ++s) {
    w.put_string32(ds.domains[s]);
    w.put(static_cast<std::uint32_t>(ds.item_ids[s].size()));
    for (const auto& id : ds.item_ids[s]) w.put_string32(id);
  }
  w.put(static_cast<std::uint32_t>(ds.users.size()));
  for (const auto& u : ds.users) w.put_string32(u);
  for (const auto& per_user : ds.sequences)
    for (const auto& seq : per_user) {
      w.put(static_cast<std::uint32_t>(seq.size()));
      for (const auto& e : seq) {
        w.put(static_cast<std::uint32_t>(e.item));
        w.put(e.ts);
        w.put(e.order);
      }
    }
  w.put(io::fnv1a(w.bytes(), w.bytes().size()));
  return std::move(w.bytes());
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  try {
    if (bytes.size() < 7 + 4 + 8) throw DataError("dataset cache too short");
    const std::size_t end = bytes.size() - 8;
    std::uint64_t stored = 0;
    for (std::size_t i = 8; i-- > 0;) stored = (stored << 8) | bytes[end + i];
    if (stored != io::fnv1a(bytes, end)) throw DataError("dataset cache checksum mismatch");
    io::ByteReader r(bytes, end);
    if (r.get_string(7) != "HYDRADS") throw DataError("not a HYDRADS dataset cache");
    const auto version = r.get<std::uint32_t>();
    if (version != 1) throw DataError("unsupported dataset cache version " + std::to_string(version));
    Dataset ds;
    const auto n_dom = r.get<std::uint32_t>();
    for (std::uint32_t s = 0; s < n_dom; ++s) {
      ds.domains.push_back(r.get_string32());
      std::vector<std::string> ids(r.get<std::uint32_t>());
      for (auto& id : ids) id = r.get_string32();
      ds.item_ids.push_back(std::move(ids));
    }
    ds.users.resize(r.get<std::uint32_t>());
    for (auto& u : ds.users) u = r.get_string32();
    ds.sequences.assign(ds.users.size(), std::vector<std::vector<Event>>(n_dom));
    for (auto& per_user : ds.sequences)
      for (std::size_t s = 0; s < n_dom; ++s) {
        per_user[s].resize(r.get<std::uint32_t>());
        for (auto& e : per_user[s]) {
          e.item = static_cast<int>(r.get<std::uint32_t>());
          e.ts = r.get<std::int64_t>();
          e.order = r.get<std::uint64_t>();
          if (e.item < 1 || static_cast<std::size_t>(e.item) > ds.item_ids[s].size())
            throw DataError("dataset cache: item index out of range");
        }
      }
    if (r.position() != end) throw DataError("dataset cache: trailing bytes");
    return ds;
  } catch (const io::FormatError& e) {
    throw DataError(std::string("dataset cache: ") + e.what());
  }
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  io::write_file_atomic(path, encode_dataset(ds));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const io::FormatError& e) {
    throw DataError(e.what());
  }
  return decode_dataset(bytes);
}

}  // namespace hydra::data
