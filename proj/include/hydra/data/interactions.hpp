#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace hydra::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
  std::string domain = "default";
  friend bool operator==(const Interaction&, const Interaction&) = default;
};

enum class Format { csv, jsonl };

inline Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "jsonl") return Format::jsonl;
  throw DataError("unknown input format '" + s + "' (expected csv or jsonl)");
}

namespace detail {

inline std::string line_error(std::size_t line, const std::string& msg) {
  return "line " + std::to_string(line) + ": " + msg;
}

/// Splits one CSV record. Double-quoted fields may contain commas; "" is a literal quote.
inline std::vector<std::string> split_csv(const std::string& line, std::size_t lineno) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw DataError(line_error(lineno, "unterminated quoted field"));
  return out;
}

inline std::int64_t parse_timestamp(const std::string& s, std::size_t lineno) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw DataError(line_error(lineno, "timestamp '" + s + "' is not an integer"));
  }
  if (used != s.size()) throw DataError(line_error(lineno, "timestamp '" + s + "' is not an integer"));
  if (v < 0) throw DataError(line_error(lineno, "negative timestamp " + s));
  return v;
}

inline void check_record(const Interaction& r, std::size_t lineno) {
  if (r.user_id.empty()) throw DataError(line_error(lineno, "empty user_id"));
  if (r.item_id.empty()) throw DataError(line_error(lineno, "empty item_id"));
  if (r.domain.empty()) throw DataError(line_error(lineno, "empty domain"));
}

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline std::vector<Interaction> parse_csv(std::istream& in) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> col;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (lineno == 1) {
      const auto header = split_csv(line, lineno);
      for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
      for (const char* need : {"user_id", "item_id", "timestamp"}) {
        if (!col.count(need)) throw DataError(line_error(1, std::string("header lacks column '") + need + "'"));
      }
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv(line, lineno);
    if (f.size() != col.size()) {
      throw DataError(line_error(lineno, "expected " + std::to_string(col.size()) + " fields, found " +
                                             std::to_string(f.size())));
    }
    Interaction r;
    r.user_id = f[col.at("user_id")];
    r.item_id = f[col.at("item_id")];
    r.timestamp = parse_timestamp(f[col.at("timestamp")], lineno);
    if (col.count("domain")) r.domain = f[col.at("domain")];
    check_record(r, lineno);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string json_id(const nlohmann::json& j, const char* key, std::size_t lineno) {
  if (!j.contains(key)) throw DataError(line_error(lineno, std::string("missing key '") + key + "'"));
  const auto& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw DataError(line_error(lineno, std::string("key '") + key + "' must be a string or integer"));
}

inline std::vector<Interaction> parse_jsonl(std::istream& in) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(line_error(lineno, std::string("invalid JSON: ") + e.what()));
    }
    if (!j.is_object()) throw DataError(line_error(lineno, "expected a JSON object"));
    Interaction r;
    r.user_id = json_id(j, "user_id", lineno);
    r.item_id = json_id(j, "item_id", lineno);
    if (!j.contains("timestamp")) throw DataError(line_error(lineno, "missing key 'timestamp'"));
    const auto& ts = j.at("timestamp");
    if (ts.is_number_integer()) {
      r.timestamp = ts.get<std::int64_t>();
      if (r.timestamp < 0) throw DataError(line_error(lineno, "negative timestamp"));
    } else if (ts.is_string()) {
      r.timestamp = parse_timestamp(ts.get<std::string>(), lineno);
    } else {
      throw DataError(line_error(lineno, "timestamp must be an integer"));
    }
    if (j.contains("domain")) {
      if (!j.at("domain").is_string()) throw DataError(line_error(lineno, "domain must be a string"));
      r.domain = j.at("domain").get<std::string>();
    }
    check_record(r, lineno);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

/// Reads user_id,item_id,timestamp[,domain] records. Duplicates are kept.
inline std::vector<Interaction> parse_interactions(std::istream& in, Format fmt) {
  return fmt == Format::csv ? detail::parse_csv(in) : detail::parse_jsonl(in);
}

inline std::vector<Interaction> parse_interactions_file(const std::filesystem::path& path, Format fmt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_interactions(in, fmt);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace detail

/// Writes rows in either input format; parse_interactions reads them back.
inline void write_interactions(std::ostream& out, const std::vector<Interaction>& rows, Format fmt) {
  if (fmt == Format::csv) {
    out << "user_id,item_id,timestamp,domain\n";
    for (const auto& r : rows) {
      out << detail::csv_field(r.user_id) << ',' << detail::csv_field(r.item_id) << ',' << r.timestamp << ','
          << detail::csv_field(r.domain) << '\n';
    }
    return;
  }
  for (const auto& r : rows) {
    out << nlohmann::json{{"user_id", r.user_id}, {"item_id", r.item_id}, {"timestamp", r.timestamp},
                          {"domain", r.domain}}
               .dump()
        << '\n';
  }
}

/// Repeatedly drops users and items with fewer than k interactions until
/// nothing changes. Each domain is filtered on its own counts.
inline std::vector<Interaction> k_core_filter(std::vector<Interaction> rows, std::size_t k) {
  if (k == 0) throw std::invalid_argument("k_core_filter: k must be >= 1");
  while (true) {
    std::unordered_map<std::string, std::size_t> users, items;
    for (const auto& r : rows) {
      ++users[r.domain + '\x1f' + r.user_id];
      ++items[r.domain + '\x1f' + r.item_id];
    }
    std::vector<Interaction> kept;
    kept.reserve(rows.size());
    for (auto& r : rows) {
      if (users[r.domain + '\x1f' + r.user_id] >= k && items[r.domain + '\x1f' + r.item_id] >= k)
        kept.push_back(std::move(r));
    }
    if (kept.size() == rows.size()) return kept;
    rows = std::move(kept);
  }
}

}  // namespace hydra::data
