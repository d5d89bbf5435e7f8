#pragma once

// Benchmark table: measured timings next to analytic cost estimates, one row
// per (architecture, context length). Estimate-only rows leave the timing
// cells empty.

#include <charconv>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hydra/eval/complexity.hpp"

namespace hydra::cli {

struct BenchCsvRow {
  std::string arch;
  std::size_t n = 0, d = 0, v = 0, d_c = 0;
  std::optional<double> train_s_per_position;
  std::optional<double> decode_s_per_step;
  bool ok = true;
  eval::ComplexityEstimate estimate;
  friend bool operator==(const BenchCsvRow&, const BenchCsvRow&) = default;
};

inline constexpr const char* kBenchHeader =
    "arch,n,d,v,d_c,train_s_per_position,decode_s_per_step,ok,state_size,train_flops,infer_flops,memory";

namespace detail {

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& s, std::size_t line) {
  std::istringstream in(s);
  double x;
  if (!(in >> x) || !in.eof()) throw std::invalid_argument("bench csv line " + std::to_string(line) + ": bad number '" + s + "'");
  return x;
}

inline std::size_t parse_size(const std::string& s, std::size_t line) {
  std::size_t x = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("bench csv line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return x;
}

}  // namespace detail

inline void write_bench_csv(std::ostream& out, const std::vector<BenchCsvRow>& rows) {
  out << kBenchHeader << '\n';
  for (const auto& r : rows) {
    out << r.arch << ',' << r.n << ',' << r.d << ',' << r.v << ',' << r.d_c << ','
        << (r.train_s_per_position ? detail::num(*r.train_s_per_position) : "") << ','
        << (r.decode_s_per_step ? detail::num(*r.decode_s_per_step) : "") << ',' << (r.ok ? 1 : 0) << ','
        << detail::num(r.estimate.state_size) << ',' << detail::num(r.estimate.train_flops) << ','
        << detail::num(r.estimate.infer_flops) << ',' << detail::num(r.estimate.memory) << '\n';
  }
}

inline std::vector<BenchCsvRow> read_bench_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kBenchHeader) throw std::invalid_argument("bench csv: missing header");
  std::vector<BenchCsvRow> rows;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 12) {
      throw std::invalid_argument("bench csv line " + std::to_string(lineno) + ": expected 12 fields, got " +
                                  std::to_string(f.size()));
    }
    BenchCsvRow r;
    r.arch = f[0];
    r.n = detail::parse_size(f[1], lineno);
    r.d = detail::parse_size(f[2], lineno);
    r.v = detail::parse_size(f[3], lineno);
    r.d_c = detail::parse_size(f[4], lineno);
    if (!f[5].empty()) r.train_s_per_position = detail::parse_double(f[5], lineno);
    if (!f[6].empty()) r.decode_s_per_step = detail::parse_double(f[6], lineno);
    r.ok = f[7] == "1";
    r.estimate = {detail::parse_double(f[8], lineno), detail::parse_double(f[9], lineno),
                  detail::parse_double(f[10], lineno), detail::parse_double(f[11], lineno)};
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace hydra::cli
