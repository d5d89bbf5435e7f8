#pragma once

// Run configuration for the command-line tool: model and training
// hyperparameters plus data paths and command options, read from one JSON
// document. Precedence, lowest first: built-in defaults, config file,
// HYDRA_SEED, command-line flags.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "hydra/eval/evaluate.hpp"
#include "hydra/model/config_json.hpp"
#include "hydra/train/optim.hpp"

namespace hydra::cli {

inline constexpr int kConfigVersion = 1;

struct RunConfig {
  std::string data;                // prepared dataset: directory holding dataset.bin, or the file
  std::string run_dir = "run";
  bool multi_domain = false;
  std::string domain;              // single-domain target; empty = first domain in sorted order
  std::string precision = "f64";   // f32 or f64
  std::size_t threads = 1;
  HydraConfig model;
  bool n_max_given = false;        // otherwise 50, or 200 for multi-domain runs
  train::TrainConfig train;
  std::string eval_mode = "full";
  std::string eval_split = "test";

  /// Fills defaults that depend on other fields and checks every value.
  void resolve() {
    if (!n_max_given) {
      model.n_max = multi_domain ? 200 : 50;
      n_max_given = true;
    }
    train.threads = threads;
    validate();
  }

  void validate() const {
    if (precision != "f32" && precision != "f64") {
      throw ConfigError("precision must be f32 or f64, got '" + precision + "'");
    }
    if (threads == 0) throw ConfigError("threads must be >= 1");
    HydraConfig m = model;
    if (m.vocab_sizes.empty()) m.vocab_sizes = {1};  // filled from the dataset later
    m.validate();
    train.validate();
    try {
      eval::parse_mode(eval_mode);
      eval::parse_target(eval_split);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("eval: ") + e.what());
    }
  }

  std::filesystem::path dataset_file() const {
    if (data.empty()) throw ConfigError("no dataset given (set \"data\" or pass --data)");
    const std::filesystem::path p(data);
    return std::filesystem::is_directory(p) ? p / "dataset.bin" : p;
  }
};

inline nlohmann::json to_json(const train::TrainConfig& t) {
  return {{"lr_peak", t.lr_peak},
          {"weight_decay", t.weight_decay},
          {"max_epochs", t.max_epochs},
          {"warmup_frac", t.warmup_frac},
          {"patience", t.patience},
          {"tau", t.tau},
          {"k_neg", t.k_neg},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"grad_clip", t.grad_clip},
          {"per_position_negatives", t.per_position_negatives},
          {"val_negatives", t.val_negatives}};
}

inline void merge_json(const nlohmann::json& j, train::TrainConfig& t, const std::string& where = "train") {
  using hydra::detail::read_field;
  hydra::detail::reject_unknown_keys(j,
                                     {"lr_peak", "weight_decay", "max_epochs", "warmup_frac", "patience", "tau",
                                      "k_neg", "batch_size", "seed", "beta1", "beta2", "eps", "grad_clip",
                                      "per_position_negatives", "val_negatives"},
                                     where);
  read_field(j, "lr_peak", t.lr_peak, where);
  read_field(j, "weight_decay", t.weight_decay, where);
  read_field(j, "max_epochs", t.max_epochs, where);
  read_field(j, "warmup_frac", t.warmup_frac, where);
  read_field(j, "patience", t.patience, where);
  read_field(j, "tau", t.tau, where);
  read_field(j, "k_neg", t.k_neg, where);
  read_field(j, "batch_size", t.batch_size, where);
  read_field(j, "seed", t.seed, where);
  read_field(j, "beta1", t.beta1, where);
  read_field(j, "beta2", t.beta2, where);
  read_field(j, "eps", t.eps, where);
  read_field(j, "grad_clip", t.grad_clip, where);
  read_field(j, "per_position_negatives", t.per_position_negatives, where);
  read_field(j, "val_negatives", t.val_negatives, where);
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"version", kConfigVersion},
          {"data", c.data},
          {"run_dir", c.run_dir},
          {"multi_domain", c.multi_domain},
          {"domain", c.domain},
          {"precision", c.precision},
          {"threads", c.threads},
          {"model", hydra::to_json(c.model)},
          {"train", to_json(c.train)},
          {"eval", {{"mode", c.eval_mode}, {"split", c.eval_split}}}};
}

inline void merge_json(const nlohmann::json& j, RunConfig& c) {
  using hydra::detail::read_field;
  hydra::detail::reject_unknown_keys(
      j, {"version", "data", "run_dir", "multi_domain", "domain", "precision", "threads", "model", "train", "eval"},
      "config");
  if (j.contains("version")) {
    int v = 0;
    read_field(j, "version", v, "config");
    if (v != kConfigVersion) {
      throw ConfigError("config: unsupported version " + std::to_string(v) + " (expected " +
                        std::to_string(kConfigVersion) + ")");
    }
  }
  read_field(j, "data", c.data, "config");
  read_field(j, "run_dir", c.run_dir, "config");
  read_field(j, "multi_domain", c.multi_domain, "config");
  read_field(j, "domain", c.domain, "config");
  read_field(j, "precision", c.precision, "config");
  read_field(j, "threads", c.threads, "config");
  if (j.contains("model")) {
    hydra::merge_json(j.at("model"), c.model, "model");
    if (j.at("model").contains("n_max")) c.n_max_given = true;
  }
  if (j.contains("train")) merge_json(j.at("train"), c.train);
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    hydra::detail::reject_unknown_keys(e, {"mode", "split"}, "eval");
    read_field(e, "mode", c.eval_mode, "eval");
    read_field(e, "split", c.eval_split, "eval");
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c;
  merge_json(j, c);
  return c;
}

/// HYDRA_SEED, when set, replaces the training seed.
inline void apply_env(RunConfig& c) {
  const char* s = std::getenv("HYDRA_SEED");
  if (!s) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*s == '\0' || *end != '\0' || *s == '-') throw ConfigError("HYDRA_SEED must be an unsigned integer, got '" + std::string(s) + "'");
  c.train.seed = v;
}

/// Seed for the fixed validation candidate sets, derived from the run seed.
inline std::uint64_t validation_seed(std::uint64_t seed) { return SeededRng::mix(seed ^ stream_tag("validation")); }

}  // namespace hydra::cli
