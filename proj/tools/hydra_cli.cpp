// hydra: prepare datasets, train, evaluate and benchmark Hydra recommenders.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 data or file-format error, 4 training divergence.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hydra/cli/bench_csv.hpp"
#include "hydra/cli/run_config.hpp"
#include "hydra/data/dataset.hpp"
#include "hydra/data/interactions.hpp"
#include "hydra/data/multi_domain.hpp"
#include "hydra/data/synthetic.hpp"
#include "hydra/eval/bench.hpp"
#include "hydra/eval/complexity.hpp"
#include "hydra/eval/evaluate.hpp"
#include "hydra/model/checkpoint.hpp"
#include "hydra/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace hydra;
using hydra::cli::RunConfig;

namespace {

constexpr int kExitConfig = 2, kExitData = 3, kExitDivergence = 4;

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const data::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const io::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << '\n';
    return kExitData;
  } catch (const train::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  const std::string s = j.dump(2) + "\n";
  io::write_file_atomic(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

data::Format format_for(const std::string& flag, const fs::path& path) {
  try {
    if (!flag.empty()) return data::parse_format(flag);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return path.extension() == ".jsonl" ? data::Format::jsonl : data::Format::csv;
}

int domain_of(const data::Dataset& ds, const RunConfig& rc) {
  if (rc.domain.empty()) return 0;
  const auto it = std::find(ds.domains.begin(), ds.domains.end(), rc.domain);
  if (it == ds.domains.end()) throw data::DataError("dataset has no domain '" + rc.domain + "'");
  return static_cast<int>(it - ds.domains.begin());
}

/// Evaluation cases per scored domain; sampled candidates come from the
/// run's validation seed so validation replays match training.
std::vector<std::vector<eval::EvalCase>> build_cases(const data::Dataset& ds, const RunConfig& rc,
                                                     eval::Target which, eval::Mode mode) {
  std::vector<std::vector<eval::EvalCase>> out;
  if (rc.multi_domain) {
    for (std::size_t s = 0; s < ds.num_domains(); ++s) {
      const auto sp = data::leave_one_out_split(ds, static_cast<int>(s));
      out.push_back(eval::multi_domain_cases(ds, sp, which, rc.model.n_max));
    }
  } else {
    const auto sp = data::leave_one_out_split(ds, domain_of(ds, rc));
    out.push_back(eval::single_domain_cases(sp, which, rc.model.n_max));
  }
  if (mode == eval::Mode::sampled)
    for (auto& cases : out) eval::attach_negatives(cases, ds, rc.train.val_negatives, cli::validation_seed(rc.train.seed));
  return out;
}

std::vector<std::string> scored_names(const data::Dataset& ds, const RunConfig& rc) {
  if (rc.multi_domain) return ds.domains;
  return {ds.domains[static_cast<std::size_t>(domain_of(ds, rc))]};
}

data::Dataset load_prepared(const RunConfig& rc) {
  const fs::path p = rc.dataset_file();
  if (!fs::exists(p)) throw data::DataError("prepared dataset not found: " + p.string() + " (run 'hydra prepare')");
  return data::load_dataset(p);
}

// ---------------------------------------------------------------------------
// prepare / synth
// ---------------------------------------------------------------------------

struct PrepareArgs {
  std::string input, format, out;
  std::size_t k_core = 5;
};

int cmd_prepare(const PrepareArgs& a) {
  if (a.k_core == 0) throw ConfigError("--k-core must be >= 1");
  const auto fmt = format_for(a.format, a.input);
  auto rows = data::parse_interactions_file(a.input, fmt);
  rows = data::k_core_filter(std::move(rows), a.k_core);
  const auto ds = data::build_dataset(rows);
  if (ds.num_users() == 0) throw data::DataError("no interactions left after " + std::to_string(a.k_core) + "-core filtering");
  fs::create_directories(a.out);
  data::save_dataset(fs::path(a.out) / "dataset.bin", ds);
  const std::string stats = data::format_stats(data::dataset_stats(ds));
  io::write_file_atomic(fs::path(a.out) / "stats.tsv", std::vector<std::uint8_t>(stats.begin(), stats.end()));
  std::cout << stats;
  return 0;
}

struct SynthArgs {
  std::string kind = "markov", out, format;
  std::optional<std::size_t> users, items;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  std::vector<data::Interaction> rows;
  if (a.kind == "markov") {
    data::MarkovSpec s;
    if (a.users) s.users = *a.users;
    if (a.items) s.items = *a.items;
    if (a.seed) s.seed = *a.seed;
    rows = data::markov_corpus(s);
  } else if (a.kind == "two-domain") {
    data::TwoDomainSpec s;
    if (a.users) s.users = *a.users;
    if (a.items) s.items_a = *a.items;
    if (a.seed) s.seed = *a.seed;
    rows = data::two_domain_corpus(s);
  } else {
    throw ConfigError("unknown corpus kind '" + a.kind + "' (expected markov or two-domain)");
  }
  std::ofstream out(a.out);
  if (!out) throw data::DataError("cannot write " + a.out);
  data::write_interactions(out, rows, format_for(a.format, a.out));
  std::cout << rows.size() << " interactions written to " << a.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct Overrides {
  std::string config;
  std::optional<std::string> data, run_dir, precision, domain;
  std::optional<std::size_t> epochs, threads, batch_size, k_neg, n_max;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  bool multi_domain = false;
};

RunConfig resolve_config(const Overrides& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : cli::load_run_config(o.config);
  cli::apply_env(rc);
  if (o.data) rc.data = *o.data;
  if (o.run_dir) rc.run_dir = *o.run_dir;
  if (o.precision) rc.precision = *o.precision;
  if (o.domain) rc.domain = *o.domain;
  if (o.epochs) rc.train.max_epochs = *o.epochs;
  if (o.threads) rc.threads = *o.threads;
  if (o.batch_size) rc.train.batch_size = *o.batch_size;
  if (o.k_neg) rc.train.k_neg = *o.k_neg;
  if (o.seed) rc.train.seed = *o.seed;
  if (o.lr) rc.train.lr_peak = *o.lr;
  if (o.n_max) {
    rc.model.n_max = *o.n_max;
    rc.n_max_given = true;
  }
  if (o.multi_domain) rc.multi_domain = true;
  rc.resolve();
  return rc;
}

template <class T>
int train_with(RunConfig rc, const data::Dataset& ds) {
  if (!rc.model.vocab_sizes.empty() && rc.model.vocab_sizes != ds.vocab_sizes()) {
    throw data::DataError("config vocabulary sizes " + nlohmann::json(rc.model.vocab_sizes).dump() +
                          " differ from the dataset's " + nlohmann::json(ds.vocab_sizes()).dump());
  }
  rc.model.vocab_sizes = ds.vocab_sizes();
  const fs::path dir(rc.run_dir);
  const fs::path ckpt = dir / "checkpoint.bin";

  std::optional<data::MultiDomainData> md;
  std::vector<data::Example> examples;
  if (rc.multi_domain) {
    md = data::prepare_multi_domain(ds, rc.model.n_max);
    if (md->train.empty()) throw data::DataError("no user has a usable multi-domain training context");
  } else {
    examples = data::single_domain_examples(data::leave_one_out_split(ds, domain_of(ds, rc)), rc.model.n_max);
    if (examples.empty()) throw data::DataError("no user has at least two training interactions");
  }
  auto val = build_cases(ds, rc, eval::Target::val, eval::Mode::sampled);
  const auto names = scored_names(ds, rc);

  fs::create_directories(dir);
  write_json(dir / "config.json", cli::to_json(rc));
  std::ofstream log(dir / "epochs.jsonl", std::ios::trunc);
  if (!log) throw data::DataError("cannot write " + (dir / "epochs.jsonl").string());

  train::FitHooks<T> hooks;
  hooks.on_epoch = [&](const train::EpochLog& l) {
    const std::string line = l.to_json().dump();
    log << line << '\n' << std::flush;
    std::cout << line << '\n' << std::flush;
  };
  hooks.on_best = [&](const HydraParams<T>& p, const train::EpochLog& l) {
    save_checkpoint(ckpt, p, rc.model,
                    {{"precision", rc.precision}, {"epoch", l.epoch}, {"val", l.val}, {"multi_domain", rc.multi_domain},
                     {"domain", rc.multi_domain ? "" : names[0]}});
  };
  hooks.on_incident = [](const std::string& m) { std::cerr << "rejected step: " << m << '\n'; };

  const auto init = init_params<T>(rc.model, rc.train.seed);
  train::FitResult<T> res;
  try {
    if (rc.multi_domain) {
      res = train::train_multi_domain(init, rc.model, rc.train, *md,
                                      train::multi_domain_validator<T>(rc.model, names, std::move(val), rc.threads),
                                      hooks);
    } else {
      res = train::fit(init, rc.model, rc.train, examples,
                       train::sampled_validator<T>(rc.model, std::move(val[0]), rc.threads), hooks);
    }
  } catch (const train::DivergenceError& e) {
    std::cerr << (fs::exists(ckpt) ? "last good checkpoint: " + ckpt.string() : std::string("no checkpoint was saved"))
              << '\n';
    throw;
  }
  std::cout << "best epoch " << res.best_epoch << " (val " << train::kStopMetric << " " << res.best_metric
            << "), checkpoint " << ckpt.string() << '\n';
  return 0;
}

int cmd_train(const Overrides& o) {
  RunConfig rc = resolve_config(o);
  const auto ds = load_prepared(rc);
  if (rc.multi_domain && ds.num_domains() < 2) {
    throw data::DataError("--multi-domain needs at least 2 domains; dataset has " + std::to_string(ds.num_domains()) +
                          " (" + (ds.domains.empty() ? std::string("none") : ds.domains[0]) + ")");
  }
  return rc.precision == "f32" ? train_with<float>(rc, ds) : train_with<double>(rc, ds);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, out;
  Overrides o;
  std::optional<std::string> split, mode;
};

std::string model_mismatch(const HydraConfig& a, const HydraConfig& b) {
  const auto ja = hydra::to_json(a), jb = hydra::to_json(b);
  std::string diff;
  for (const auto& [k, v] : ja.items()) {
    if (k == "vocab_sizes" && (a.vocab_sizes.empty() || b.vocab_sizes.empty())) continue;
    if (k == "dropout" || k == "dropout_in_layers" || k == "n_max") continue;  // do not change the weights
    if (jb.at(k) != v) diff += (diff.empty() ? "" : ", ") + k + " " + v.dump() + " vs " + jb.at(k).dump();
  }
  return diff;
}

template <class T>
nlohmann::json eval_with(const RunConfig& rc, const data::Dataset& ds, const fs::path& ckpt) {
  CheckpointHeader header;
  const auto params = load_checkpoint<T>(ckpt, &header);
  if (header.config.vocab_sizes != ds.vocab_sizes()) {
    throw data::DataError("checkpoint vocabulary sizes " + nlohmann::json(header.config.vocab_sizes).dump() +
                          " differ from the dataset's " + nlohmann::json(ds.vocab_sizes()).dump());
  }
  RunConfig run = rc;
  run.model = header.config;
  const auto which = eval::parse_target(rc.eval_split);
  const auto mode = eval::parse_mode(rc.eval_mode);
  const auto cases = build_cases(ds, run, which, mode);
  const auto names = scored_names(ds, run);
  std::vector<eval::MetricsReport> reps;
  for (const auto& c : cases) reps.push_back(eval::evaluate(params, header.config, c, mode, rc.threads));
  const auto avg = train::average_reports(names, reps);

  auto metrics_of = [](const eval::MetricsReport& r) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t k : eval::default_cutoffs()) {
      for (const char* m : {"R@", "N@"}) j[m + std::to_string(k)] = r.at(m + std::to_string(k));
    }
    return j;
  };
  nlohmann::json out{{"split", rc.eval_split}, {"mode", rc.eval_mode},       {"checkpoint", ckpt.string()},
                     {"users", avg.users},     {"skipped", avg.skipped}, {"metrics", metrics_of(avg)}};
  if (run.multi_domain) {
    for (std::size_t s = 0; s < names.size(); ++s) out["domains"][names[s]] = metrics_of(reps[s]);
  }
  return out;
}

int cmd_eval(EvalArgs a) {
  const fs::path ckpt(a.checkpoint);
  if (a.o.config.empty() && fs::exists(ckpt.parent_path() / "config.json"))
    a.o.config = (ckpt.parent_path() / "config.json").string();
  RunConfig rc = resolve_config(a.o);
  if (a.split) rc.eval_split = *a.split;
  if (a.mode) rc.eval_mode = *a.mode;
  rc.validate();
  if (!fs::exists(ckpt)) throw data::DataError("checkpoint not found: " + ckpt.string());
  const CheckpointHeader header = read_checkpoint_header(ckpt);
  const std::string diff = model_mismatch(rc.model, header.config);
  if (!diff.empty()) {
    throw ConfigError("model in config " + (a.o.config.empty() ? std::string("(defaults)") : a.o.config) +
                      " does not match checkpoint " + ckpt.string() + ": " + diff);
  }
  const auto ds = load_prepared(rc);
  const std::string precision = header.meta.value("precision", rc.precision);
  const auto report = precision == "f32" ? eval_with<float>(rc, ds, ckpt) : eval_with<double>(rc, ds, ckpt);
  const fs::path out = a.out.empty() ? ckpt.parent_path() / "metrics.json" : fs::path(a.out);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  write_json(out, report);
  std::cout << report.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string config, out = ".";
  std::vector<std::size_t> lengths{64, 128, 256, 512};
  std::vector<std::string> archs{"mli", "attention-est"};
  std::size_t repeats = 3;
  std::string precision = "f32";
  std::uint64_t seed = 1;
};

template <class T>
std::vector<eval::BenchRow> measure(HydraConfig cfg, const BenchArgs& a) {
  const auto p = init_params<T>(cfg, a.seed);
  eval::BenchOptions opt;
  opt.lengths = a.lengths;
  opt.repeats = a.repeats;
  opt.seed = a.seed;
  return eval::bench_scaling(p, cfg, opt);
}

void plot(const std::vector<cli::BenchCsvRow>& rows) {
  std::cout << "\nper-position training cost relative to the shortest context\n";
  std::string arch;
  double base_t = 0, base_f = 0;
  for (const auto& r : rows) {
    if (r.arch != arch) {
      arch = r.arch;
      base_t = r.train_s_per_position.value_or(0);
      base_f = r.estimate.train_flops / static_cast<double>(r.n);
      std::cout << arch << '\n';
    }
    const double est = r.estimate.train_flops / static_cast<double>(r.n) / base_f;
    std::cout << "  n=" << r.n << "\test " << std::string(static_cast<std::size_t>(std::min(60.0, 4 * est)), '#') << ' '
              << est << "x\n";
    if (r.train_s_per_position && base_t > 0) {
      const double m = *r.train_s_per_position / base_t;
      std::cout << "\tmeas " << std::string(static_cast<std::size_t>(std::min(60.0, 4 * m)), '*') << ' ' << m << "x\n";
    }
  }
}

int cmd_bench(const BenchArgs& a) {
  HydraConfig cfg;
  if (!a.config.empty()) cfg = cli::load_run_config(a.config).model;
  if (cfg.vocab_sizes.empty()) cfg.vocab_sizes = {1000};
  if (a.precision != "f32" && a.precision != "f64") throw ConfigError("precision must be f32 or f64");
  cfg.validate();
  if (a.lengths.empty() || !std::is_sorted(a.lengths.begin(), a.lengths.end()) || a.lengths.front() == 0)
    throw ConfigError("--lengths must be positive and ascending");
  std::vector<cli::BenchCsvRow> rows;
  for (const auto& name : a.archs) {
    const auto arch = eval::parse_arch(name);
    const bool estimate_only = arch == eval::Arch::attention || name.ends_with("-est");
    HydraConfig c = cfg;
    if (arch == eval::Arch::mamba2) {  // a single full-width head
      c.heads = 1;
      c.d_c = c.d;
    }
    std::vector<eval::BenchRow> timed;
    if (!estimate_only) timed = a.precision == "f32" ? measure<float>(c, a) : measure<double>(c, a);
    for (std::size_t i = 0; i < a.lengths.size(); ++i) {
      cli::BenchCsvRow r;
      r.arch = estimate_only ? std::string(eval::arch_name(arch)) + "-est" : eval::arch_name(arch);
      r.n = a.lengths[i];
      r.d = c.d;
      r.v = c.heads;
      r.d_c = c.d_c;
      if (!estimate_only) {
        r.ok = timed[i].ok;
        if (r.ok) {
          r.train_s_per_position = timed[i].train_per_position_s;
          r.decode_s_per_step = timed[i].decode_per_step_s;
        }
      }
      r.estimate = eval::estimate_complexity(arch, double(r.n), double(r.d), double(r.v), double(r.d_c));
      rows.push_back(r);
    }
  }
  fs::create_directories(a.out);
  std::ofstream out(fs::path(a.out) / "bench.csv");
  if (!out) throw data::DataError("cannot write " + (fs::path(a.out) / "bench.csv").string());
  cli::write_bench_csv(out, rows);
  cli::write_bench_csv(std::cout, rows);
  plot(rows);
  return 0;
}

void add_overrides(CLI::App* c, Overrides& o) {
  c->add_option("--config", o.config, "run configuration (JSON)");
  c->add_option("--data", o.data, "prepared dataset directory or file");
  c->add_option("--run-dir", o.run_dir, "output directory");
  c->add_option("--precision", o.precision, "f32 or f64");
  c->add_option("--domain", o.domain, "target domain for single-domain runs");
  c->add_option("--epochs", o.epochs, "maximum epochs");
  c->add_option("--threads", o.threads, "worker threads");
  c->add_option("--batch-size", o.batch_size, "sequences per optimizer step");
  c->add_option("--k-neg", o.k_neg, "negatives per sequence");
  c->add_option("--n-max", o.n_max, "maximum context length");
  c->add_option("--seed", o.seed, "training seed (overrides HYDRA_SEED)");
  c->add_option("--lr", o.lr, "peak learning rate");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hydra sequential recommender: prepare, train, eval, bench"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* p = app.add_subcommand("prepare", "parse, k-core filter and cache an interaction log");
  p->add_option("--input", prep.input, "interaction file (csv or jsonl)")->required();
  p->add_option("--format", prep.format, "csv or jsonl (default: from the file extension)");
  p->add_option("--k-core", prep.k_core, "minimum interactions per user and item");
  p->add_option("--out", prep.out, "output directory")->required();

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "write a seeded synthetic interaction log");
  s->add_option("--kind", syn.kind, "markov or two-domain");
  s->add_option("--out", syn.out, "output file")->required();
  s->add_option("--format", syn.format, "csv or jsonl (default: from the file extension)");
  s->add_option("--users", syn.users, "number of users");
  s->add_option("--items", syn.items, "number of items (first domain)");
  s->add_option("--seed", syn.seed, "generator seed");

  Overrides tr;
  auto* t = app.add_subcommand("train", "train a model and write the run directory");
  add_overrides(t, tr);
  t->add_flag("--multi-domain", tr.multi_domain, "train on merged cross-domain contexts");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "rank held-out items with a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  add_overrides(e, ev.o);
  e->add_option("--split", ev.split, "val or test");
  e->add_option("--mode", ev.mode, "full or sampled");
  e->add_option("--out", ev.out, "report path (default: metrics.json beside the checkpoint)");

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "time training and decoding against context length");
  b->add_option("--config", be.config, "run configuration supplying the model section");
  b->add_option("--lengths", be.lengths, "ascending context lengths")->delimiter(',');
  b->add_option("--arch", be.archs, "mli, mamba2, attention-est")->delimiter(',');
  b->add_option("--repeats", be.repeats, "timed repeats per length (median reported)");
  b->add_option("--precision", be.precision, "f32 or f64");
  b->add_option("--seed", be.seed, "parameter seed");
  b->add_option("--out", be.out, "directory for bench.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }
  if (*p) return guarded([&] { return cmd_prepare(prep); });
  if (*s) return guarded([&] { return cmd_synth(syn); });
  if (*t) return guarded([&] { return cmd_train(tr); });
  if (*e) return guarded([&] { return cmd_eval(ev); });
  if (*b) return guarded([&] { return cmd_bench(be); });
  return kExitConfig;
}
