#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "hydra/cli/bench_csv.hpp"
#include "hydra/cli/run_config.hpp"
#include "hydra/data/dataset.hpp"

namespace fs = std::filesystem;
using namespace hydra;
using namespace hydra::cli;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

class CliRun : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    dir = fs::temp_directory_path() / ("hydra_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  // Runs the tool inside `dir`; returns its exit code. stderr goes to err.txt.
  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd =
        "cd '" + dir.string() + "' && " + env + " '" + HYDRA_CLI_PATH + "' " + args + " > out.txt 2> err.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string err() { return slurp(dir / "err.txt"); }
  std::string out() { return slurp(dir / "out.txt"); }

  void tiny_fixture() {
    spit(dir / "tiny.csv",
         "user_id,item_id,timestamp\n"
         "u1,a,1\nu1,b,2\nu1,c,3\n"
         "u2,a,1\nu2,c,2\n"
         "u3,b,5\nu3,a,6\nu3,d,7\n");
  }

  void markov(const std::string& extra = "") {
    ASSERT_EQ(run("synth --out m.csv --users 80 --items 30 " + extra), 0) << err();
    ASSERT_EQ(run("prepare --input m.csv --out prep"), 0) << err();
  }

  // Epoch log with the wall-clock field removed.
  std::vector<nlohmann::json> epochs(const std::string& run_dir) {
    std::vector<nlohmann::json> out;
    std::ifstream in(dir / run_dir / "epochs.jsonl");
    for (std::string line; std::getline(in, line);) {
      auto j = nlohmann::json::parse(line);
      j.erase("seconds");
      out.push_back(j);
    }
    return out;
  }
};

const char* kQuick = "--epochs 2 --k-neg 20 --batch-size 16 --precision f32";

}  // namespace

TEST(RunConfigJson, DefaultsMatchPublishedProtocol) {
  RunConfig rc;
  rc.resolve();
  EXPECT_EQ(rc.train.lr_peak, 1e-3);
  EXPECT_EQ(rc.train.weight_decay, 0.01);
  EXPECT_EQ(rc.train.tau, 0.05);
  EXPECT_EQ(rc.train.k_neg, 512u);
  EXPECT_EQ(rc.train.max_epochs, 20u);
  EXPECT_EQ(rc.train.patience, 3u);
  EXPECT_EQ(rc.model.n_max, 50u);
  RunConfig md;
  md.multi_domain = true;
  md.resolve();
  EXPECT_EQ(md.model.n_max, 200u);
}

TEST(RunConfigJson, RoundTripsThroughJson) {
  RunConfig rc;
  rc.data = "prep";
  rc.multi_domain = true;
  rc.precision = "f32";
  rc.train.k_neg = 77;
  rc.model.d = 32;
  rc.model.vocab_sizes = {10, 20};
  rc.resolve();
  RunConfig back;
  merge_json(to_json(rc), back);
  back.resolve();
  EXPECT_EQ(to_json(back), to_json(rc));
}

TEST(RunConfigJson, RejectsUnknownKeysAtEveryLevel) {
  RunConfig rc;
  EXPECT_THROW(merge_json(nlohmann::json{{"colour", 1}}, rc), ConfigError);
  EXPECT_THROW(merge_json(nlohmann::json{{"train", {{"lr", 1}}}}, rc), ConfigError);
  EXPECT_THROW(merge_json(nlohmann::json{{"model", {{"ssm", {{"size", 1}}}}}}, rc), ConfigError);
  EXPECT_THROW(merge_json(nlohmann::json{{"eval", {{"k", 1}}}}, rc), ConfigError);
}

TEST(RunConfigJson, RejectsWrongVersionAndTypes) {
  RunConfig rc;
  EXPECT_THROW(merge_json(nlohmann::json{{"version", 2}}, rc), ConfigError);
  EXPECT_THROW(merge_json(nlohmann::json{{"threads", "many"}}, rc), ConfigError);
  rc = {};
  rc.precision = "f16";
  EXPECT_THROW(rc.resolve(), ConfigError);
  rc = {};
  rc.eval_mode = "approx";
  EXPECT_THROW(rc.resolve(), ConfigError);
}

TEST(RunConfigJson, SeedEnvironmentOverridesFile) {
  RunConfig rc;
  merge_json(nlohmann::json{{"train", {{"seed", 3}}}}, rc);
  ::setenv("HYDRA_SEED", "99", 1);
  apply_env(rc);
  EXPECT_EQ(rc.train.seed, 99u);
  ::setenv("HYDRA_SEED", "x1", 1);
  EXPECT_THROW(apply_env(rc), ConfigError);
  ::unsetenv("HYDRA_SEED");
}

TEST(BenchCsv, RoundTripsExactly) {
  std::vector<BenchCsvRow> rows(2);
  rows[0] = {"mli", 64, 64, 4, 16, 1.2345678901234567e-5, 3.3e-6, true, {64, 65536, 1024, 4096}};
  rows[1] = {"attention-est", 128, 64, 4, 16, std::nullopt, std::nullopt, true, {128, 1048576, 8192, 16384}};
  std::stringstream ss;
  write_bench_csv(ss, rows);
  EXPECT_EQ(read_bench_csv(ss), rows);
  std::stringstream bad("arch,n\n");
  EXPECT_THROW(read_bench_csv(bad), std::invalid_argument);
}

TEST_F(CliRun, PrepareStatsMatchHandCount) {
  tiny_fixture();
  ASSERT_EQ(run("prepare --input tiny.csv --k-core 1 --out p"), 0) << err();
  EXPECT_EQ(slurp(dir / "p" / "stats.tsv"), "Dataset\t#User\t#Item\t#Interaction\ndefault\t3\t4\t8\n");
  // 2-core: d (1 interaction) goes, then every user still has >= 2.
  ASSERT_EQ(run("prepare --input tiny.csv --k-core 2 --out p2"), 0) << err();
  EXPECT_EQ(slurp(dir / "p2" / "stats.tsv"), "Dataset\t#User\t#Item\t#Interaction\ndefault\t3\t3\t7\n");
}

TEST_F(CliRun, PrepareIsIdempotent) {
  tiny_fixture();
  ASSERT_EQ(run("prepare --input tiny.csv --k-core 1 --out a"), 0) << err();
  ASSERT_EQ(run("prepare --input tiny.csv --k-core 1 --out b"), 0) << err();
  const std::string first = slurp(dir / "a" / "dataset.bin");
  EXPECT_FALSE(first.empty());
  EXPECT_EQ(first, slurp(dir / "b" / "dataset.bin"));
}

TEST_F(CliRun, ParseFailureNamesTheLine) {
  spit(dir / "bad.csv", "user_id,item_id,timestamp\nu1,a,1\nu1,b,notatime\n");
  EXPECT_EQ(run("prepare --input bad.csv --out p"), 3);
  EXPECT_NE(err().find("line 3"), std::string::npos) << err();
}

TEST_F(CliRun, UnknownConfigKeyFailsBeforeCompute) {
  spit(dir / "c.json", R"({"version": 1, "train": {"learning_rate": 0.1}})");
  EXPECT_EQ(run("train --config c.json --run-dir r"), 2);
  EXPECT_NE(err().find("learning_rate"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "r"));
}

TEST_F(CliRun, BadFlagIsConfigError) {
  EXPECT_EQ(run("train --epochs many"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(CliRun, MissingDatasetIsDataError) {
  EXPECT_EQ(run("train --data nowhere --run-dir r"), 3);
}

TEST_F(CliRun, SeededTrainingIsReproducible) {
  markov();
  ASSERT_EQ(run(std::string("train --data prep --run-dir r1 ") + kQuick), 0) << err();
  ASSERT_EQ(run(std::string("train --data prep --run-dir r2 ") + kQuick), 0) << err();
  const auto a = epochs("r1"), b = epochs("r2");
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(slurp(dir / "r1" / "checkpoint.bin"), slurp(dir / "r2" / "checkpoint.bin"));
  for (const char* f : {"config.json", "checkpoint.bin", "epochs.jsonl"}) EXPECT_TRUE(fs::exists(dir / "r1" / f)) << f;
}

TEST_F(CliRun, ResolvedConfigReproducesTheRun) {
  markov();
  ASSERT_EQ(run(std::string("train --data prep --run-dir r1 ") + kQuick), 0) << err();
  auto cfg = nlohmann::json::parse(slurp(dir / "r1" / "config.json"));
  cfg["run_dir"] = "r2";
  spit(dir / "again.json", cfg.dump());
  ASSERT_EQ(run("train --config again.json"), 0) << err();
  EXPECT_EQ(epochs("r1"), epochs("r2"));
}

TEST_F(CliRun, SeedEnvironmentVariableIsApplied) {
  markov();
  ASSERT_EQ(run(std::string("train --data prep --run-dir r ") + kQuick, "HYDRA_SEED=1234"), 0) << err();
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "r" / "config.json"))["train"]["seed"], 1234);
}

TEST_F(CliRun, EvalReplaysBestValidationMetric) {
  markov();
  ASSERT_EQ(run(std::string("train --data prep --run-dir r ") + kQuick), 0) << err();
  double best = -1;
  for (const auto& e : epochs("r")) best = std::max(best, e["val"]["N@10"].get<double>());
  ASSERT_EQ(run("eval --checkpoint r/checkpoint.bin --split val --mode sampled"), 0) << err();
  const auto rep = nlohmann::json::parse(slurp(dir / "r" / "metrics.json"));
  EXPECT_EQ(rep["metrics"]["N@10"].get<double>(), best);
}

TEST_F(CliRun, EvalReportHasTableColumns) {
  markov();
  ASSERT_EQ(run(std::string("train --data prep --run-dir r ") + kQuick), 0) << err();
  ASSERT_EQ(run("eval --checkpoint r/checkpoint.bin --out rep.json"), 0) << err();
  const auto rep = nlohmann::json::parse(slurp(dir / "rep.json"));
  std::set<std::string> keys;
  for (const auto& [k, v] : rep["metrics"].items()) keys.insert(k);
  EXPECT_EQ(keys, (std::set<std::string>{"R@10", "R@50", "R@200", "N@10", "N@50", "N@200"}));
  EXPECT_EQ(rep["split"], "test");
  EXPECT_EQ(rep["mode"], "full");
}

TEST_F(CliRun, EvalRejectsDimensionMismatch) {
  markov();
  ASSERT_EQ(run(std::string("train --data prep --run-dir r ") + kQuick), 0) << err();
  spit(dir / "other.json", R"({"model": {"d": 32}})");
  EXPECT_EQ(run("eval --checkpoint r/checkpoint.bin --config other.json --data prep"), 2);
  const std::string e = err();
  EXPECT_NE(e.find("other.json"), std::string::npos) << e;
  EXPECT_NE(e.find("checkpoint.bin"), std::string::npos) << e;
  EXPECT_NE(e.find("d 32 vs 64"), std::string::npos) << e;
}

TEST_F(CliRun, MultiDomainNeedsTwoDomains) {
  markov();
  EXPECT_EQ(run("train --data prep --run-dir r --multi-domain --epochs 1"), 3);
  EXPECT_NE(err().find("at least 2 domains"), std::string::npos) << err();
}

TEST_F(CliRun, MultiDomainRunAndEval) {
  ASSERT_EQ(run("synth --kind two-domain --users 60 --items 40 --out t.jsonl"), 0) << err();
  ASSERT_EQ(run("prepare --input t.jsonl --out prep"), 0) << err();
  ASSERT_EQ(run("train --data prep --run-dir r --multi-domain --epochs 1 --k-neg 10 --precision f32"), 0) << err();
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "r" / "config.json"))["model"]["n_max"], 200);
  ASSERT_EQ(run("eval --checkpoint r/checkpoint.bin"), 0) << err();
  const auto rep = nlohmann::json::parse(slurp(dir / "r" / "metrics.json"));
  EXPECT_TRUE(rep["domains"].contains("a"));
  EXPECT_TRUE(rep["domains"].contains("b"));
}

TEST_F(CliRun, DivergenceExitsWithCodeFour) {
  markov();
  EXPECT_EQ(run("train --data prep --run-dir r --epochs 2 --k-neg 10 --lr 1e300"), 4) << err();
  EXPECT_NE(err().find("diverged"), std::string::npos) << err();
}

TEST_F(CliRun, BenchWritesEstimatesAndTimings) {
  ASSERT_EQ(run("bench --lengths 16,32 --repeats 1 --arch mli,attention-est --out b"), 0) << err();
  std::ifstream in(dir / "b" / "bench.csv");
  const auto rows = read_bench_csv(in);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    const auto arch = eval::parse_arch(r.arch);
    EXPECT_EQ(r.estimate, eval::estimate_complexity(arch, double(r.n), double(r.d), double(r.v), double(r.d_c)));
    EXPECT_EQ(r.train_s_per_position.has_value(), r.arch == "mli");
  }
  std::stringstream again;
  write_bench_csv(again, rows);
  EXPECT_EQ(again.str(), slurp(dir / "b" / "bench.csv"));
}
