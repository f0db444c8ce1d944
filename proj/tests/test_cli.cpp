#include "groklab/common.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result run(const std::string& args) {
  const std::string cmd = std::string(GROKLAB_BIN) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            (std::string("groklab_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  std::string out(const std::string& sub = "") const { return "--out " + (root_ / sub).string(); }
  fs::path root_;
};

// Trains for zero epochs at the default size and returns the initial checkpoint.
fs::path untrained_checkpoint(const fs::path& root) {
  const auto r = run("train --epochs 0 --out " + root.string());
  EXPECT_EQ(r.code, 0) << r.output;
  return root / "mul_p97_adam_seed1" / "final.params";
}

}  // namespace

class GoldenHelp : public ::testing::TestWithParam<std::string> {};

TEST_P(GoldenHelp, MatchesGoldenFile) {
  const std::string sub = GetParam();
  const auto r = run(sub.empty() ? "--help" : sub + " --help");
  EXPECT_EQ(r.code, 0);
  const auto golden = fs::path(GROKLAB_GOLDEN_DIR) / ((sub.empty() ? "" : sub + "_") + "help.txt");
  EXPECT_EQ(r.output, slurp(golden)) << "regenerate " << golden << " if the change is intended";
}

TEST_P(GoldenHelp, EveryValuedFlagShowsADefault) {
  const std::string sub = GetParam();
  if (sub.empty()) return;
  const auto r = run(sub + " --help");
  const std::regex valued(R"(^  (--[a-z0-9-]+) (TEXT|INT|UINT|FLOAT)\S*(.*)$)");
  int flags = 0;
  for (const auto& line : lines(r.output)) {
    std::smatch m;
    if (!std::regex_match(line, m, valued)) continue;
    ++flags;
    const std::string name = m[1], rest = m[3];
    const bool documented = rest.find('[') != std::string::npos ||
                            rest.find("REQUIRED") != std::string::npos || name == "--config" ||
                            line.find("(default:") != std::string::npos;
    EXPECT_TRUE(documented) << line;
  }
  EXPECT_GT(flags, 2);
}

INSTANTIATE_TEST_SUITE_P(Subcommands, GoldenHelp,
                         ::testing::Values("", "data", "train", "sweep", "diag", "fft", "rank"),
                         [](const auto& info) { return info.param.empty() ? std::string("top") : info.param; });

TEST_F(Cli, DataWritesSplitFiles) {
  const auto r = run("data --op mul --p 97 --strategy random --seed 1 " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto dir = root_ / "data_mul_p97_random_seed1";
  EXPECT_EQ(lines(slurp(dir / "train.txt")).size(), 2822u + 1u);
  EXPECT_EQ(lines(slurp(dir / "test.txt")).size(), 1881u + 1u);
  EXPECT_EQ(lines(slurp(dir / "dataset.txt")).size(), 9409u + 1u);
  EXPECT_EQ(lines(slurp(dir / "train_index.txt")).size(), 2822u);
  EXPECT_EQ(lines(slurp(dir / "tokens.csv")).size(), 100u);
  EXPECT_NE(r.output.find("train 2822, test 1881"), std::string::npos);
}

TEST_F(Cli, DataIsIdempotent) {
  ASSERT_EQ(run("data --p 31 --strategy skewed --seed 4 " + out("a")).code, 0);
  ASSERT_EQ(run("data --p 31 --strategy skewed --seed 4 " + out("b")).code, 0);
  const auto a = root_ / "a" / "data_mul_p31_skewed_seed4", b = root_ / "b" / "data_mul_p31_skewed_seed4";
  int files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path();
    ++files;
  }
  EXPECT_EQ(files, 6);
}

TEST_F(Cli, NonPrimeModulusIsAUsageError) {
  const auto r = run("data --p 10 " + out());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("prime"), std::string::npos) << r.output;
}

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run("train --lr abc " + out()).code, 1);
  EXPECT_EQ(run("train --bogus " + out()).code, 1);
  EXPECT_EQ(run("train --op pow " + out()).code, 1);
  EXPECT_EQ(run("train --eval-every 0 " + out()).code, 1);
  EXPECT_EQ(run("sweep --axis lr " + out()).code, 1);
  EXPECT_EQ(run("sweep --axis lr --values 0.1,-1 --p 7 " + out()).code, 1);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("fft").code, 1);
}

TEST_F(Cli, ExistingRunDirectoryNeedsForce) {
  const std::string args = "train --p 7 --embed-dim 8 --epochs 2 " + out();
  ASSERT_EQ(run(args).code, 0);
  const auto again = run(args);
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.output.find("--force"), std::string::npos);
  EXPECT_EQ(run(args + " --force").code, 0);
}

TEST_F(Cli, OneEpochGivesTwoMetricRows) {
  const auto r = run("train --p 7 --embed-dim 8 --epochs 1 --eval-every 10 " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto dir = root_ / "mul_p7_adam_seed1";
  EXPECT_EQ(lines(slurp(dir / "metrics.csv")).size(), 1u + 2u);  // header, epochs 0 and 1
  for (const char* f : {"summary.json", "accuracy.svg", "loss.svg", "final.params", "final.opt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_NE(slurp(dir / "accuracy.svg").find("<svg"), std::string::npos);
}

TEST_F(Cli, NoEmbedModeIsRecorded) {
  const auto r = run("train --no-embed --op add --p 97 --epochs 1 " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(root_ / "add_p97_adam_seed1" / "summary.json"));
  EXPECT_EQ(j["mode"], "no_embedding");
  EXPECT_EQ(j["config"]["embed"], false);
}

TEST_F(Cli, TrainIsIdempotent) {
  const std::string args = "train --op div --p 11 --embed-dim 8 --epochs 12 --batch 16 ";
  ASSERT_EQ(run(args + out("a")).code, 0);
  ASSERT_EQ(run(args + out("b")).code, 0);
  for (const char* f : {"metrics.csv", "tokens.csv", "summary.json", "final.params", "accuracy.svg"}) {
    EXPECT_EQ(slurp(root_ / "a" / "div_p11_adam_seed1" / f), slurp(root_ / "b" / "div_p11_adam_seed1" / f))
        << f;
  }
}

TEST_F(Cli, EnvironmentSuppliesTheOutputRoot) {
  const auto cmd = "GROKLAB_OUT=" + root_.string() + " " + std::string(GROKLAB_BIN) +
                   " data --p 5 > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(root_ / "data_mul_p5_random_seed1" / "train.txt"));
}

TEST_F(Cli, ConfigFileSuppliesFlags) {
  const auto cfg = root_ / "run.cfg";
  std::ofstream(cfg) << "# small run\nop = add\np = 7\nembed-dim = 8\nepochs = 3  # short\nno-embed = true\n";
  const auto r = run("train --config " + cfg.string() + " --epochs 2 " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(root_ / "add_p7_adam_seed1" / "summary.json"));
  EXPECT_EQ(j["config"]["epochs"], 2);  // the command line wins
  EXPECT_EQ(j["config"]["embed_dim"], 8);
  EXPECT_EQ(j["mode"], "no_embedding");

  const auto bad = root_ / "bad.cfg";
  std::ofstream(bad) << "learning_rate = 0.1\n";
  const auto e = run("train --config " + bad.string() + " " + out());
  EXPECT_EQ(e.code, 1);
  EXPECT_NE(e.output.find("unknown key 'learning_rate'"), std::string::npos) << e.output;
}

TEST_F(Cli, SweepWritesTableAndRuns) {
  const auto r = run("sweep --p 7 --embed-dim 8 --epochs 3 --opt adam_lr --axis ratio --values 1,10 "
                     "--seeds 1,2 --jobs 2 " + out());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto dir = root_ / "sweep_mul_p7_adam_lr_ratio";
  EXPECT_EQ(lines(slurp(dir / "sweep.csv")).size(), 1u + 4u + 2u);
  EXPECT_TRUE(fs::exists(dir / "t_gen.svg"));
  EXPECT_TRUE(fs::exists(dir / "ratio_10" / "seed2" / "summary.json"));
}

TEST_F(Cli, CheckpointReportsOnUntrainedModel) {
  const auto ckpt = untrained_checkpoint(root_);
  ASSERT_TRUE(fs::exists(ckpt));
  const auto dir = ckpt.parent_path();

  const auto rk = run("rank --checkpoint " + ckpt.string());
  ASSERT_EQ(rk.code, 0) << rk.output;
  const auto rank_rows = lines(slurp(dir / "rank.csv"));
  EXPECT_EQ(rank_rows[0], "matrix,rows,cols,rank,sigma_max");
  EXPECT_EQ(rank_rows[1].rfind("E,99,128,99,", 0), 0u) << rank_rows[1];
  EXPECT_EQ(rank_rows.size(), 1u + 7u);

  const auto ff = run("fft --checkpoint " + ckpt.string());
  ASSERT_EQ(ff.code, 0) << ff.output;
  const auto fft_rows = lines(slurp(dir / "fft.csv"));
  ASSERT_EQ(fft_rows.size(), 1u + 49u);
  double lo = 1e300, hi = 0.0;
  for (std::size_t i = 1; i < fft_rows.size(); ++i) {
    const double v = groklab::parse_double(fft_rows[i].substr(fft_rows[i].find(',') + 1));
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_LT(hi / lo, 10.0);
  EXPECT_TRUE(fs::exists(dir / "fft.svg"));

  const auto dg = run("diag --checkpoint " + ckpt.string());
  ASSERT_EQ(dg.code, 0) << dg.output;
  const auto diag_rows = lines(slurp(dir / "diag.csv"));
  ASSERT_EQ(diag_rows.size(), 3u);
  EXPECT_EQ(diag_rows[0], "block,lambda_max,residual,iterations,converged,sigma_max");
  for (std::size_t i = 1; i < diag_rows.size(); ++i) {
    std::vector<std::string> f;
    std::stringstream ss(diag_rows[i]);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    ASSERT_EQ(f.size(), 6u);
    if (f[4] == "1") { EXPECT_LT(groklab::parse_double(f[2]), 1e-4) << diag_rows[i]; }
  }

  // Identical inputs give identical reports.
  const std::string before = slurp(dir / "rank.csv") + slurp(dir / "fft.csv");
  ASSERT_EQ(run("rank --checkpoint " + ckpt.string()).code, 0);
  ASSERT_EQ(run("fft --checkpoint " + ckpt.string()).code, 0);
  EXPECT_EQ(slurp(dir / "rank.csv") + slurp(dir / "fft.csv"), before);
}

TEST_F(Cli, BadCheckpointsAreRuntimeFailures) {
  const auto missing = run("rank --checkpoint " + (root_ / "nope.params").string());
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("nope.params"), std::string::npos);

  ASSERT_EQ(run("train --p 7 --embed-dim 8 --epochs 1 " + out()).code, 0);
  const std::string bytes = slurp(root_ / "mul_p7_adam_seed1" / "final.params");
  const auto cut = root_ / "bad.params";
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, 100);
  for (const char* sub : {"rank", "fft", "diag"}) {
    const auto r = run(std::string(sub) + " --checkpoint " + cut.string());
    EXPECT_EQ(r.code, 2) << sub;
    EXPECT_NE(r.output.find("bad.params: offset"), std::string::npos) << r.output;
  }
}
