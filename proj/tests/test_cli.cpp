#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "drgo_cli.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "drgo");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = drgo::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

/// 30 users x 20 items, 8 interactions per user with increasing timestamps, a
/// few ratings below the positive threshold.
fs::path fixture(const fs::path& dir) {
  const auto p = dir / "ratings.tsv";
  std::ofstream out(p);
  std::mt19937_64 gen(5);
  for (int u = 0; u < 30; ++u)
    for (int n = 0; n < 8; ++n) {
      const int item = static_cast<int>((u * 3 + n * 7 + gen() % 3) % 20);
      const int rating = gen() % 10 == 0 ? 2 : 5;
      out << "u" << u << '\t' << "i" << item << '\t' << rating << '\t' << 1000 + n * 10 + u << '\n';
    }
  return p;
}

std::vector<std::string> tiny_train_flags() {
  return {"--embed-dim", "8", "--epochs", "3", "--n-clusters", "2", "--diffusion-steps", "20",
          "--t-start", "10", "--batch-size", "64", "--top-pct", "25"};
}

}  // namespace

TEST(Cli, PrepareTemporalWritesSplitAndManifest) {
  const auto dir = testutil::temp_dir("cli_prepare");
  const auto r = run_cli({"prepare", "--input", fixture(dir).string(), "--split", "temporal", "--min-user-degree", "3",
                          "--min-item-degree", "2", "--out", (dir / "split").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"train.tsv", "valid.tsv", "test_iid.tsv", "test_ood.tsv", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir / "split" / f)) << f;
  const auto m = read_json(dir / "split" / "manifest.json");
  EXPECT_EQ(m.at("kind"), "temporal");
  EXPECT_EQ(m.at("subcommand"), "prepare");
  EXPECT_GT(m.at("counts").at("test_ood").get<int>(), 0);
}

TEST(Cli, TrainTwiceWithSameSeedIsIdentical) {
  const auto dir = testutil::temp_dir("cli_train");
  ASSERT_EQ(run_cli({"synth", "--users", "40", "--items", "30", "--min-degree", "4", "--mean-degree", "6", "--seed", "2",
                     "--out", (dir / "split").string()})
                .code,
            0);
  for (const char* run : {"a", "b"}) {
    auto args = std::vector<std::string>{"train", "--data", (dir / "split").string(), "--seed", "7", "--out",
                                         (dir / run).string()};
    for (auto& f : tiny_train_flags()) args.push_back(f);
    const auto r = run_cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(dir / "a" / "history.csv"), slurp(dir / "b" / "history.csv"));
  EXPECT_EQ(slurp(dir / "a" / "weights.csv"), slurp(dir / "b" / "weights.csv"));
  const auto m = read_json(dir / "a" / "manifest.json");
  EXPECT_EQ(m.at("seed"), 7);
  EXPECT_EQ(m.at("config").at("embed_dim"), 8);

  const auto e = run_cli({"evaluate", "--data", (dir / "split").string(), "--model", (dir / "a" / "model.ckpt").string(),
                          "--k", "5,20", "--out", (dir / "eval").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto rep = read_json(dir / "eval" / "report.json");
  EXPECT_TRUE(rep.contains("test_ood"));
  EXPECT_EQ(read_json(dir / "eval" / "manifest.json").at("seed"), 7);
}

TEST(Cli, SweepNoiseHasFourRatioRowsPerMethod) {
  const auto dir = testutil::temp_dir("cli_sweep");
  ASSERT_EQ(run_cli({"synth", "--users", "40", "--items", "30", "--min-degree", "4", "--mean-degree", "6", "--out",
                     (dir / "split").string()})
                .code,
            0);
  auto args = std::vector<std::string>{"sweep-noise", "--data", (dir / "split").string(), "--ratios",
                                       "0.05,0.10,0.15,0.25", "--out", (dir / "sweep").string()};
  for (auto& f : tiny_train_flags()) args.push_back(f);
  const auto r = run_cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_json(dir / "sweep" / "sweep.json");
  std::map<std::string, int> per_method;
  for (const auto& row : rows) ++per_method[row.at("method").get<std::string>()];
  EXPECT_EQ(per_method, (std::map<std::string, int>{{"drgo", 4}, {"erm", 4}, {"kl_dro", 4}}));
  EXPECT_TRUE(fs::exists(dir / "sweep" / "manifest.json"));
}

TEST(Cli, DiagnoseWritesBothTables) {
  const auto dir = testutil::temp_dir("cli_diag");
  const auto r = run_cli({"diagnose", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto blow = slurp(dir / "kl_blowup.csv");
  EXPECT_EQ(std::count(blow.begin(), blow.end(), '\n'), 51);
  EXPECT_EQ(blow.find(",0,"), std::string::npos);  // every row has kl_infinite = 1
  EXPECT_TRUE(fs::exists(dir / "variance.csv"));
}

TEST(Cli, OutputRootFromEnvironment) {
  const auto dir = testutil::temp_dir("cli_env");
  ::setenv("DRGO_OUTPUT_ROOT", dir.c_str(), 1);
  const auto r = run_cli({"diagnose", "--pairs", "3"});
  ::unsetenv("DRGO_OUTPUT_ROOT");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "diagnose" / "manifest.json"));
}

TEST(Cli, ExitCodes) {
  const auto dir = testutil::temp_dir("cli_err");
  auto check = [](const Result& r, int code, const char* kind) {
    EXPECT_EQ(r.code, code) << r.err;
    const auto rec = nlohmann::json::parse(r.err.substr(r.err.rfind('{')));
    EXPECT_EQ(rec.at("error"), kind);
    EXPECT_EQ(rec.at("exit_code"), code);
  };
  check(run_cli({"diagnose", "--bogus"}), 2, "usage");
  check(run_cli({"frobnicate"}), 2, "usage");
  ASSERT_EQ(run_cli({"synth", "--users", "40", "--items", "30", "--min-degree", "4", "--mean-degree", "6", "--out",
                     (dir / "split").string()})
                .code,
            0);
  check(run_cli({"train", "--data", (dir / "split").string(), "--set", "no_such_key=1", "--out", (dir / "t").string()}),
        2, "usage");
  check(run_cli({"train", "--data", (dir / "split").string(), "--embed-dim", "abc", "--out", (dir / "t").string()}), 2,
        "usage");

  const auto bad = dir / "bad.tsv";
  std::ofstream(bad) << "u1\ti1\tfive\t10\n";
  check(run_cli({"prepare", "--input", bad.string(), "--out", (dir / "p").string()}), 3, "data");

  fs::create_directories(dir / "empty");
  check(run_cli({"train", "--data", (dir / "empty").string(), "--out", (dir / "t2").string()}), 3, "data");

  check(run_cli({"train", "--data", (dir / "split").string(), "--lr", "1e300", "--weight-decay", "0", "--epochs", "2",
                 "--embed-dim", "8", "--out", (dir / "t3").string()}),
        4, "divergence");
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}
