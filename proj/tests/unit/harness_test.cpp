#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ldiff/harness/cli.hpp"
#include "ldiff/harness/config.hpp"
#include "ldiff/harness/experiment.hpp"
#include "ldiff/harness/records.hpp"
#include "ldiff/harness/report.hpp"

namespace ldiff::harness {
namespace {

namespace fs = std::filesystem;

const fs::path kConfigs = fs::path(LDIFF_SOURCE_DIR) / "configs";

fs::path ScratchDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ldiff_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string ReadFile(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int Cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "ldiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

TEST(ConfigTest, DefaultsMatchSweepGrid) {
  const ExperimentConfig c;
  EXPECT_EQ(c.target.latent_dim, 2);
  EXPECT_EQ(c.target.ambient_dims, (std::vector<int>{4, 16}));
  EXPECT_EQ(c.sweep.n, (std::vector<long long>{500, 2000, 8000}));
  EXPECT_EQ(c.sweep.seeds.size(), 3u);
  EXPECT_EQ(c.train.width, 512);
  EXPECT_NO_THROW(c.Validate());
}

TEST(ConfigTest, ParseSectionsAndDottedKeys) {
  const ExperimentConfig c = ExperimentConfig::Parse(R"(
# comment
schedule.T = 4
[target]
kind = independent
group_dims = 1, 2
ambient_dims = 3
[sweep]
n = 100, 200
seeds = 5
)");
  EXPECT_EQ(c.target.kind, TargetKind::kIndependent);
  EXPECT_EQ(c.target.group_dims, (std::vector<int>{1, 2}));
  EXPECT_EQ(c.target.IntrinsicDim(), 3);
  EXPECT_EQ(c.schedule.T, 4.0);
  EXPECT_EQ(c.sweep.n, (std::vector<long long>{100, 200}));
  EXPECT_EQ(c.sweep.seeds, (std::vector<std::uint64_t>{5}));
}

TEST(ConfigTest, CanonicalRoundTripAndFingerprint) {
  for (const char* name : {"subspace_d2.cfg", "independent_d3.cfg", "mixed_d4.cfg", "smoke.cfg"}) {
    const ExperimentConfig c = ExperimentConfig::Load(kConfigs / name);
    const ExperimentConfig back = ExperimentConfig::Parse(c.Canonical());
    EXPECT_EQ(back.Canonical(), c.Canonical()) << name;
    EXPECT_EQ(back.Fingerprint(), c.Fingerprint()) << name;
    EXPECT_EQ(c.Fingerprint().size(), 16u);
  }
  ExperimentConfig a, b;
  b.schedule.N = 40;
  EXPECT_NE(a.Fingerprint(), b.Fingerprint());
  // Seeds, worker counts and the output directory do not change any cell.
  b = a;
  b.sweep.seeds = {9};
  b.sweep.workers = 4;
  b.output_dir = "elsewhere";
  EXPECT_EQ(a.Fingerprint(), b.Fingerprint());
  EXPECT_NE(a.Canonical(), b.Canonical());
  // Metric settings change records but not trained nets.
  b = a;
  b.metrics.n_mc = 17;
  EXPECT_NE(a.Fingerprint(), b.Fingerprint());
  EXPECT_EQ(a.ModelFingerprint(), b.ModelFingerprint());
  b.train.width = 8;
  EXPECT_NE(a.ModelFingerprint(), b.ModelFingerprint());
}

TEST(ConfigTest, Errors) {
  EXPECT_THROW(ExperimentConfig::Parse("[target]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::Parse("[target]\nlatent_dim = two\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::Parse("[nope]\nx = 1\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::Parse("just words\n"), ConfigError);
  try {
    ExperimentConfig::Parse("\n\n[train]\nwidht = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos);
  }
  ExperimentConfig c;
  c.schedule.N = 3;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = ExperimentConfig();
  c.target.kind = TargetKind::kIndependent;
  c.target.group_dims = {1, 1};
  c.target.ambient_dims = {3};
  EXPECT_THROW(c.Validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::Load("/nonexistent/x.cfg"), ConfigError);
  EXPECT_THROW(ParseInteger("-3", "x"), ConfigError);
  EXPECT_EQ(ParseInteger("-3", "x", true), -3);
}

TEST(ConfigTest, SeedOverride) {
  ExperimentConfig c;
  setenv("SEED_OVERRIDE", "42", 1);
  ApplySeedOverride(c);
  EXPECT_EQ(c.sweep.seeds, (std::vector<std::uint64_t>{42}));
  setenv("SEED_OVERRIDE", "x", 1);
  EXPECT_THROW(ApplySeedOverride(c), ConfigError);
  unsetenv("SEED_OVERRIDE");
  ExperimentConfig d;
  ApplySeedOverride(d);
  EXPECT_EQ(d.sweep.seeds.size(), 3u);
}

TEST(ConfigTest, CellTrainUsesFixedStepBudget) {
  ExperimentConfig c;
  c.train.batch_size = 256;
  const TrainConfig small = c.CellTrain(4, 500, 1, 3000);
  const TrainConfig large = c.CellTrain(4, 8000, 1, 3000);
  EXPECT_EQ(small.epochs, 1500);  // 2 batches per epoch
  EXPECT_EQ(large.epochs, 94);    // 32 batches per epoch
  EXPECT_EQ(small.radius_schedule.ambient_dim, 4);
  EXPECT_EQ(small.radius_schedule.d_latent, 2);
  EXPECT_EQ(small.radius_schedule.r_bar, c.r_bar);
}

ExperimentRecord MakeRecord(long long n, std::uint64_t seed, int D, double risk) {
  ExperimentRecord r;
  r.fingerprint = "0123456789abcdef";
  r.kind = "subspace";
  r.seed = seed;
  r.n = n;
  r.D = D;
  r.d = 2;
  r.eval_t = 0.5;
  r.timesteps.push_back({0.5, 1.0, risk, 0.01, 10.0, 3.0});
  return r;
}

TEST(RecordsTest, JsonRoundTrip) {
  ExperimentRecord r = MakeRecord(2000, 3, 16, 0.1 + 1e-17);
  r.timesteps.push_back({1.0 / 3.0, 2.0, std::nan(""), 0.0, 1.0, 0.5});
  r.sampler = SamplerRecord{4000, 0.05, 0.2, 0.01, 0.19, 1e-3, 2e-3, 0.4, 200, 0.7};
  r.whitening_error = 0.0123;
  r.wall_time = 1.5;
  const std::string line = ToJsonLine(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const ExperimentRecord back = FromJsonLine(line);
  EXPECT_EQ(ToJsonLine(back), line);
  EXPECT_EQ(back.timesteps[1].t, 1.0 / 3.0);
  EXPECT_TRUE(std::isnan(back.timesteps[1].risk));
  ASSERT_TRUE(back.sampler.has_value());
  EXPECT_EQ(back.sampler->permutations, 200);
  EXPECT_EQ(back.EvalRisk(), r.EvalRisk());
  EXPECT_THROW(FromJsonLine("{not json"), std::runtime_error);
}

TEST(RecordsTest, SinkRefusesDuplicatesAndResumes) {
  const fs::path dir = ScratchDir("sink");
  const fs::path path = dir / "records.jsonl";
  {
    RecordSink sink(path);
    EXPECT_TRUE(sink.Append(MakeRecord(500, 1, 4, 0.1)));
    EXPECT_FALSE(sink.Append(MakeRecord(500, 1, 4, 0.2)));
    EXPECT_TRUE(sink.Append(MakeRecord(500, 2, 4, 0.1)));
  }
  RecordSink reopened(path);
  EXPECT_TRUE(reopened.Contains(MakeRecord(500, 1, 4, 0.0).key()));
  EXPECT_FALSE(reopened.Append(MakeRecord(500, 2, 4, 0.3)));
  EXPECT_TRUE(reopened.Append(MakeRecord(500, 2, 16, 0.3)));
  const auto all = ReadRecords(path);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].EvalRisk(), 0.1);
}

std::vector<ExperimentRecord> Planted(const std::function<double(double)>& risk, int D, double spread = 0.0) {
  std::vector<ExperimentRecord> out;
  for (long long n : {500, 2000, 8000, 32000}) {
    for (std::uint64_t s : {1, 2, 3}) {
      // Multiplicative seed noise with median 1 at every n.
      const double jitter = s == 1 ? 1.0 : (s == 2 ? 1.0 + spread : 1.0 - spread);
      out.push_back(MakeRecord(n, s, D, risk(static_cast<double>(n)) * jitter));
    }
  }
  return out;
}

TEST(RateFitTest, PlantedExponents) {
  const RateFit inv = fit_rate_exponent(Planted([](double n) { return 3.0 / n; }, 4), 4, 2);
  EXPECT_NEAR(inv.slope, -1.0, 0.01);
  EXPECT_LE(inv.se, 0.01);
  EXPECT_TRUE(inv.power_law_regime);
  EXPECT_EQ(inv.n.size(), 4u);

  // Seed noise leaves the median fit alone and shows up in the bootstrap SE.
  const RateFit noisy = fit_rate_exponent(Planted([](double n) { return 3.0 / n; }, 4, 0.1), 4, 2);
  EXPECT_NEAR(noisy.slope, -1.0, 0.01);
  EXPECT_GT(noisy.se, 0.0);

  const RateFit theory = fit_rate_exponent(Planted([](double n) { return 0.7 * std::pow(n, -2.0 / 7.0); }, 4), 4, 2);
  EXPECT_NEAR(theory.slope, -2.0 / 7.0, 0.01);
  EXPECT_NEAR(theory.slope, -0.2857, 0.01);

  const RateFit flat = fit_rate_exponent(Planted([](double) { return 0.4; }, 4), 4, 2);
  EXPECT_NEAR(flat.slope, 0.0, 1e-12);
  EXPECT_FALSE(flat.power_law_regime);
}

TEST(RateFitTest, InsufficientGrid) {
  auto records = Planted([](double n) { return 1.0 / n; }, 4);
  EXPECT_THROW(fit_rate_exponent(records, 16, 2), DomainError);
  std::vector<ExperimentRecord> two_n;
  for (const auto& r : records) {
    if (r.n <= 2000) two_n.push_back(r);
  }
  EXPECT_THROW(fit_rate_exponent(two_n, 4, 2), DomainError);
  std::vector<ExperimentRecord> two_seeds;
  for (const auto& r : records) {
    if (r.seed != 3) two_seeds.push_back(r);
  }
  EXPECT_THROW(fit_rate_exponent(two_seeds, 4, 2), DomainError);
  EXPECT_THROW(RecordField(records[0], "nonsense"), ConfigError);
}

TEST(ReportTest, WritesFingerprintedOutputs) {
  const fs::path dir = ScratchDir("report");
  auto records = Planted([](double n) { return 1.0 / std::sqrt(n); }, 4);
  const auto more = Planted([](double n) { return 4.0 / std::sqrt(n); }, 16);
  records.insert(records.end(), more.begin(), more.end());
  const ReportOutputs files = WriteReport(records, dir);
  for (const auto& p : {files.summary_csv, files.rates_csv, files.plot_svg}) {
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_NE(ReadFile(p).find("fingerprint=0123456789abcdef"), std::string::npos) << p;
  }
  const std::string svg = ReadFile(files.plot_svg);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  const std::string rates = ReadFile(files.rates_csv);
  EXPECT_NE(rates.find("-0.5"), std::string::npos);
}

TEST(CliTest, ExitCodes) {
  std::string out, err;
  EXPECT_EQ(Cli({}, &out, &err), kExitUsage);
  EXPECT_EQ(Cli({"frobnicate"}), kExitUsage);
  EXPECT_EQ(Cli({"sweep", "--bogus-flag"}), kExitUsage);
  EXPECT_EQ(Cli({"sweep", "--workers", "0", "--config", (kConfigs / "smoke.cfg").string()}), kExitUsage);
  EXPECT_EQ(Cli({"--help"}), kExitOk);

  const fs::path dir = ScratchDir("cli_errors");
  std::ofstream(dir / "bad.cfg") << "[train]\nwidth = -4\n";
  EXPECT_EQ(Cli({"sweep", "--config", (dir / "bad.cfg").string(), "--out", dir.string()}, &out, &err), kExitConfig);
  EXPECT_NE(err.find("config error"), std::string::npos);
  std::ofstream(dir / "unknown.cfg") << "[train]\nwidht = 4\n";
  EXPECT_EQ(Cli({"sweep", "--config", (dir / "unknown.cfg").string()}), kExitConfig);
  EXPECT_EQ(Cli({"sweep", "--config", (dir / "missing.cfg").string()}), kExitConfig);
  // No records to report on is a runtime failure.
  EXPECT_EQ(Cli({"report", "--out", dir.string()}, &out, &err), kExitRuntime);
}

TEST(CliTest, SelftestBinary) {
  const std::string cmd = std::string(LDIFF_CLI_PATH) + " selftest > " +
                          (fs::temp_directory_path() / "ldiff_selftest.txt").string();
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  const std::string text = ReadFile(fs::temp_directory_path() / "ldiff_selftest.txt");
  EXPECT_NE(text.find("selftest: 5/5 checks passed"), std::string::npos) << text;
}

TEST(CliTest, SingleCellPipeline) {
  const fs::path dir = ScratchDir("cell");
  const std::string cfg = (kConfigs / "smoke.cfg").string();
  const std::vector<std::string> common{"--config", cfg, "--out", dir.string(), "--seed", "2", "--n", "200"};
  auto with = [&](std::vector<std::string> head, std::vector<std::string> tail = {}) {
    head.insert(head.end(), common.begin(), common.end());
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  std::string out, err;
  ASSERT_EQ(Cli(with({"generate"}, {"--all-timesteps"}), &out, &err), kExitOk) << err;
  EXPECT_TRUE(fs::exists(dir / "x0.csv"));
  EXPECT_TRUE(fs::exists(dir / "dataset_eval.bin"));
  ASSERT_EQ(Cli(with({"train"}), &out, &err), kExitOk) << err;
  EXPECT_TRUE(fs::exists(dir / "models" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "traces.jsonl"));
  ASSERT_EQ(Cli(with({"sample"}, {"--n-samples", "200"}), &out, &err), kExitOk) << err;
  EXPECT_TRUE(fs::exists(dir / "samples.csv"));
  ASSERT_EQ(Cli(with({"evaluate"}, {"--n-mc", "200"}), &out, &err), kExitOk) << err;
  const std::string metrics = ReadFile(dir / "metrics.csv");
  EXPECT_EQ(metrics.rfind("# fingerprint=", 0), 0u);
  EXPECT_NE(metrics.find("weighted_score_error"), std::string::npos);
  EXPECT_NE(metrics.find("subspace_residual"), std::string::npos);

  // Models trained under one config cannot be sampled under another.
  std::ofstream(dir / "other.cfg") << ReadFile(cfg) << "\n[schedule]\nzeta = 0.2\n";
  EXPECT_EQ(Cli({"sample", "--config", (dir / "other.cfg").string(), "--out", dir.string(), "--n", "200"}),
            kExitConfig);
}

TEST(CliTest, SmokeSweepCardinalityDeterminismAndResume) {
  const std::string cfg = (kConfigs / "smoke.cfg").string();
  const ExperimentConfig config = ExperimentConfig::Load(cfg);
  const fs::path a = ScratchDir("sweep_a"), b = ScratchDir("sweep_b");
  std::string out, err;
  ASSERT_EQ(Cli({"sweep", "--config", cfg, "--out", a.string()}, &out, &err), kExitOk) << err;
  ASSERT_EQ(Cli({"sweep", "--config", cfg, "--out", b.string(), "--workers", "2"}, &out, &err), kExitOk) << err;

  const auto ra = ReadRecords(a / "records.jsonl");
  const auto rb = ReadRecords(b / "records.jsonl");
  const size_t cells = config.target.ambient_dims.size() * config.sweep.n.size() * config.sweep.seeds.size();
  ASSERT_EQ(ra.size(), cells);
  ASSERT_EQ(rb.size(), cells);
  std::set<ExperimentRecord::Key> keys;
  for (const auto& r : ra) keys.insert(r.key());
  EXPECT_EQ(keys.size(), cells);

  // Identical results regardless of worker count or completion order.
  std::map<ExperimentRecord::Key, std::string> by_key;
  for (auto r : ra) {
    r.wall_time = 0.0;
    by_key[r.key()] = ToJsonLine(r);
  }
  for (auto r : rb) {
    r.wall_time = 0.0;
    EXPECT_EQ(ToJsonLine(r), by_key[r.key()]);
  }
  // Pipeline cells at the largest n carry sampler metrics.
  for (const auto& r : ra) EXPECT_EQ(r.sampler.has_value(), r.n == 400) << r.n;
  // Coarse sign of learning: more data, lower median risk.
  const RateFit fit = fit_rate_exponent(ra, 3, 1);
  EXPECT_LT(fit.median.back(), fit.median.front());
  EXPECT_LT(fit.slope, 0.0);

  // Rerunning appends nothing.
  ASSERT_EQ(Cli({"sweep", "--config", cfg, "--out", a.string()}, &out, &err), kExitOk);
  EXPECT_NE(out.find("0 cell(s) run"), std::string::npos) << out;
  EXPECT_EQ(ReadRecords(a / "records.jsonl").size(), cells);

  ASSERT_EQ(Cli({"report", "--out", a.string()}, &out, &err), kExitOk) << err;
  EXPECT_TRUE(fs::exists(a / "summary.csv"));
  EXPECT_TRUE(fs::exists(a / "rates.csv"));
  EXPECT_TRUE(fs::exists(a / "risk_vs_n.svg"));
  EXPECT_TRUE(fs::exists(a / ("config_" + config.Fingerprint() + ".cfg")));
}

TEST(CliTest, SeedOverrideRunsOneSeed) {
  const fs::path dir = ScratchDir("override");
  setenv("SEED_OVERRIDE", "7", 1);
  const int rc = Cli({"sweep", "--config", (kConfigs / "smoke.cfg").string(), "--out", dir.string()});
  unsetenv("SEED_OVERRIDE");
  ASSERT_EQ(rc, kExitOk);
  const auto records = ReadRecords(dir / "records.jsonl");
  ASSERT_EQ(records.size(), 3u);
  for (const auto& r : records) EXPECT_EQ(r.seed, 7u);
}

}  // namespace
}  // namespace ldiff::harness
