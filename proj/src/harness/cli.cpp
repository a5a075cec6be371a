#include "ldiff/harness/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ldiff/harness/config.hpp"
#include "ldiff/harness/experiment.hpp"
#include "ldiff/harness/records.hpp"
#include "ldiff/harness/report.hpp"
#include "ldiff/harness/selftest.hpp"
#include "ldiff/io.hpp"
#include "ldiff/metrics.hpp"

namespace ldiff::harness {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  int workers = 0;
  std::optional<std::uint64_t> seed;
  long long n_mc = 0;
  int dim = 0;
  long long n = 0;
};

void AddCommon(CLI::App* cmd, CommonOptions& o, bool needs_config) {
  auto* c = cmd->add_option("--config", o.config, "experiment config file");
  if (needs_config) c->required();
  cmd->add_option("--out", o.out, "output directory (overrides output.dir)");
  cmd->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "run this single seed instead of sweep.seeds");
  cmd->add_option("--n-mc", o.n_mc, "Monte Carlo points per risk estimate")->check(CLI::Range(2LL, 1LL << 40));
}

void AddCell(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--dim", o.dim, "ambient dimension D (default: first of target.ambient_dims)");
  cmd->add_option("--n", o.n, "sample size (default: largest of sweep.n)");
}

ExperimentConfig LoadConfig(const CommonOptions& o) {
  ExperimentConfig config = ExperimentConfig::Load(o.config);
  if (!o.out.empty()) config.output_dir = o.out;
  if (o.seed) config.sweep.seeds = {*o.seed};
  if (o.n_mc > 0) config.metrics.n_mc = o.n_mc;
  if (o.workers > 0) {
    config.train.workers = o.workers;
    config.sweep.workers = o.workers;
  }
  config.Validate();
  return config;
}

struct CellChoice {
  int D;
  long long n;
  std::uint64_t seed;
};

CellChoice ChooseCell(const ExperimentConfig& config, const CommonOptions& o) {
  CellChoice c{config.target.ambient_dims.front(), *std::max_element(config.sweep.n.begin(), config.sweep.n.end()),
               config.sweep.seeds.front()};
  if (o.dim > 0) c.D = o.dim;
  if (o.n > 0) c.n = o.n;
  if (config.target.kind != TargetKind::kSubspace && c.D != config.target.IntrinsicDim()) {
    throw ConfigError("--dim must equal the sum of target.group_dims for independent/mixed targets");
  }
  if (c.D < config.target.IntrinsicDim()) throw ConfigError("--dim is below the intrinsic dimension");
  if (c.n < 2) throw ConfigError("--n must be >= 2");
  return c;
}

void WriteSidecar(const fs::path& path, const std::string& fingerprint, const TrainingSet& set) {
  auto os = io::OpenForWrite(path.string() + ".json");
  os << nlohmann::json{{"fingerprint", fingerprint}, {"t", set.t}, {"n", set.size()}, {"dim", set.dim()}}.dump(2)
     << '\n';
}

std::string ManifestFingerprint(const fs::path& models) {
  std::ifstream is(models / "manifest.json");
  if (!is) throw std::runtime_error("no model set at " + models.string() + " (run `train` first)");
  return nlohmann::json::parse(is).value("fingerprint", std::string());
}

ScoreModelSet LoadModelsFor(const ExperimentConfig& config, const fs::path& models) {
  const std::string fp = ManifestFingerprint(models);
  if (fp != config.ModelFingerprint()) {
    throw ConfigError("model set at " + models.string() + " was trained with model fingerprint " + fp +
                      ", this config has " + config.ModelFingerprint());
  }
  return ScoreModelSet::Load(models);
}

int Generate(const CommonOptions& o, bool all_timesteps, std::ostream& out) {
  const ExperimentConfig config = LoadConfig(o);
  const CellChoice c = ChooseCell(config, o);
  const Cell cell = PrepareCell(config, c.D, c.n, c.seed);
  const fs::path dir = config.output_dir;
  const std::string fp = config.Fingerprint();
  io::WriteMatrixCsv(cell.x0, dir / "x0.csv", "x", fp);
  const TrainingSet eval = EvalDataset(config, cell);
  WriteTrainingSet(eval, dir / "dataset_eval.bin");
  WriteSidecar(dir / "dataset_eval.bin", fp, eval);
  int written = 1;
  if (all_timesteps) {
    const TimeGrid grid = make_time_grid(config.schedule);
    const TrainConfig cfg = PipelineTrainConfig(config, cell);
    for (std::size_t k = 0; k < grid.forward_times.size(); ++k) {
      char name[40];
      std::snprintf(name, sizeof(name), "dataset_%05zu.bin", k);
      const TrainingSet set = TimestepDataset(cell.x0, grid.forward_times[k], cfg.seed, k);
      WriteTrainingSet(set, dir / name);
      WriteSidecar(dir / name, fp, set);
      ++written;
    }
  }
  out << "generate: D=" << c.D << " n=" << c.n << " seed=" << c.seed << ", wrote x0.csv and " << written
      << " dataset(s) to " << dir.string() << "\n";
  return kExitOk;
}

int Train(const CommonOptions& o, std::ostream& out) {
  const ExperimentConfig config = LoadConfig(o);
  const CellChoice c = ChooseCell(config, o);
  const Cell cell = PrepareCell(config, c.D, c.n, c.seed);
  std::vector<TrainingTrace> traces;
  const ScoreModelSet models = TrainPipeline(config, cell, &traces);
  const fs::path dir = config.output_dir;
  models.Save(dir / "models", config.ModelFingerprint());
  auto os = io::OpenForWrite(dir / "traces.jsonl");
  for (std::size_t k = 0; k < traces.size(); ++k) WriteTraceJsonl(traces[k], models.entries()[k].t, os);
  out << "train: D=" << c.D << " n=" << c.n << " seed=" << c.seed << ", " << models.entries().size()
      << " nets written to " << (dir / "models").string() << "\n";
  return kExitOk;
}

int Sample(const CommonOptions& o, const std::string& models_dir, long long n_samples, std::ostream& out) {
  ExperimentConfig config = LoadConfig(o);
  const CellChoice c = ChooseCell(config, o);
  const fs::path dir = config.output_dir;
  const ScoreModelSet models = LoadModelsFor(config, models_dir.empty() ? dir / "models" : fs::path(models_dir));
  const Cell cell = PrepareCell(config, c.D, c.n, c.seed);
  const Index count = n_samples > 0 ? n_samples : config.sweep.n_samples;
  const Matrix samples = DrawSamples(config, ScoreProvider::FromModels(models), cell, count);
  io::WriteMatrixCsv(samples, dir / "samples.csv", "x", config.Fingerprint());
  out << "sample: wrote " << count << " samples to " << (dir / "samples.csv").string() << "\n";
  return kExitOk;
}

int Evaluate(const CommonOptions& o, const std::string& models_dir, const std::string& samples_path,
             std::ostream& out) {
  const ExperimentConfig config = LoadConfig(o);
  const CellChoice c = ChooseCell(config, o);
  const fs::path dir = config.output_dir;
  const ScoreModelSet models = LoadModelsFor(config, models_dir.empty() ? dir / "models" : fs::path(models_dir));
  const Cell cell = PrepareCell(config, c.D, c.n, c.seed);
  const TimeGrid grid = make_time_grid(config.schedule);
  Rng mc = Rng::Stream(c.seed, 0xe7a1);
  const WeightedScoreError table = weighted_score_error(models, cell.oracle, grid, config.metrics.n_mc, mc);
  std::vector<MetricRow> rows;
  for (const auto& r : table.rows) rows.push_back({"score_risk", r.t, r.risk.estimate, r.risk.se, r.risk.n_mc});
  rows.push_back({"weighted_score_error", 0.0, table.total, 0.0, config.metrics.n_mc});

  const fs::path sp = samples_path.empty() ? dir / "samples.csv" : fs::path(samples_path);
  if (fs::exists(sp)) {
    const Matrix samples = io::ReadMatrixCsv(sp);
    if (samples.cols() != c.D) throw ConfigError("samples at " + sp.string() + " have the wrong dimension");
    const SamplerRecord s = EvaluateSamples(config, cell, samples);
    if (std::isfinite(s.residual)) {
      rows.push_back({"subspace_residual", s.zeta, s.residual, s.residual_se, s.n_samples});
      rows.push_back({"subspace_residual_reference", s.zeta, s.residual_reference, 0.0, s.n_samples});
    }
    rows.push_back({"energy_distance", s.zeta, s.energy, 0.0, s.n_samples});
    if (s.permutations > 0) {
      rows.push_back({"energy_null_q95", s.zeta, s.energy_null_q95, 0.0, s.permutations});
      rows.push_back({"energy_p_value", s.zeta, s.energy_p_value, 0.0, s.permutations});
    }
  } else {
    out << "evaluate: no samples at " << sp.string() << "; sample metrics skipped\n";
  }
  WriteMetricsCsv(rows, dir / "metrics.csv", config.Fingerprint());
  out << "evaluate: weighted score error " << table.total << "; wrote " << (dir / "metrics.csv").string() << "\n";
  return kExitOk;
}

int Sweep(const CommonOptions& o, std::ostream& out) {
  const ExperimentConfig config = LoadConfig(o);
  const fs::path dir = config.output_dir;
  RecordSink sink(dir / "records.jsonl");
  {
    auto os = io::OpenForWrite(dir / ("config_" + config.Fingerprint() + ".cfg"));
    os << "# fingerprint=" << config.Fingerprint() << "\n" << config.Canonical();
  }
  const SweepSummary s = RunSweep(config, sink, config.sweep.workers, &out);
  out << "sweep: " << s.ran << " cell(s) run, " << s.skipped << " already recorded; records in "
      << sink.path().string() << "\n";
  return kExitOk;
}

int Report(const CommonOptions& o, const std::string& records_path, std::ostream& out) {
  fs::path dir = o.out;
  if (dir.empty() && !o.config.empty()) dir = ExperimentConfig::Load(o.config).output_dir;
  if (dir.empty()) dir = "runs";
  const fs::path rp = records_path.empty() ? dir / "records.jsonl" : fs::path(records_path);
  const auto records = ReadRecords(rp);
  if (records.empty()) throw std::runtime_error("no records in " + rp.string());
  const ReportOutputs files = WriteReport(records, dir);
  out << "report: " << records.size() << " records -> " << files.summary_csv.string() << ", "
      << files.rates_csv.string() << ", " << files.plot_svg.string() << "\n";
  return kExitOk;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ldiff: score-based diffusion on low-dimensional targets"};
  app.name("ldiff");
  app.require_subcommand(1);

  CommonOptions o;
  bool all_timesteps = false;
  std::string models_dir, samples_path, records_path;
  long long n_samples = 0;

  auto* gen = app.add_subcommand("generate", "write x0 and the noised training sets of one cell");
  AddCommon(gen, o, true);
  AddCell(gen, o);
  gen->add_flag("--all-timesteps", all_timesteps, "also write one training set per grid time");

  auto* train = app.add_subcommand("train", "train one net per grid time and save the model set");
  AddCommon(train, o, true);
  AddCell(train, o);

  auto* sample = app.add_subcommand("sample", "run the reverse sampler with a saved model set");
  AddCommon(sample, o, true);
  AddCell(sample, o);
  sample->add_option("--models", models_dir, "model set directory (default <out>/models)");
  sample->add_option("--n-samples", n_samples, "number of samples (default sweep.n_samples)");

  auto* eval = app.add_subcommand("evaluate", "score-risk table and sample metrics as CSV");
  AddCommon(eval, o, true);
  AddCell(eval, o);
  eval->add_option("--models", models_dir, "model set directory (default <out>/models)");
  eval->add_option("--samples", samples_path, "samples CSV (default <out>/samples.csv)");

  auto* sweep = app.add_subcommand("sweep", "run every (D, n, seed) cell and append records");
  AddCommon(sweep, o, true);

  auto* report = app.add_subcommand("report", "summarize records into CSV tables and an SVG plot");
  AddCommon(report, o, false);
  report->add_option("--records", records_path, "records file (default <out>/records.jsonl)");

  auto* selftest = app.add_subcommand("selftest", "run the built-in consistency checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "ldiff: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  }

  try {
    if (*gen) return Generate(o, all_timesteps, out);
    if (*train) return Train(o, out);
    if (*sample) return Sample(o, models_dir, n_samples, out);
    if (*eval) return Evaluate(o, models_dir, samples_path, out);
    if (*sweep) return Sweep(o, out);
    if (*report) return Report(o, records_path, out);
    if (*selftest) return RunSelftest(out).ok() ? kExitOk : kExitRuntime;
  } catch (const ConfigError& e) {
    err << "ldiff: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ModelError& e) {
    err << "ldiff: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "ldiff: error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace ldiff::harness
