#include "ldiff/harness/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace ldiff::harness {

namespace {

// Stream ids. Target and Monte Carlo draws ignore n so every n of a (seed, D)
// pair shares the same target and the same evaluation points.
enum StreamTag : std::uint64_t {
  kTargetStream = 1,
  kDataStream,
  kEvalNoiseStream,
  kRiskStream,
  kPipelineStream,
  kSamplerStream,
  kFreshStream,
  kPermutationStream,
};

std::uint64_t StreamId(StreamTag tag, int D, long long n = 0) {
  return SplitMix64(SplitMix64(SplitMix64(tag) ^ static_cast<std::uint64_t>(D)) ^ static_cast<std::uint64_t>(n));
}

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

LatentMixture MakeLatent(int dim, const TargetSpec& shape) {
  const int K = shape.components;
  std::vector<GaussianComponent> comps;
  for (int k = 0; k < K; ++k) {
    const double pos = K == 1 ? 0.0 : shape.mode_offset * (2.0 * k / (K - 1) - 1.0);
    comps.push_back({1.0 / K, Vector::Constant(dim, pos), shape.mode_variance * Matrix::Identity(dim, dim)});
  }
  return LatentMixture(dim, std::move(comps));
}

TargetModel BuildTarget(const ExperimentConfig& config, int D, std::uint64_t seed) {
  Rng rng = Rng::Stream(seed, StreamId(kTargetStream, D));
  const TargetSpec& shape = config.target;
  if (shape.kind == TargetKind::kSubspace) {
    return SubspaceModel(random_orthonormal(D, shape.latent_dim, rng), MakeLatent(shape.latent_dim, shape));
  }
  std::vector<LatentMixture> groups;
  for (int g : shape.group_dims) groups.push_back(MakeLatent(g, shape));
  if (shape.kind == TargetKind::kIndependent) return IndependentModel(random_orthonormal(D, D, rng), groups);
  return MixedModel(random_mixing_matrix(D, shape.condition_number, rng), groups);
}

Cell PrepareCell(const ExperimentConfig& config, int D, long long n, std::uint64_t seed) {
  Cell cell{.D = D,
            .d = config.target.IntrinsicDim(),
            .n = n,
            .seed = seed,
            .model = BuildTarget(config, D, seed)};
  Rng data_rng = Rng::Stream(seed, StreamId(kDataStream, D, n));
  const Matrix x0 = sample_x0(cell.model, n, data_rng);

  if (const auto* sub = std::get_if<SubspaceModel>(&cell.model)) {
    const SubspaceModel model = *sub;
    cell.x0 = x0;
    cell.basis = model.U;
    cell.oracle = [model](double t) { return ScoreOracle::ForSubspace(model, t); };
    cell.sample_clean = [model](Index k, Rng& rng) { return sample_x0(model, k, rng); };
  } else if (const auto* ind = std::get_if<IndependentModel>(&cell.model)) {
    const IndependentModel model = *ind;
    cell.x0 = x0;
    cell.oracle = [model](double t) { return ScoreOracle::ForIndependent(model, t); };
    cell.sample_clean = [model](Index k, Rng& rng) { return sample_x0(model, k, rng); };
  } else {
    const MixedModel& mixed = std::get<MixedModel>(cell.model);
    const Matrix W = estimate_whitener(x0);
    cell.x0 = x0 * W;  // W is symmetric: rows become W x
    cell.whitening_error = (W * mixed.Covariance() * W - Matrix::Identity(D, D)).norm();
    // Scores are taken against the exactly whitened model; the gap between
    // W_hat and the population whitener is part of what the cell measures.
    const IndependentModel model = WhitenedIndependentModel(mixed);
    cell.oracle = [model](double t) { return ScoreOracle::ForIndependent(model, t); };
    cell.sample_clean = [model](Index k, Rng& rng) { return sample_x0(model, k, rng); };
  }
  return cell;
}

TrainingSet EvalDataset(const ExperimentConfig& config, const Cell& cell) {
  Rng noise = Rng::Stream(cell.seed, StreamId(kEvalNoiseStream, cell.D, cell.n));
  return forward_corrupt(cell.x0, config.sweep.eval_t, noise);
}

TrainConfig PipelineTrainConfig(const ExperimentConfig& config, const Cell& cell) {
  TrainConfig cfg = config.CellTrain(cell.D, cell.n, cell.seed, config.pipeline_steps);
  cfg.seed = SplitMix64(cell.seed ^ StreamId(kPipelineStream, cell.D, cell.n));
  return cfg;
}

TrainResult FitEvalTime(const ExperimentConfig& config, const Cell& cell) {
  const double t = config.sweep.eval_t;
  const TrainingSet data = EvalDataset(config, cell);
  const TrainConfig cfg = config.CellTrain(cell.D, cell.n, cell.seed, config.train_steps);
  return train_one_timestep(data, cfg, RadiusFor(cfg, t, cell.n));
}

ScoreModelSet TrainPipeline(const ExperimentConfig& config, const Cell& cell, std::vector<TrainingTrace>* traces) {
  return train_all_timesteps(make_time_grid(config.schedule), cell.x0, PipelineTrainConfig(config, cell), traces);
}

Matrix DrawSamples(const ExperimentConfig& config, const ScoreProvider& provider, const Cell& cell,
                   Index n_samples) {
  const TimeGrid grid = make_time_grid(config.schedule);
  Rng rng = Rng::Stream(cell.seed, StreamId(kSamplerStream, cell.D, cell.n));
  return run_reverse(provider, grid, n_samples, cell.D, rng);
}

SamplerRecord EvaluateSamples(const ExperimentConfig& config, const Cell& cell, const Matrix& samples) {
  SamplerRecord out;
  const double zeta = config.schedule.zeta;
  const double s2 = std::pow(ou_coefficients(zeta).sigma, 2);
  out.n_samples = samples.rows();
  out.zeta = zeta;
  out.residual = out.residual_se = out.residual_reference = std::numeric_limits<double>::quiet_NaN();
  if (cell.basis) {
    const MeanSe r = subspace_residual(samples, *cell.basis);
    out.residual = r.mean;
    out.residual_se = r.se;
    out.residual_reference = s2 * (cell.D - cell.d);
  }
  Rng fresh_rng = Rng::Stream(cell.seed, StreamId(kFreshStream, cell.D, cell.n));
  const Matrix fresh = forward_corrupt(cell.sample_clean(samples.rows(), fresh_rng), zeta, fresh_rng).xt;
  Rng perm_rng = Rng::Stream(cell.seed, StreamId(kPermutationStream, cell.D, cell.n));
  out.permutations = config.metrics.permutations;
  if (out.permutations > 0) {
    const PermutationTest test =
        energy_permutation_test(samples, fresh, out.permutations, perm_rng, config.metrics.energy_cap);
    out.energy = test.statistic;
    out.energy_null_q95 = test.null_q95;
    out.energy_p_value = test.p_value;
  } else {
    out.energy = energy_distance(samples, fresh, perm_rng, config.metrics.energy_cap);
    out.energy_null_q95 = out.energy_p_value = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

ExperimentRecord RunCell(const ExperimentConfig& config, int D, long long n, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const Cell cell = PrepareCell(config, D, n, seed);

  ExperimentRecord rec;
  rec.fingerprint = config.Fingerprint();
  rec.kind = TargetKindName(config.target.kind);
  rec.seed = seed;
  rec.n = n;
  rec.D = D;
  rec.d = cell.d;
  rec.eval_t = config.sweep.eval_t;
  rec.whitening_error = cell.whitening_error;

  const TrainResult fit = FitEvalTime(config, cell);
  Rng mc = Rng::Stream(seed, StreamId(kRiskStream, D));
  const RiskEstimate risk =
      score_risk(NetScore(fit.net), cell.oracle(rec.eval_t), rec.eval_t, config.metrics.n_mc, mc);
  rec.timesteps.push_back({rec.eval_t, fit.final_loss, risk.estimate, risk.se, fit.radius, path_norm(fit.net)});

  if (config.SamplesAt(n)) {
    const ScoreModelSet models = TrainPipeline(config, cell);
    const ScoreProvider provider = ScoreProvider::FromModels(models);
    const Matrix samples = DrawSamples(config, provider, cell, config.sweep.n_samples);
    SamplerRecord sr = EvaluateSamples(config, cell, samples);
    sr.weighted_score_error = std::numeric_limits<double>::quiet_NaN();
    if (config.metrics.weighted_error) {
      const TimeGrid grid = make_time_grid(config.schedule);
      Rng wmc = Rng::Stream(seed, StreamId(kRiskStream, D, n));
      const WeightedScoreError table = weighted_score_error(models, cell.oracle, grid, config.metrics.n_mc, wmc);
      sr.weighted_score_error = table.total;
      for (const auto& row : table.rows) {
        const auto* entry = models.Find(row.t);
        rec.timesteps.push_back({row.t, entry->final_loss, row.risk.estimate, row.risk.se, entry->radius,
                                 path_norm(entry->net)});
      }
    }
    rec.sampler = sr;
  }
  rec.wall_time = Seconds(start);
  return rec;
}

SweepSummary RunSweep(const ExperimentConfig& config, RecordSink& sink, int workers, std::ostream* log) {
  struct Job {
    int D;
    long long n;
    std::uint64_t seed;
  };
  const std::string fp = config.Fingerprint();
  std::vector<Job> jobs;
  SweepSummary summary;
  for (int D : config.target.ambient_dims) {
    for (long long n : config.sweep.n) {
      for (std::uint64_t seed : config.sweep.seeds) {
        if (sink.Contains({fp, seed, n, D})) {
          ++summary.skipped;
        } else {
          jobs.push_back({D, n, seed});
        }
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<int> ran{0};
  std::mutex log_mu;
  std::exception_ptr failure;
  std::string failed_cell;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      {
        std::lock_guard lock(log_mu);
        if (failure) return;
      }
      const Job& job = jobs[i];
      const std::string label = "D=" + std::to_string(job.D) + " n=" + std::to_string(job.n) +
                                " seed=" + std::to_string(job.seed);
      try {
        const ExperimentRecord rec = RunCell(config, job.D, job.n, job.seed);
        sink.Append(rec);
        ++ran;
        if (log) {
          std::lock_guard lock(log_mu);
          *log << "[" << ran.load() << "/" << jobs.size() << "] " << label << " risk=" << rec.EvalRisk()
               << " (" << rec.wall_time << " s)\n";
        }
      } catch (...) {
        std::lock_guard lock(log_mu);
        if (!failure) {
          failure = std::current_exception();
          failed_cell = label;
        }
      }
    }
  };
  const int pool = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (pool == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int w = 0; w < pool; ++w) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (failure) {
    try {
      std::rethrow_exception(failure);
    } catch (const ConfigError& e) {
      throw ConfigError("cell " + failed_cell + ": " + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error("cell " + failed_cell + ": " + e.what());
    }
  }
  summary.ran = ran.load();
  return summary;
}

}  // namespace ldiff::harness
