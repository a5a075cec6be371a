#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>

#include "ldiff/dsm_train.hpp"
#include "ldiff/harness/config.hpp"
#include "ldiff/harness/records.hpp"
#include "ldiff/metrics.hpp"
#include "ldiff/sampler.hpp"
#include "ldiff/targets.hpp"

namespace ldiff::harness {

/// K equal-weight components N(mu_k, v I) with the means evenly spaced on the
/// diagonal segment [-offset, offset] (1, ..., 1).
LatentMixture MakeLatent(int dim, const TargetSpec& shape);

/// Target for ambient dimension D; depends only on (config, D, seed).
TargetModel BuildTarget(const ExperimentConfig& config, int D, std::uint64_t seed);

/// Everything a cell needs, expressed in training coordinates. For mixed
/// targets those are the whitened coordinates x -> W_hat x, W_hat estimated
/// from the cell's own x0.
struct Cell {
  int D = 0;
  int d = 0;
  long long n = 0;
  std::uint64_t seed = 0;
  TargetModel model;
  Matrix x0{};
  OracleFamily oracle{};
  std::optional<Matrix> basis{};  // latent frame of subspace targets
  std::function<Matrix(Index, Rng&)> sample_clean{};
  std::optional<double> whitening_error{};  // ||W_hat Cov W_hat - I||_F
};

/// x0 depends on (config, D, n, seed); the target only on (config, D, seed).
Cell PrepareCell(const ExperimentConfig& config, int D, long long n, std::uint64_t seed);

/// Noised pairs used by the eval-time fit.
TrainingSet EvalDataset(const ExperimentConfig& config, const Cell& cell);

/// Training config of the per-grid-time nets; its seed keys the per-timestep
/// noise (see TimestepDataset).
TrainConfig PipelineTrainConfig(const ExperimentConfig& config, const Cell& cell);

/// Single fit at config.sweep.eval_t under the train.steps budget.
TrainResult FitEvalTime(const ExperimentConfig& config, const Cell& cell);

/// One net per grid forward time under the train.pipeline_steps budget.
ScoreModelSet TrainPipeline(const ExperimentConfig& config, const Cell& cell,
                            std::vector<TrainingTrace>* traces = nullptr);

/// Reverse sampler driven by `provider` with the cell's sampling stream.
Matrix DrawSamples(const ExperimentConfig& config, const ScoreProvider& provider, const Cell& cell,
                   Index n_samples);

/// Subspace residual and energy permutation test against fresh p_zeta draws.
SamplerRecord EvaluateSamples(const ExperimentConfig& config, const Cell& cell, const Matrix& samples);

/// Runs one (D, n, seed) cell: the eval-time fit and, when configured for
/// this n, the full sampling pipeline.
ExperimentRecord RunCell(const ExperimentConfig& config, int D, long long n, std::uint64_t seed);

struct SweepSummary {
  int ran = 0;
  int skipped = 0;  // already present in the sink
};

/// Every (D, n, seed) cell of the grid on a pool of `workers` threads. Cells
/// already recorded in `sink` are skipped. Progress lines go to `log` when
/// non-null.
SweepSummary RunSweep(const ExperimentConfig& config, RecordSink& sink, int workers, std::ostream* log);

}  // namespace ldiff::harness
