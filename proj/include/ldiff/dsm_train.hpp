#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ldiff/common.hpp"
#include "ldiff/oracle.hpp"
#include "ldiff/schedule.hpp"
#include "ldiff/shallow_net.hpp"
#include "ldiff/targets.hpp"

namespace ldiff {

enum class StepSchedule { kConstant, kCosine };
enum class Optimizer { kProjectedGd, kProjectedAdam };
enum class RadiusMode { kFixed, kSchedule };

struct TrainConfig {
  int width = 512;
  int epochs = 60;
  int batch_size = 256;  // 0 means full batch
  double step_size = 1e-2;
  StepSchedule step_schedule = StepSchedule::kConstant;
  Optimizer optimizer = Optimizer::kProjectedAdam;
  RadiusMode radius_mode = RadiusMode::kSchedule;
  double fixed_radius = 100.0;
  RadiusSchedule radius_schedule;
  double r_init = 1.0;
  /// Redraw w every epoch. Departs from the fixed-dataset ERM; off by default.
  bool resample_noise = false;
  std::uint64_t seed = 0;
  int workers = 1;

  void Validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;       // full-batch loss after the epoch
  double path_norm = 0.0;
  double grad_norm = 0.0;  // mean minibatch gradient norm during the epoch
};

using TrainingTrace = std::vector<EpochRecord>;

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, TrainingTrace trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const TrainingTrace& trace() const { return trace_; }

 private:
  TrainingTrace trace_;
};

struct TrainResult {
  ShallowScoreNet net;  // best full-batch loss seen, including the initial net
  TrainingTrace trace;  // epoch 0 is the projected initialization
  double final_loss = 0.0;
  double radius = 0.0;
};

/// Empirical DSM loss (1/n) sum ||f(x_t^i) + w^i / sigma_t||^2.
double dsm_loss(const ShallowScoreNet& net, const TrainingSet& batch);

/// Score risk implied by a DSM loss value: loss - C_t.
inline double risk_from_loss(double loss_value, double ct_estimate) { return loss_value - ct_estimate; }

/// Monte Carlo estimate of C_t = E||w/sigma_t||^2 - E||grad log p_t(x_t)||^2.
MeanSe estimate_Ct(const ScoreOracle& oracle, double t, Index n_mc, Rng& rng);

/// Projected first-order ERM over the path-norm ball of radius R. Every
/// iterate (the initialization included) satisfies path_norm <= R.
TrainResult train_one_timestep(const TrainingSet& dataset, const TrainConfig& cfg, double radius);

double RadiusFor(const TrainConfig& cfg, double t, Index n);

class ScoreModelSet {
 public:
  struct Entry {
    double t = 0.0;
    ShallowScoreNet net;
    double final_loss = 0.0;
    double radius = 0.0;
  };

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  /// Exact-time lookup; nullptr when absent.
  const Entry* Find(double t) const;

  /// Directory of checkpoints plus manifest.json.
  void Save(const std::filesystem::path& dir, const std::string& fingerprint = "") const;
  static ScoreModelSet Load(const std::filesystem::path& dir);

 private:
  std::vector<Entry> entries_;
};

/// Per-timestep training data with fresh noise: the same x0 rows are reused
/// with an independent w stream per forward timestep.
TrainingSet TimestepDataset(const Matrix& x0, double t, std::uint64_t seed, std::size_t index);

/// One independent ERM per grid forward time. Deterministic given
/// (cfg.seed, grid, cfg) regardless of cfg.workers. Traces are returned in
/// grid order when `traces` is non-null.
ScoreModelSet train_all_timesteps(const TimeGrid& grid, const Matrix& x0, const TrainConfig& cfg,
                                  std::vector<TrainingTrace>* traces = nullptr);

/// JSON-lines: one {"t", "epoch", "loss", "path_norm", "grad_norm"} per line.
void WriteTraceJsonl(const TrainingTrace& trace, double t, std::ostream& os);

}  // namespace ldiff
