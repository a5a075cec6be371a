#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ldiff/dsm_train.hpp"
#include "ldiff/schedule.hpp"

namespace ldiff::harness {

enum class TargetKind { kSubspace, kIndependent, kMixed };

std::string TargetKindName(TargetKind kind);

struct TargetSpec {
  TargetKind kind = TargetKind::kSubspace;
  int latent_dim = 2;                  // subspace kind
  std::vector<int> ambient_dims{4, 16};
  std::vector<int> group_dims;         // independent / mixed kinds
  int components = 2;                  // mixture components per latent block
  double mode_offset = 0.5;            // component means spread on [-o, o](1, ..., 1)
  double mode_variance = 0.3;          // isotropic component variance
  double condition_number = 10.0;      // mixed kind only

  /// Intrinsic dimension: d for the subspace kind, sum of group sizes otherwise.
  int IntrinsicDim() const;
};

struct SweepSpec {
  std::vector<long long> n{500, 2000, 8000};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double eval_t = 0.5;
  /// Run the full train-all-timesteps + sampler pipeline for these n (empty:
  /// never). The value -1 stands for the largest n of the grid.
  std::vector<long long> sample_n;
  long long n_samples = 4000;
  int workers = 1;  // concurrent cells
};

struct MetricsSpec {
  long long n_mc = 10000;
  int permutations = 200;   // energy permutation test; 0 disables it
  long long energy_cap = 4000;
  bool weighted_error = true;  // per-grid-time risk table for pipeline cells
};

/// Everything that determines a sweep. Loaded from a sectioned key = value
/// text file:
///
///   [target]
///   kind = subspace
///   ambient_dims = 4, 16
///
/// `section.key = value` at top level is accepted as well. Unknown keys,
/// malformed values and violated invariants raise ConfigError.
struct ExperimentConfig {
  TargetSpec target;
  ScheduleParams schedule{3.0, 20, 0.05, 2.0, 1.0};
  /// Training hyper-parameters. seed, workers and radius_schedule are filled
  /// in per cell.
  TrainConfig train = DefaultTrain();
  /// When > 0, the number of optimizer steps per eval-time fit; epochs are
  /// derived as ceil(steps * batch / n) so every n gets the same budget.
  int train_steps = 3000;
  /// Same for each net of the sampling pipeline.
  int pipeline_steps = 1000;
  double r_bar = 8.0;
  SweepSpec sweep;
  MetricsSpec metrics;
  std::string output_dir = "runs";

  static TrainConfig DefaultTrain();

  static ExperimentConfig Parse(std::string_view text);
  /// Reads the file, applies SEED_OVERRIDE when set, and validates.
  static ExperimentConfig Load(const std::filesystem::path& path);

  void Validate() const;

  /// Sorted `section.key = value` lines, one per field; Parse(Canonical())
  /// reproduces the config exactly.
  std::string Canonical() const;
  /// 16 hex digits of FNV-1a over the canonical form, leaving out the fields
  /// that do not change any single cell's result (seed list, worker counts,
  /// output directory).
  std::string Fingerprint() const;
  /// Same hash restricted to the target, schedule and train sections: two
  /// configs with equal model fingerprints train identical nets.
  std::string ModelFingerprint() const;

  /// Training config for one cell.
  TrainConfig CellTrain(int ambient_dim, long long n, std::uint64_t seed, int steps) const;

  bool SamplesAt(long long n) const;
};

/// Parses a decimal integer; accepts an optional leading '-' only when
/// `allow_negative`. Throws ConfigError naming `what` on failure.
long long ParseInteger(std::string_view text, std::string_view what, bool allow_negative = false);

/// Applies the SEED_OVERRIDE environment variable, if set.
void ApplySeedOverride(ExperimentConfig& config);

}  // namespace ldiff::harness
