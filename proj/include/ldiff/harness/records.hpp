#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace ldiff::harness {

struct TimestepRecord {
  double t = 0.0;
  double loss = 0.0;
  double risk = 0.0;
  double risk_se = 0.0;
  double radius = 0.0;
  double path_norm = 0.0;
};

/// Outputs of the train-all-timesteps + reverse-sampling stage of a cell.
struct SamplerRecord {
  long long n_samples = 0;
  double zeta = 0.0;
  /// Mean squared distance of the samples to the latent subspace, with the
  /// closed-form value sigma_zeta^2 (D - d) for exact p_zeta samples. NaN for
  /// targets without a subspace.
  double residual = 0.0;
  double residual_se = 0.0;
  double residual_reference = 0.0;
  /// Energy distance to fresh p_zeta samples and its permutation null.
  double energy = 0.0;
  double energy_null_q95 = 0.0;
  double energy_p_value = 1.0;
  int permutations = 0;
  double weighted_score_error = 0.0;  // 0 when not computed
};

/// One (fingerprint, seed, n, D) cell of a sweep.
struct ExperimentRecord {
  std::string fingerprint;
  std::string kind;
  std::uint64_t seed = 0;
  long long n = 0;
  int D = 0;
  int d = 0;
  double eval_t = 0.0;
  /// Fit at eval_t first, then (for pipeline cells) one entry per grid time.
  std::vector<TimestepRecord> timesteps;
  std::optional<SamplerRecord> sampler;
  /// Holdout ||W Cov W^T - I||_F for whitened (mixed) targets.
  std::optional<double> whitening_error;
  double wall_time = 0.0;

  /// Score risk of the eval-time fit.
  double EvalRisk() const;

  using Key = std::tuple<std::string, std::uint64_t, long long, int>;
  Key key() const { return {fingerprint, seed, n, D}; }
};

/// One JSON object, no trailing newline. Doubles round-trip exactly.
std::string ToJsonLine(const ExperimentRecord& record);
/// Throws std::runtime_error on malformed input.
ExperimentRecord FromJsonLine(const std::string& line);

/// All records of a JSON-lines file; blank lines are skipped.
std::vector<ExperimentRecord> ReadRecords(const std::filesystem::path& path);

/// Append-only, serialized record writer. Records whose key is already in the
/// file are refused, so an interrupted sweep can be resumed.
class RecordSink {
 public:
  explicit RecordSink(const std::filesystem::path& path);

  bool Contains(const ExperimentRecord::Key& key) const;
  /// Returns false (and writes nothing) for a duplicate key.
  bool Append(const ExperimentRecord& record);

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::set<ExperimentRecord::Key> keys_;
  std::ofstream os_;
};

}  // namespace ldiff::harness
