#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ldiff {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Error taxonomy. Everything derives from std::runtime_error so callers that
// only care about "it failed" can catch one type.

/// Argument outside the mathematical domain of an operation (t < 0, singular
/// covariance, ...).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, e.g. schedule parameters violating their invariants.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally inconsistent model (overlapping group selectors, ...).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularCovarianceError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Seeded random stream. Streams derived from the same (seed, stream id) pair
/// produce identical sequences.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream keyed by (seed, stream). Uses a splitmix64 finalizer
  /// so nearby ids give uncorrelated engine seeds.
  static Rng Stream(std::uint64_t seed, std::uint64_t stream);

  double Normal() { return normal_(engine_); }
  double Uniform() { return uniform_(engine_); }
  std::uint64_t NextU64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::uint64_t Below(std::uint64_t n);

  /// rows x cols matrix of iid standard normals, filled row by row.
  Matrix Gaussian(Index rows, Index cols);
  Vector GaussianVector(Index n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t SplitMix64(std::uint64_t x);

/// Pairwise (tree) summation. Result depends only on the multiset order given,
/// and the error grows like O(log n) instead of O(n).
double PairwiseSum(std::span<const double> values);

/// Mean and standard error of a sample. se = 0 for a single value.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
MeanSe MeanAndStandardError(std::span<const double> values);

}  // namespace ldiff
