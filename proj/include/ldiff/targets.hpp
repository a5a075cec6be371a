#pragma once

#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "ldiff/common.hpp"

namespace ldiff {

/// One Gaussian component. A zero covariance is a point mass.
struct GaussianComponent {
  double weight = 1.0;
  Vector mean;
  Matrix cov;
};

/// Finite Gaussian mixture on R^d. Immutable after construction; the
/// constructor normalizes nothing and validates everything.
class LatentMixture {
 public:
  LatentMixture() = default;
  /// Throws ModelError unless weights are positive and sum to 1 (to 1e-12),
  /// dimensions agree, and every covariance is symmetric PSD.
  LatentMixture(int dim, std::vector<GaussianComponent> components);

  static LatentMixture StandardNormal(int dim);
  static LatentMixture PointMasses(const std::vector<double>& weights, const Matrix& points);

  int dim() const { return dim_; }
  const std::vector<GaussianComponent>& components() const { return components_; }
  bool IsPositiveDefinite() const;

  Vector Mean() const;
  Matrix Covariance() const;
  /// mu0 = sqrt(E ||z||^2), closed form.
  double SecondMomentRoot() const;
  /// Largest component-covariance eigenvalue; recorded as the sub-Gaussian
  /// scale surrogate.
  double MaxComponentEigenvalue() const;

  /// Pushforward under z -> L z (L is k x dim).
  LatentMixture Transformed(const Matrix& L) const;

  /// n x dim sample.
  Matrix Sample(Index n, Rng& rng) const;

 private:
  int dim_ = 0;
  std::vector<GaussianComponent> components_;
  std::vector<Matrix> factors_;  // symmetric square roots of each covariance
  std::vector<double> cumulative_;
};

/// Contiguous coordinate block of the latent vector.
struct GroupSelector {
  int offset = 0;
  int size = 0;
};

/// Throws ModelError unless the selectors tile [0, D) without overlap.
void ValidatePartition(const std::vector<GroupSelector>& selectors, int D);
std::vector<GroupSelector> SelectorsFromDims(const std::vector<int>& dims);

/// x0 = U z0 with U D x d column-orthonormal.
struct SubspaceModel {
  Matrix U;
  LatentMixture latent;

  SubspaceModel(Matrix U_, LatentMixture latent_);
  int ambient_dim() const { return static_cast<int>(U.rows()); }
  int latent_dim() const { return static_cast<int>(U.cols()); }
};

/// x0 = U z0 with U D x D orthonormal and z0 made of independent groups.
struct IndependentModel {
  Matrix U;
  std::vector<LatentMixture> groups;
  std::vector<GroupSelector> selectors;

  IndependentModel(Matrix U_, std::vector<LatentMixture> groups_);
  int ambient_dim() const { return static_cast<int>(U.rows()); }
};

/// x0 = A z0 with A invertible but not orthogonal.
struct MixedModel {
  Matrix A;
  std::vector<LatentMixture> groups;
  std::vector<GroupSelector> selectors;
  Matrix Sigma;  // block-diagonal latent covariance
  double condition_number = 1.0;

  MixedModel(Matrix A_, std::vector<LatentMixture> groups_);
  int ambient_dim() const { return static_cast<int>(A.rows()); }
  Matrix Covariance() const { return A * Sigma * A.transpose(); }
};

using TargetModel = std::variant<SubspaceModel, IndependentModel, MixedModel>;

int AmbientDim(const TargetModel& model);

/// Haar-distributed D x d frame (QR of a Gaussian matrix with sign fix).
Matrix random_orthonormal(int D, int d, Rng& rng);

/// A = Q1 diag(s) Q2 with singular values log-spaced in [1, condition_number].
Matrix random_mixing_matrix(int D, double condition_number, Rng& rng);

Matrix sample_x0(const SubspaceModel& model, Index n, Rng& rng);
Matrix sample_x0(const IndependentModel& model, Index n, Rng& rng);
Matrix sample_x0(const MixedModel& model, Index n, Rng& rng);
Matrix sample_x0(const TargetModel& model, Index n, Rng& rng);

/// Noised pairs at a single forward time: x_t = m_t x0 + sigma_t w.
struct TrainingSet {
  double t = 0.0;
  Matrix x0;
  Matrix w;
  Matrix xt;
  std::uint64_t stream = 0;

  Index size() const { return x0.rows(); }
  int dim() const { return static_cast<int>(x0.cols()); }
};

TrainingSet forward_corrupt(const Matrix& x0, double t, Rng& rng, std::uint64_t stream = 0);

/// Binary layout: u64 n, u64 D, f64 t (little-endian), then row-major x0, w, xt.
void WriteTrainingSet(const TrainingSet& set, const std::filesystem::path& path);
TrainingSet ReadTrainingSet(const std::filesystem::path& path);
void WriteTrainingSetCsv(const TrainingSet& set, const std::filesystem::path& path);

/// Symmetric inverse square root of the sample covariance. Eigenvalues are
/// floored at 1e-12 * lambda_max; a spectrum reaching the floor is reported
/// as a SingularCovarianceError.
Matrix estimate_whitener(const Matrix& x0);

Matrix SampleCovariance(const Matrix& x);

/// Unique PSD square root of a symmetric PSD matrix (negative round-off
/// eigenvalues clamped to zero).
Matrix SymmetricSqrt(const Matrix& m);

/// Exact reduction of a mixed model to the orthogonal case: with
/// W = Cov(x0)^{-1/2}, W x0 = (W A Sigma^{1/2}) (Sigma^{-1/2} z0) and the
/// first factor is orthogonal.
IndependentModel WhitenedIndependentModel(const MixedModel& model);

}  // namespace ldiff
