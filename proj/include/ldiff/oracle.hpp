#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ldiff/common.hpp"
#include "ldiff/targets.hpp"

namespace ldiff {

/// Latent mixture pushed through the OU interpolant at time t:
/// components (w_j, m_t mu_j, m_t^2 Sigma_j + sigma_t^2 I).
class MixtureAtTime {
 public:
  /// Throws DomainError if some component covariance is singular (only
  /// possible at t = 0 with a degenerate component).
  MixtureAtTime(const LatentMixture& latent, double t);

  double t() const { return t_; }
  int dim() const { return dim_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  const std::vector<Matrix>& covariances() const { return covs_; }

  double LogDensity(const Vector& z) const;
  Vector Score(const Vector& z) const;

 private:
  /// Per-component log(w_j N(z; m_j, C_j)) and the precision-times-residual.
  void Evaluate(const Vector& z, std::vector<double>& log_terms, std::vector<Vector>& grads) const;

  double t_ = 0.0;
  int dim_ = 0;
  std::vector<double> weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covs_;
  std::vector<Eigen::LLT<Matrix>> factors_;
  std::vector<double> log_norms_;
};

/// grad log of the mixture at z, with responsibilities via log-sum-exp.
Vector mixture_score(const MixtureAtTime& mix, const Vector& z);

using PointScoreFn = std::function<Vector(const Vector&)>;

/// U grad log pi_t(U^T x) - (1/sigma_t^2)(I - U U^T) x. t must be > 0.
Vector ambient_score_subspace(const Matrix& U, const PointScoreFn& latent_score, const Vector& x,
                              double t);

/// sum_i U P_i^T grad log pi_t^(i)(P_i U^T x). Throws ModelError if the
/// selectors do not partition [0, D).
Vector ambient_score_independent(const Matrix& U, const std::vector<PointScoreFn>& group_scores,
                                 const std::vector<GroupSelector>& selectors, const Vector& x,
                                 double t);

/// Weighted point cloud {(w_j, x0_j)}; rows of `points` are the atoms.
struct WeightedAtoms {
  Vector weights;
  Matrix points;
};

/// Brute-force conditional-mean score (1/sigma_t^2)(sum_j rho_j m_t x0_j - x).
Vector tweedie_score(const WeightedAtoms& atoms, const Vector& x, double t);

/// -Cov^{-1}(x - mean). Throws DomainError for a non-PD covariance.
Vector gaussian_ambient_score(const Vector& mean, const Matrix& covariance, const Vector& x);

/// Exact score of p_t for a known target, plus the ability to draw from p_t.
/// Immutable; evaluation is thread-safe.
class ScoreOracle {
 public:
  enum class Kind { kClosedFormSubspace, kClosedFormIndependent, kTweedieBruteForce, kExactGaussianAmbient };

  static ScoreOracle ForSubspace(const SubspaceModel& model, double t);
  static ScoreOracle ForIndependent(const IndependentModel& model, double t);
  static ScoreOracle ForAtoms(WeightedAtoms atoms, double t);
  /// p_0 = N(mean, cov); p_t = N(m_t mean, m_t^2 cov + sigma_t^2 I).
  static ScoreOracle ForGaussian(const Vector& mean, const Matrix& cov, double t);

  Kind kind() const { return kind_; }
  double t() const { return t_; }
  int dim() const { return dim_; }

  Vector operator()(const Vector& x) const { return point_(x); }
  /// Row-wise evaluation of an n x D batch.
  Matrix Batch(const Matrix& x) const;

  /// Draws n points from p_t and returns (x_t, w) with x_t = m_t x0 + sigma_t w.
  TrainingSet SamplePt(Index n, Rng& rng) const;

 private:
  ScoreOracle() = default;

  Kind kind_ = Kind::kExactGaussianAmbient;
  double t_ = 0.0;
  int dim_ = 0;
  PointScoreFn point_;
  std::function<Matrix(Index, Rng&)> sample_x0_;
};

}  // namespace ldiff
