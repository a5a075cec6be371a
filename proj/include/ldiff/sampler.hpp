#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ldiff/common.hpp"
#include "ldiff/dsm_train.hpp"
#include "ldiff/oracle.hpp"
#include "ldiff/schedule.hpp"

namespace ldiff {

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-wise score evaluation on an n x D batch.
using BatchScoreFn = std::function<Matrix(const Matrix&)>;

/// Exact solution over duration gamma of dy = (y + 2 s) dt + sqrt(2) dB with
/// the score frozen at s:
///   y' = e^g y + 2 (e^g - 1) s + sqrt(e^{2g} - 1) xi.
Vector ei_step(const Vector& y, const Vector& s_val, double gamma, Rng& rng);
/// Same update applied row-wise to a batch of iterates.
void EiStepBatch(Matrix& y, const Matrix& s_val, double gamma, Rng& rng);

/// Score evaluators keyed by forward time. Lookups use exact time equality;
/// no interpolation across timesteps.
class ScoreProvider {
 public:
  static ScoreProvider FromModels(const ScoreModelSet& models);
  /// Builds one oracle per requested time via `factory`.
  static ScoreProvider FromOracles(const std::vector<double>& times,
                                   const std::function<ScoreOracle(double)>& factory);

  void Add(double t, BatchScoreFn fn);
  bool Covers(double t) const;
  const BatchScoreFn& At(double t) const;
  /// Throws ProviderError listing every grid forward time with no evaluator.
  void RequireCoverage(const TimeGrid& grid) const;

  std::size_t size() const { return entries_.size(); }
  /// Times queried through At(), in call order.
  const std::vector<double>& query_log() const { return *query_log_; }

 private:
  std::vector<std::pair<double, BatchScoreFn>> entries_;
  std::shared_ptr<std::vector<double>> query_log_ = std::make_shared<std::vector<double>>();
};

BatchScoreFn NetScore(ShallowScoreNet net);
BatchScoreFn OracleScore(ScoreOracle oracle);

/// Exponential-integrator reverse sampler. y_0 ~ N(0, I_D); step k uses the
/// score at forward time T - tau_k evaluated at the current iterate and
/// advances by gamma_k. Returns the n x D iterate at reverse time T - zeta.
Matrix run_reverse(const ScoreProvider& provider, const TimeGrid& grid, Index n_samples, int D, Rng& rng);

/// KL(N(mean1, cov1) || N(mean2, cov2)). DomainError for non-PD covariances.
double kl_gaussian(const Vector& mean1, const Matrix& cov1, const Vector& mean2, const Matrix& cov2);

/// KL(target || Gaussian fit of samples), the fit using the sample mean and
/// covariance.
double GaussianFitKl(const Vector& target_mean, const Matrix& target_cov, const Matrix& samples);

}  // namespace ldiff
