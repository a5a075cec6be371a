#include "ldiff/sampler.hpp"

#include <cmath>
#include <sstream>

#include "ldiff/io.hpp"

namespace ldiff {

Vector ei_step(const Vector& y, const Vector& s_val, double gamma, Rng& rng) {
  if (!(gamma > 0.0)) throw DomainError("ei_step: gamma must be > 0");
  const double growth = std::expm1(gamma);  // e^g - 1
  const double noise_sd = std::sqrt(std::expm1(2.0 * gamma));
  Vector out = y + growth * y + 2.0 * growth * s_val;
  for (Index i = 0; i < out.size(); ++i) out(i) += noise_sd * rng.Normal();
  return out;
}

void EiStepBatch(Matrix& y, const Matrix& s_val, double gamma, Rng& rng) {
  if (!(gamma > 0.0)) throw DomainError("ei_step: gamma must be > 0");
  const double growth = std::expm1(gamma);
  const double noise_sd = std::sqrt(std::expm1(2.0 * gamma));
  y += growth * y + 2.0 * growth * s_val;
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index j = 0; j < y.cols(); ++j) y(i, j) += noise_sd * rng.Normal();
  }
}

ScoreProvider ScoreProvider::FromModels(const ScoreModelSet& models) {
  ScoreProvider p;
  for (const auto& e : models.entries()) p.Add(e.t, NetScore(e.net));
  return p;
}

ScoreProvider ScoreProvider::FromOracles(const std::vector<double>& times,
                                         const std::function<ScoreOracle(double)>& factory) {
  ScoreProvider p;
  for (double t : times) p.Add(t, OracleScore(factory(t)));
  return p;
}

void ScoreProvider::Add(double t, BatchScoreFn fn) { entries_.emplace_back(t, std::move(fn)); }

bool ScoreProvider::Covers(double t) const {
  for (const auto& [time, fn] : entries_) {
    if (time == t) return true;
  }
  return false;
}

const BatchScoreFn& ScoreProvider::At(double t) const {
  for (const auto& [time, fn] : entries_) {
    if (time == t) {
      query_log_->push_back(t);
      return fn;
    }
  }
  throw ProviderError("score provider: no evaluator for t = " + io::FormatDouble(t));
}

void ScoreProvider::RequireCoverage(const TimeGrid& grid) const {
  std::ostringstream missing;
  int count = 0;
  for (double t : grid.forward_times) {
    if (!Covers(t)) {
      missing << (count++ ? ", " : "") << io::FormatDouble(t);
    }
  }
  if (count) {
    throw ProviderError("score provider: missing " + std::to_string(count) +
                        " forward time(s): " + missing.str());
  }
}

BatchScoreFn NetScore(ShallowScoreNet net) {
  return [net = std::move(net)](const Matrix& x) { return net.Forward(x); };
}

BatchScoreFn OracleScore(ScoreOracle oracle) {
  return [oracle = std::move(oracle)](const Matrix& x) { return oracle.Batch(x); };
}

Matrix run_reverse(const ScoreProvider& provider, const TimeGrid& grid, Index n_samples, int D, Rng& rng) {
  provider.RequireCoverage(grid);
  Matrix y = rng.Gaussian(n_samples, D);
  for (int k = 0; k < grid.N; ++k) {
    const Matrix s = provider.At(grid.forward_times[k])(y);
    EiStepBatch(y, s, grid.gaps[k], rng);
  }
  return y;
}

double kl_gaussian(const Vector& mean1, const Matrix& cov1, const Vector& mean2, const Matrix& cov2) {
  const Index k = mean1.size();
  Eigen::LLT<Matrix> l1(cov1), l2(cov2);
  if (l1.info() != Eigen::Success || l1.matrixLLT().diagonal().minCoeff() <= 0.0 ||
      l2.info() != Eigen::Success || l2.matrixLLT().diagonal().minCoeff() <= 0.0) {
    throw DomainError("kl_gaussian: covariances must be positive definite");
  }
  const double logdet1 = 2.0 * l1.matrixLLT().diagonal().array().log().sum();
  const double logdet2 = 2.0 * l2.matrixLLT().diagonal().array().log().sum();
  const double trace_term = l2.solve(cov1).trace();
  const Vector diff = mean2 - mean1;
  const double quad = diff.dot(l2.solve(diff));
  return std::max(0.0, 0.5 * (trace_term + quad - static_cast<double>(k) + logdet2 - logdet1));
}

double GaussianFitKl(const Vector& target_mean, const Matrix& target_cov, const Matrix& samples) {
  const Vector mean = samples.colwise().mean().transpose();
  return kl_gaussian(target_mean, target_cov, mean, SampleCovariance(samples));
}

}  // namespace ldiff
