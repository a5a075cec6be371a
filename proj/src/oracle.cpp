#include "ldiff/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "ldiff/schedule.hpp"

namespace ldiff {
namespace {

// Returns log sum exp(a_j) and writes normalized weights exp(a_j - lse).
double LogSumExp(const std::vector<double>& a, std::vector<double>& weights) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : a) mx = std::max(mx, v);
  double s = 0.0;
  weights.resize(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    weights[j] = std::exp(a[j] - mx);
    s += weights[j];
  }
  for (double& w : weights) w /= s;
  return mx + std::log(s);
}

}  // namespace

MixtureAtTime::MixtureAtTime(const LatentMixture& latent, double t) : t_(t), dim_(latent.dim()) {
  const OUCoefficients c = ou_coefficients(t);
  const Matrix eye = Matrix::Identity(dim_, dim_);
  for (const auto& comp : latent.components()) {
    weights_.push_back(comp.weight);
    means_.push_back(c.m * comp.mean);
    Matrix cov = (c.m * c.m) * comp.cov + (c.sigma * c.sigma) * eye;
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() <= 0.0) {
      throw DomainError("mixture at t = " + std::to_string(t) +
                        ": component covariance is singular (degenerate component at t = 0)");
    }
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    log_norms_.push_back(-0.5 * log_det - 0.5 * dim_ * std::log(2.0 * std::numbers::pi));
    covs_.push_back(std::move(cov));
    factors_.push_back(std::move(llt));
  }
}

void MixtureAtTime::Evaluate(const Vector& z, std::vector<double>& log_terms,
                             std::vector<Vector>& grads) const {
  const std::size_t k = weights_.size();
  log_terms.resize(k);
  grads.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    const Vector r = z - means_[j];
    Vector prec_r = factors_[j].solve(r);
    log_terms[j] = std::log(weights_[j]) + log_norms_[j] - 0.5 * r.dot(prec_r);
    grads[j] = -prec_r;
  }
}

double MixtureAtTime::LogDensity(const Vector& z) const {
  std::vector<double> log_terms, resp;
  std::vector<Vector> grads;
  Evaluate(z, log_terms, grads);
  return LogSumExp(log_terms, resp);
}

Vector MixtureAtTime::Score(const Vector& z) const {
  if (z.size() != dim_) throw DomainError("mixture score: dimension mismatch");
  std::vector<double> log_terms, resp;
  std::vector<Vector> grads;
  Evaluate(z, log_terms, grads);
  LogSumExp(log_terms, resp);
  Vector s = Vector::Zero(dim_);
  for (std::size_t j = 0; j < resp.size(); ++j) s += resp[j] * grads[j];
  return s;
}

Vector mixture_score(const MixtureAtTime& mix, const Vector& z) { return mix.Score(z); }

Vector ambient_score_subspace(const Matrix& U, const PointScoreFn& latent_score, const Vector& x,
                              double t) {
  if (!(t > 0.0)) {
    throw DomainError("ambient_score_subspace: t must be > 0 (normal component diverges at t = 0)");
  }
  const double sigma = ou_coefficients(t).sigma;
  const Vector z = U.transpose() * x;
  const Vector normal = x - U * z;
  return U * latent_score(z) - normal / (sigma * sigma);
}

Vector ambient_score_independent(const Matrix& U, const std::vector<PointScoreFn>& group_scores,
                                 const std::vector<GroupSelector>& selectors, const Vector& x,
                                 double t) {
  ou_coefficients(t);  // domain check
  const int D = static_cast<int>(U.rows());
  ValidatePartition(selectors, D);
  if (group_scores.size() != selectors.size()) {
    throw ModelError("ambient_score_independent: one score per group is required");
  }
  const Vector z = U.transpose() * x;
  Vector latent(D);
  for (std::size_t i = 0; i < selectors.size(); ++i) {
    const auto& sel = selectors[i];
    latent.segment(sel.offset, sel.size) = group_scores[i](z.segment(sel.offset, sel.size));
  }
  return U * latent;
}

Vector tweedie_score(const WeightedAtoms& atoms, const Vector& x, double t) {
  if (atoms.points.rows() == 0) throw DomainError("tweedie_score: empty atom support");
  if (!(t > 0.0)) throw DomainError("tweedie_score: t must be > 0");
  const OUCoefficients c = ou_coefficients(t);
  const double var = c.sigma * c.sigma;
  const Index k = atoms.points.rows();
  std::vector<double> log_terms(static_cast<std::size_t>(k)), rho;
  for (Index j = 0; j < k; ++j) {
    const double d2 = (x - c.m * atoms.points.row(j).transpose()).squaredNorm();
    log_terms[static_cast<std::size_t>(j)] = std::log(atoms.weights(j)) - d2 / (2.0 * var);
  }
  LogSumExp(log_terms, rho);
  Vector posterior_mean = Vector::Zero(x.size());
  for (Index j = 0; j < k; ++j) {
    posterior_mean += rho[static_cast<std::size_t>(j)] * (c.m * atoms.points.row(j).transpose());
  }
  return (posterior_mean - x) / var;
}

Vector gaussian_ambient_score(const Vector& mean, const Matrix& covariance, const Vector& x) {
  Eigen::LLT<Matrix> llt(covariance);
  if (llt.info() != Eigen::Success || llt.matrixLLT().diagonal().minCoeff() <= 0.0) {
    throw DomainError("gaussian_ambient_score: covariance is not positive definite");
  }
  return -llt.solve(x - mean);
}

// ---------------------------------------------------------------------------
// ScoreOracle

ScoreOracle ScoreOracle::ForSubspace(const SubspaceModel& model, double t) {
  if (!(t > 0.0)) throw DomainError("subspace oracle: t must be > 0");
  ScoreOracle o;
  o.kind_ = Kind::kClosedFormSubspace;
  o.t_ = t;
  o.dim_ = model.ambient_dim();
  auto mix = std::make_shared<const MixtureAtTime>(model.latent, t);
  auto U = std::make_shared<const Matrix>(model.U);
  o.point_ = [mix, U, t](const Vector& x) {
    return ambient_score_subspace(*U, [&](const Vector& z) { return mix->Score(z); }, x, t);
  };
  o.sample_x0_ = [model](Index n, Rng& rng) { return sample_x0(model, n, rng); };
  return o;
}

ScoreOracle ScoreOracle::ForIndependent(const IndependentModel& model, double t) {
  ScoreOracle o;
  o.kind_ = Kind::kClosedFormIndependent;
  o.t_ = t;
  o.dim_ = model.ambient_dim();
  std::vector<PointScoreFn> scores;
  for (const auto& g : model.groups) {
    auto mix = std::make_shared<const MixtureAtTime>(g, t);
    scores.push_back([mix](const Vector& z) { return mix->Score(z); });
  }
  auto U = std::make_shared<const Matrix>(model.U);
  auto selectors = model.selectors;
  o.point_ = [U, scores = std::move(scores), selectors, t](const Vector& x) {
    return ambient_score_independent(*U, scores, selectors, x, t);
  };
  o.sample_x0_ = [model](Index n, Rng& rng) { return sample_x0(model, n, rng); };
  return o;
}

ScoreOracle ScoreOracle::ForAtoms(WeightedAtoms atoms, double t) {
  if (!(t > 0.0)) throw DomainError("tweedie oracle: t must be > 0");
  if (atoms.points.rows() == 0) throw DomainError("tweedie oracle: empty atom support");
  ScoreOracle o;
  o.kind_ = Kind::kTweedieBruteForce;
  o.t_ = t;
  o.dim_ = static_cast<int>(atoms.points.cols());
  auto shared = std::make_shared<const WeightedAtoms>(std::move(atoms));
  o.point_ = [shared, t](const Vector& x) { return tweedie_score(*shared, x, t); };
  o.sample_x0_ = [shared](Index n, Rng& rng) {
    const Index k = shared->points.rows();
    std::vector<double> cumulative(static_cast<std::size_t>(k));
    double acc = 0.0;
    for (Index j = 0; j < k; ++j) cumulative[static_cast<std::size_t>(j)] = (acc += shared->weights(j));
    Matrix out(n, shared->points.cols());
    for (Index i = 0; i < n; ++i) {
      const double u = rng.Uniform() * acc;
      auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      const Index j = std::min<Index>(static_cast<Index>(it - cumulative.begin()), k - 1);
      out.row(i) = shared->points.row(j);
    }
    return out;
  };
  return o;
}

ScoreOracle ScoreOracle::ForGaussian(const Vector& mean, const Matrix& cov, double t) {
  const OUCoefficients c = ou_coefficients(t);
  const int D = static_cast<int>(mean.size());
  Vector mean_t = c.m * mean;
  Matrix cov_t = (c.m * c.m) * cov + (c.sigma * c.sigma) * Matrix::Identity(D, D);
  Eigen::LLT<Matrix> llt(cov_t);
  if (llt.info() != Eigen::Success) throw DomainError("gaussian oracle: covariance at t is not PD");
  ScoreOracle o;
  o.kind_ = Kind::kExactGaussianAmbient;
  o.t_ = t;
  o.dim_ = D;
  o.point_ = [mean_t, cov_t](const Vector& x) { return gaussian_ambient_score(mean_t, cov_t, x); };
  const Matrix root = SymmetricSqrt(cov);
  o.sample_x0_ = [mean, root](Index n, Rng& rng) {
    Matrix g = rng.Gaussian(n, mean.size());
    Matrix x = g * root;  // root is symmetric
    x.rowwise() += mean.transpose();
    return x;
  };
  return o;
}

Matrix ScoreOracle::Batch(const Matrix& x) const {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = point_(x.row(i).transpose()).transpose();
  return out;
}

TrainingSet ScoreOracle::SamplePt(Index n, Rng& rng) const {
  const Matrix x0 = sample_x0_(n, rng);
  return forward_corrupt(x0, t_, rng);
}

}  // namespace ldiff
