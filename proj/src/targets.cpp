#include "ldiff/targets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ldiff/io.hpp"
#include "ldiff/schedule.hpp"

namespace ldiff {
namespace {

constexpr double kWeightTolerance = 1e-12;

bool IsSymmetricPsd(const Matrix& m) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return false;
  if (m.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -1e-12 * scale;
}

Matrix BlockDiagonal(const std::vector<Matrix>& blocks) {
  Index total = 0;
  for (const auto& b : blocks) total += b.rows();
  Matrix out = Matrix::Zero(total, total);
  Index offset = 0;
  for (const auto& b : blocks) {
    out.block(offset, offset, b.rows(), b.cols()) = b;
    offset += b.rows();
  }
  return out;
}

Matrix SampleGroups(const std::vector<LatentMixture>& groups,
                    const std::vector<GroupSelector>& selectors, Index n, Rng& rng) {
  const int D = selectors.back().offset + selectors.back().size;
  Matrix z(n, D);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    z.middleCols(selectors[g].offset, selectors[g].size) = groups[g].Sample(n, rng);
  }
  return z;
}

std::vector<GroupSelector> CheckGroups(const std::vector<LatentMixture>& groups, int D) {
  if (groups.empty()) throw ModelError("independent model: at least one group is required");
  std::vector<int> dims;
  for (const auto& g : groups) dims.push_back(g.dim());
  auto selectors = SelectorsFromDims(dims);
  ValidatePartition(selectors, D);
  return selectors;
}

}  // namespace

Matrix SymmetricSqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

// ---------------------------------------------------------------------------
// LatentMixture

LatentMixture::LatentMixture(int dim, std::vector<GaussianComponent> components)
    : dim_(dim), components_(std::move(components)) {
  if (dim_ <= 0) throw ModelError("latent mixture: dimension must be positive");
  if (components_.empty()) throw ModelError("latent mixture: no components");
  double total = 0.0;
  for (const auto& c : components_) {
    if (!(c.weight > 0.0)) throw ModelError("latent mixture: weights must be positive");
    if (c.mean.size() != dim_ || c.cov.rows() != dim_ || c.cov.cols() != dim_) {
      throw ModelError("latent mixture: component dimension mismatch");
    }
    if (!IsSymmetricPsd(c.cov)) throw ModelError("latent mixture: covariance is not symmetric PSD");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > kWeightTolerance) {
    throw ModelError("latent mixture: weights sum to " + io::FormatDouble(total) + ", not 1");
  }
  double acc = 0.0;
  for (const auto& c : components_) {
    factors_.push_back(SymmetricSqrt(c.cov));
    acc += c.weight;
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

LatentMixture LatentMixture::StandardNormal(int dim) {
  return LatentMixture(dim, {{1.0, Vector::Zero(dim), Matrix::Identity(dim, dim)}});
}

LatentMixture LatentMixture::PointMasses(const std::vector<double>& weights, const Matrix& points) {
  if (static_cast<Index>(weights.size()) != points.rows()) {
    throw ModelError("point masses: weights/points size mismatch");
  }
  const int d = static_cast<int>(points.cols());
  std::vector<GaussianComponent> comps;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    comps.push_back({weights[j], points.row(static_cast<Index>(j)).transpose(), Matrix::Zero(d, d)});
  }
  return LatentMixture(d, std::move(comps));
}

bool LatentMixture::IsPositiveDefinite() const {
  for (const auto& c : components_) {
    Eigen::LLT<Matrix> llt(c.cov);
    if (llt.info() != Eigen::Success) return false;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c.cov, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() <= 0.0) return false;
  }
  return true;
}

Vector LatentMixture::Mean() const {
  Vector mu = Vector::Zero(dim_);
  for (const auto& c : components_) mu += c.weight * c.mean;
  return mu;
}

Matrix LatentMixture::Covariance() const {
  const Vector mu = Mean();
  Matrix second = Matrix::Zero(dim_, dim_);
  for (const auto& c : components_) second += c.weight * (c.cov + c.mean * c.mean.transpose());
  return second - mu * mu.transpose();
}

double LatentMixture::SecondMomentRoot() const {
  double s = 0.0;
  for (const auto& c : components_) s += c.weight * (c.mean.squaredNorm() + c.cov.trace());
  return std::sqrt(s);
}

double LatentMixture::MaxComponentEigenvalue() const {
  double best = 0.0;
  for (const auto& c : components_) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c.cov, Eigen::EigenvaluesOnly);
    best = std::max(best, eig.eigenvalues().maxCoeff());
  }
  return best;
}

LatentMixture LatentMixture::Transformed(const Matrix& L) const {
  if (L.cols() != dim_) throw ModelError("latent mixture: transform has wrong input dimension");
  std::vector<GaussianComponent> comps;
  for (const auto& c : components_) {
    Matrix cov = L * c.cov * L.transpose();
    cov = 0.5 * (cov + cov.transpose());
    comps.push_back({c.weight, L * c.mean, std::move(cov)});
  }
  return LatentMixture(static_cast<int>(L.rows()), std::move(comps));
}

Matrix LatentMixture::Sample(Index n, Rng& rng) const {
  Matrix out(n, dim_);
  Vector g(dim_);
  for (Index i = 0; i < n; ++i) {
    const double u = rng.Uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    const std::size_t j =
        std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), components_.size() - 1);
    for (int k = 0; k < dim_; ++k) g(k) = rng.Normal();
    out.row(i) = (components_[j].mean + factors_[j] * g).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Models

void ValidatePartition(const std::vector<GroupSelector>& selectors, int D) {
  std::vector<int> hits(static_cast<std::size_t>(std::max(D, 0)), 0);
  for (const auto& s : selectors) {
    if (s.size <= 0 || s.offset < 0 || s.offset + s.size > D) {
      throw ModelError("group selectors: block [" + std::to_string(s.offset) + ", " +
                       std::to_string(s.offset + s.size) + ") is outside [0, " + std::to_string(D) + ")");
    }
    for (int k = s.offset; k < s.offset + s.size; ++k) ++hits[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < D; ++k) {
    if (hits[static_cast<std::size_t>(k)] == 0) {
      throw ModelError("group selectors: coordinate " + std::to_string(k) + " is not covered");
    }
    if (hits[static_cast<std::size_t>(k)] > 1) {
      throw ModelError("group selectors: coordinate " + std::to_string(k) + " is selected twice");
    }
  }
}

std::vector<GroupSelector> SelectorsFromDims(const std::vector<int>& dims) {
  std::vector<GroupSelector> out;
  int offset = 0;
  for (int d : dims) {
    out.push_back({offset, d});
    offset += d;
  }
  return out;
}

SubspaceModel::SubspaceModel(Matrix U_, LatentMixture latent_)
    : U(std::move(U_)), latent(std::move(latent_)) {
  if (U.cols() != latent.dim()) throw ModelError("subspace model: U columns != latent dimension");
  if (U.cols() > U.rows()) throw ModelError("subspace model: latent dimension exceeds ambient");
  const Matrix gram = U.transpose() * U - Matrix::Identity(U.cols(), U.cols());
  if (gram.norm() > 1e-12) throw ModelError("subspace model: U is not column-orthonormal");
}

IndependentModel::IndependentModel(Matrix U_, std::vector<LatentMixture> groups_)
    : U(std::move(U_)), groups(std::move(groups_)) {
  if (U.rows() != U.cols()) throw ModelError("independent model: U must be square");
  selectors = CheckGroups(groups, static_cast<int>(U.rows()));
  const Matrix gram = U.transpose() * U - Matrix::Identity(U.cols(), U.cols());
  if (gram.norm() > 1e-12) throw ModelError("independent model: U is not orthonormal");
}

MixedModel::MixedModel(Matrix A_, std::vector<LatentMixture> groups_)
    : A(std::move(A_)), groups(std::move(groups_)) {
  if (A.rows() != A.cols()) throw ModelError("mixed model: A must be square");
  selectors = CheckGroups(groups, static_cast<int>(A.rows()));
  Eigen::JacobiSVD<Matrix> svd(A);
  const Vector s = svd.singularValues();
  if (!(s.minCoeff() > 0.0)) throw ModelError("mixed model: A is singular");
  condition_number = s.maxCoeff() / s.minCoeff();
  if (!std::isfinite(condition_number)) throw ModelError("mixed model: A has infinite condition number");
  std::vector<Matrix> blocks;
  for (const auto& g : groups) blocks.push_back(g.Covariance());
  Sigma = BlockDiagonal(blocks);
}

int AmbientDim(const TargetModel& model) {
  return std::visit([](const auto& m) { return m.ambient_dim(); }, model);
}

Matrix random_orthonormal(int D, int d, Rng& rng) {
  if (d < 1 || D < 1) throw DomainError("random_orthonormal: dimensions must be positive");
  if (d > D) throw DomainError("random_orthonormal: d > D");
  const Matrix g = rng.Gaussian(D, d);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(D, d);
  const Matrix r = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
  // Sign convention diag(R) > 0 makes the frame Haar distributed.
  for (int j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  // One Gram-Schmidt refinement pass keeps U^T U = I at the 1e-15 level.
  for (int j = 0; j < d; ++j) {
    for (int k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);
    q.col(j).normalize();
  }
  return q;
}

Matrix random_mixing_matrix(int D, double condition_number, Rng& rng) {
  if (!(condition_number >= 1.0)) throw DomainError("random_mixing_matrix: condition number must be >= 1");
  const Matrix q1 = random_orthonormal(D, D, rng);
  const Matrix q2 = random_orthonormal(D, D, rng);
  Vector s(D);
  for (int i = 0; i < D; ++i) {
    const double frac = D == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(D - 1);
    s(i) = std::pow(condition_number, frac);
  }
  return q1 * s.asDiagonal() * q2;
}

Matrix sample_x0(const SubspaceModel& model, Index n, Rng& rng) {
  return model.latent.Sample(n, rng) * model.U.transpose();
}

Matrix sample_x0(const IndependentModel& model, Index n, Rng& rng) {
  return SampleGroups(model.groups, model.selectors, n, rng) * model.U.transpose();
}

Matrix sample_x0(const MixedModel& model, Index n, Rng& rng) {
  return SampleGroups(model.groups, model.selectors, n, rng) * model.A.transpose();
}

Matrix sample_x0(const TargetModel& model, Index n, Rng& rng) {
  return std::visit([&](const auto& m) { return sample_x0(m, n, rng); }, model);
}

// ---------------------------------------------------------------------------
// Training sets

TrainingSet forward_corrupt(const Matrix& x0, double t, Rng& rng, std::uint64_t stream) {
  const OUCoefficients c = ou_coefficients(t);
  TrainingSet set;
  set.t = t;
  set.stream = stream;
  set.x0 = x0;
  set.w = rng.Gaussian(x0.rows(), x0.cols());
  set.xt = c.m * set.x0 + c.sigma * set.w;
  return set;
}

void WriteTrainingSet(const TrainingSet& set, const std::filesystem::path& path) {
  auto os = io::OpenForWrite(path, true);
  io::WriteU64(os, static_cast<std::uint64_t>(set.size()));
  io::WriteU64(os, static_cast<std::uint64_t>(set.dim()));
  io::WriteF64(os, set.t);
  io::WriteMatrixRowMajor(os, set.x0);
  io::WriteMatrixRowMajor(os, set.w);
  io::WriteMatrixRowMajor(os, set.xt);
  if (!os) throw std::runtime_error("training set: write failed: " + path.string());
}

TrainingSet ReadTrainingSet(const std::filesystem::path& path) {
  auto is = io::OpenForRead(path, true);
  TrainingSet set;
  const auto n = static_cast<Index>(io::ReadU64(is));
  const auto D = static_cast<Index>(io::ReadU64(is));
  set.t = io::ReadF64(is);
  set.x0 = io::ReadMatrixRowMajor(is, n, D);
  set.w = io::ReadMatrixRowMajor(is, n, D);
  set.xt = io::ReadMatrixRowMajor(is, n, D);
  return set;
}

void WriteTrainingSetCsv(const TrainingSet& set, const std::filesystem::path& path) {
  auto os = io::OpenForWrite(path);
  const int D = set.dim();
  os << "t";
  for (const char* prefix : {"x0_", "w_", "xt_"}) {
    for (int j = 0; j < D; ++j) os << ',' << prefix << j;
  }
  os << '\n';
  for (Index i = 0; i < set.size(); ++i) {
    os << io::FormatDouble(set.t);
    for (const Matrix* m : {&set.x0, &set.w, &set.xt}) {
      for (int j = 0; j < D; ++j) os << ',' << io::FormatDouble((*m)(i, j));
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Whitening

Matrix SampleCovariance(const Matrix& x) {
  if (x.rows() < 2) throw DomainError("sample covariance: need at least two rows");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - mean;
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

Matrix estimate_whitener(const Matrix& x0) {
  if (x0.rows() <= x0.cols()) {
    throw DomainError("estimate_whitener: need n > D samples (n = " + std::to_string(x0.rows()) +
                      ", D = " + std::to_string(x0.cols()) + ")");
  }
  const Matrix cov = SampleCovariance(x0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Vector lambda = eig.eigenvalues();
  const double lambda_max = lambda.maxCoeff();
  const double floor = 1e-12 * lambda_max;
  if (!(lambda_max > 0.0) || lambda.minCoeff() <= floor) {
    throw SingularCovarianceError(
        "estimate_whitener: sample covariance is rank deficient; the data likely lies on a "
        "subspace, use the subspace model instead of whitening");
  }
  const Vector inv_root = lambda.cwiseMax(floor).cwiseSqrt().cwiseInverse();
  return eig.eigenvectors() * inv_root.asDiagonal() * eig.eigenvectors().transpose();
}

IndependentModel WhitenedIndependentModel(const MixedModel& model) {
  Eigen::SelfAdjointEigenSolver<Matrix> cov_eig(model.Covariance());
  if (cov_eig.eigenvalues().minCoeff() <= 0.0) {
    throw SingularCovarianceError("whitened model: Cov(x0) is singular");
  }
  const Matrix W = cov_eig.eigenvectors() *
                   cov_eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                   cov_eig.eigenvectors().transpose();
  const int D = model.ambient_dim();
  Matrix sigma_root = Matrix::Zero(D, D);
  std::vector<LatentMixture> groups;
  for (std::size_t g = 0; g < model.groups.size(); ++g) {
    const auto& sel = model.selectors[g];
    const Matrix block = model.Sigma.block(sel.offset, sel.offset, sel.size, sel.size);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(block);
    if (eig.eigenvalues().minCoeff() <= 0.0) {
      throw SingularCovarianceError("whitened model: group covariance is singular");
    }
    sigma_root.block(sel.offset, sel.offset, sel.size, sel.size) =
        eig.eigenvectors() * eig.eigenvalues().cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
    const Matrix inv_root = eig.eigenvectors() *
                            eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                            eig.eigenvectors().transpose();
    groups.push_back(model.groups[g].Transformed(inv_root));
  }
  Matrix Q = W * model.A * sigma_root;
  // Q is orthogonal up to round-off; snap it with a polar factor.
  Eigen::JacobiSVD<Matrix> svd(Q, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Q = svd.matrixU() * svd.matrixV().transpose();
  return IndependentModel(std::move(Q), std::move(groups));
}

}  // namespace ldiff
