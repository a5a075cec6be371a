#include "ldiff/shallow_net.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "ldiff/io.hpp"
#include "ldiff/schedule.hpp"

namespace ldiff {

ShallowScoreNet::ShallowScoreNet(Matrix u, Matrix v) : u_(std::move(u)), v_(std::move(v)) {
  if (u_.rows() != v_.rows() || u_.cols() != v_.cols()) {
    throw ModelError("shallow net: u and v must have identical shapes");
  }
}

ShallowScoreNet ShallowScoreNet::Zero(int width, int dim) {
  return ShallowScoreNet(Matrix::Zero(width, dim), Matrix::Zero(width, dim));
}

ShallowScoreNet ShallowScoreNet::RandomSphere(int width, int dim, double radius, Rng& rng) {
  Matrix u = rng.Gaussian(width, dim);
  Matrix v = rng.Gaussian(width, dim);
  u.rowwise().normalize();
  v.rowwise().normalize();
  return ShallowScoreNet(radius * u, radius * v);
}

Vector ShallowScoreNet::operator()(const Vector& x) const {
  const Vector pre = v_ * x;
  return u_.transpose() * pre.cwiseMax(0.0) / static_cast<double>(width());
}

Matrix ShallowScoreNet::Forward(const Matrix& x) const {
  const Matrix act = (x * v_.transpose()).cwiseMax(0.0);
  return act * u_ / static_cast<double>(width());
}

double path_norm(const ShallowScoreNet& net) {
  if (net.width() == 0) return 0.0;
  const Vector un = net.u().rowwise().norm();
  const Vector vn = net.v().rowwise().norm();
  return un.dot(vn) / static_cast<double>(net.width());
}

ShallowScoreNet exact_linear_net(const std::vector<RankOneTerm>& terms, int dim) {
  const int m = 2 * static_cast<int>(terms.size());
  Matrix u(m, dim), v(m, dim);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const auto& term = terms[k];
    if (term.direction.size() != dim) throw DomainError("exact_linear_net: direction has wrong dimension");
    if (std::abs(term.direction.norm() - 1.0) > 1e-12) {
      throw DomainError("exact_linear_net: direction " + std::to_string(k) + " is not unit norm");
    }
    const Vector scaled = term.coefficient * static_cast<double>(m) * term.direction;
    const auto i = static_cast<Index>(2 * k);
    u.row(i) = scaled.transpose();
    v.row(i) = term.direction.transpose();
    u.row(i + 1) = -scaled.transpose();
    v.row(i + 1) = -term.direction.transpose();
  }
  return ShallowScoreNet(std::move(u), std::move(v));
}

Matrix ComplementBasis(const Matrix& U) {
  const Index D = U.rows();
  const Index d = U.cols();
  Eigen::HouseholderQR<Matrix> qr(U);
  const Matrix q = qr.householderQ() * Matrix::Identity(D, D);
  Matrix basis = q.rightCols(D - d);
  // Re-orthogonalize against U and each other to keep unit norms at 1e-15.
  for (Index j = 0; j < basis.cols(); ++j) {
    basis.col(j) -= U * (U.transpose() * basis.col(j));
    for (Index k = 0; k < j; ++k) basis.col(j) -= basis.col(k).dot(basis.col(j)) * basis.col(k);
    basis.col(j).normalize();
  }
  return basis;
}

std::vector<RankOneTerm> ComplementProjectorTerms(const Matrix& U, double scale) {
  const Matrix basis = ComplementBasis(U);
  std::vector<RankOneTerm> terms;
  for (Index j = 0; j < basis.cols(); ++j) terms.push_back({scale, basis.col(j)});
  return terms;
}

void ProjectToBallInPlace(ShallowScoreNet& net, double radius) {
  if (!(radius > 0.0)) throw DomainError("project_to_ball: radius must be > 0");
  const double norm = path_norm(net);
  if (norm <= radius) return;
  const double scale = std::sqrt(radius / norm);
  net.mutable_u() *= scale;
  net.mutable_v() *= scale;
}

ShallowScoreNet project_to_ball(const ShallowScoreNet& net, double radius) {
  ShallowScoreNet out = net;
  ProjectToBallInPlace(out, radius);
  return out;
}

ShallowScoreNet EmbedNet(const ShallowScoreNet& latent_net, const Matrix& U) {
  if (U.cols() != latent_net.dim()) throw DomainError("EmbedNet: U columns must match the net dimension");
  return ShallowScoreNet(latent_net.u() * U.transpose(), latent_net.v() * U.transpose());
}

void DsmLossAndGradientInto(const ShallowScoreNet& net, const Eigen::Ref<const Matrix>& xt,
                            const Eigen::Ref<const Matrix>& w, double sigma, DsmGradient& out,
                            DsmWorkspace& ws) {
  if (!(sigma > 0.0)) throw DomainError("dsm gradient: sigma_t must be > 0 (t = 0 is excluded)");
  const double n = static_cast<double>(xt.rows());
  const double m = static_cast<double>(net.width());
  ws.pre.resize(xt.rows(), net.width());
  ws.pre.noalias() = xt * net.v().transpose();
  ws.act = ws.pre.cwiseMax(0.0);
  ws.residual.resize(xt.rows(), net.dim());
  ws.residual.noalias() = ws.act * net.u();
  ws.residual /= m;
  ws.residual += w / sigma;
  out.loss = ws.residual.squaredNorm() / n;
  const double scale = 2.0 / (n * m);
  out.du.resize(net.width(), net.dim());
  out.du.noalias() = ws.act.transpose() * ws.residual;
  out.du *= scale;
  ws.back.resize(xt.rows(), net.width());
  ws.back.noalias() = ws.residual * net.u().transpose();
  ws.back = (ws.pre.array() > 0.0).select(ws.back, 0.0);
  out.dv.resize(net.width(), net.dim());
  out.dv.noalias() = ws.back.transpose() * xt;
  out.dv *= scale;
}

DsmGradient DsmLossAndGradient(const ShallowScoreNet& net, const Eigen::Ref<const Matrix>& xt,
                               const Eigen::Ref<const Matrix>& w, double sigma) {
  DsmGradient g;
  DsmWorkspace ws;
  DsmLossAndGradientInto(net, xt, w, sigma, g, ws);
  return g;
}

double DsmLoss(const ShallowScoreNet& net, const Eigen::Ref<const Matrix>& xt,
               const Eigen::Ref<const Matrix>& w, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("dsm loss: sigma_t must be > 0 (t = 0 is excluded)");
  // Chunked so the n x m activation matrix is never materialized at once.
  constexpr Index kChunk = 256;
  const double m = static_cast<double>(net.width());
  Matrix act(std::min<Index>(kChunk, xt.rows()), net.width());
  Matrix residual(act.rows(), net.dim());
  double total = 0.0;
  for (Index start = 0; start < xt.rows(); start += kChunk) {
    const Index len = std::min<Index>(kChunk, xt.rows() - start);
    act.topRows(len).noalias() = xt.middleRows(start, len) * net.v().transpose();
    act.topRows(len) = act.topRows(len).cwiseMax(0.0);
    residual.topRows(len).noalias() = act.topRows(len) * net.u();
    total += (residual.topRows(len) / m + w.middleRows(start, len) / sigma).squaredNorm();
  }
  return total / static_cast<double>(xt.rows());
}

DsmGradient dsm_gradient(const ShallowScoreNet& net, const TrainingSet& batch) {
  const double sigma = ou_coefficients(batch.t).sigma;
  return DsmLossAndGradient(net, batch.xt, batch.w, sigma);
}

void WriteCheckpoint(const ShallowScoreNet& net, double t, const std::filesystem::path& path,
                     const std::string& fingerprint) {
  const double pn = path_norm(net);
  {
    auto os = io::OpenForWrite(path, true);
    io::WriteU64(os, static_cast<std::uint64_t>(net.width()));
    io::WriteU64(os, static_cast<std::uint64_t>(net.dim()));
    io::WriteF64(os, t);
    io::WriteF64(os, pn);
    io::WriteMatrixRowMajor(os, net.u());
    io::WriteMatrixRowMajor(os, net.v());
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path.string());
  }
  nlohmann::json side = {{"fingerprint", fingerprint},
                         {"width", net.width()},
                         {"dim", net.dim()},
                         {"t", t},
                         {"path_norm", pn}};
  auto js = io::OpenForWrite(path.string() + ".json");
  js << side.dump(2) << '\n';
}

Checkpoint ReadCheckpoint(const std::filesystem::path& path) {
  auto is = io::OpenForRead(path, true);
  Checkpoint c;
  const auto m = static_cast<Index>(io::ReadU64(is));
  const auto D = static_cast<Index>(io::ReadU64(is));
  c.t = io::ReadF64(is);
  c.path_norm = io::ReadF64(is);
  Matrix u = io::ReadMatrixRowMajor(is, m, D);
  Matrix v = io::ReadMatrixRowMajor(is, m, D);
  c.net = ShallowScoreNet(std::move(u), std::move(v));
  return c;
}

}  // namespace ldiff
