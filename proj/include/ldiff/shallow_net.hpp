#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ldiff/common.hpp"
#include "ldiff/targets.hpp"

namespace ldiff {

/// Bias-free shallow ReLU network with mean-field scaling,
///   f(x) = (1/m) sum_i u_i relu(<v_i, x>),
/// mapping R^D to R^D. Row i of u() and v() holds neuron i.
class ShallowScoreNet {
 public:
  ShallowScoreNet() = default;
  ShallowScoreNet(Matrix u, Matrix v);

  static ShallowScoreNet Zero(int width, int dim);
  /// u_i, v_i iid uniform on the sphere of radius `radius`.
  static ShallowScoreNet RandomSphere(int width, int dim, double radius, Rng& rng);

  int width() const { return static_cast<int>(u_.rows()); }
  int dim() const { return static_cast<int>(u_.cols()); }
  const Matrix& u() const { return u_; }
  const Matrix& v() const { return v_; }
  Matrix& mutable_u() { return u_; }
  Matrix& mutable_v() { return v_; }

  Vector operator()(const Vector& x) const;
  /// Row-wise forward pass over an n x D batch.
  Matrix Forward(const Matrix& x) const;

 private:
  Matrix u_;
  Matrix v_;
};

inline Vector net_forward(const ShallowScoreNet& net, const Vector& x) { return net(x); }

/// (1/m) sum_i ||u_i|| ||v_i||. Upper bound on the F1 norm of the function.
double path_norm(const ShallowScoreNet& net);

/// One term c a a^T of a symmetric linear map; `direction` must be unit norm.
struct RankOneTerm {
  double coefficient = 0.0;
  Vector direction;
};

/// Exact ReLU representation of x -> sum_k c_k a_k a_k^T x using the pairing
/// relu(s) - relu(-s) = s. Width is 2 * terms.size(); path norm 2 sum |c_k|.
/// Throws DomainError if some direction is not unit norm (tolerance 1e-12).
ShallowScoreNet exact_linear_net(const std::vector<RankOneTerm>& terms, int dim);

/// Orthonormal basis (D x (D-d)) of the orthogonal complement of range(U).
Matrix ComplementBasis(const Matrix& U);

/// Terms for x -> scale * (I - U U^T) x.
std::vector<RankOneTerm> ComplementProjectorTerms(const Matrix& U, double scale);

/// Rescales every u_i and v_i by sqrt(R / path_norm) when the path norm
/// exceeds R, which scales the function by R / path_norm. Identity otherwise.
ShallowScoreNet project_to_ball(const ShallowScoreNet& net, double radius);
void ProjectToBallInPlace(ShallowScoreNet& net, double radius);

/// Lifts a net on R^d to x -> U f(U^T x) on R^D by u_i <- U u_i, v_i <- U v_i.
ShallowScoreNet EmbedNet(const ShallowScoreNet& latent_net, const Matrix& U);

/// Empirical DSM loss and its exact gradient with respect to (u, v).
struct DsmGradient {
  double loss = 0.0;
  Matrix du;
  Matrix dv;
};

/// Scratch buffers reused across gradient evaluations of the same shape.
struct DsmWorkspace {
  Matrix pre;       // n x m pre-activations
  Matrix act;       // n x m
  Matrix residual;  // n x D
  Matrix back;      // n x m
};

/// Loss (1/n) sum ||f(x_t^i) + w^i / sigma||^2 and gradient, evaluated on the
/// given rows. The ReLU subgradient at 0 is taken as 0.
void DsmLossAndGradientInto(const ShallowScoreNet& net, const Eigen::Ref<const Matrix>& xt,
                            const Eigen::Ref<const Matrix>& w, double sigma, DsmGradient& out,
                            DsmWorkspace& ws);
DsmGradient DsmLossAndGradient(const ShallowScoreNet& net, const Eigen::Ref<const Matrix>& xt,
                               const Eigen::Ref<const Matrix>& w, double sigma);
double DsmLoss(const ShallowScoreNet& net, const Eigen::Ref<const Matrix>& xt,
               const Eigen::Ref<const Matrix>& w, double sigma);

/// Gradient over a whole training set. Throws DomainError at t = 0.
DsmGradient dsm_gradient(const ShallowScoreNet& net, const TrainingSet& batch);

/// Binary checkpoint: u64 m, u64 D, f64 t, f64 path norm (little-endian),
/// then row-major u and v. A JSON sidecar `<path>.json` carries the
/// fingerprint and the same scalars.
struct Checkpoint {
  ShallowScoreNet net;
  double t = 0.0;
  double path_norm = 0.0;
};

void WriteCheckpoint(const ShallowScoreNet& net, double t, const std::filesystem::path& path,
                     const std::string& fingerprint = "");
Checkpoint ReadCheckpoint(const std::filesystem::path& path);

}  // namespace ldiff
