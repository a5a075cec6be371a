#include "ldiff/shallow_net.hpp"

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "ldiff/schedule.hpp"

namespace ldiff {
namespace {

namespace fs = std::filesystem;

TEST(ShallowNetTest, ForwardBasics) {
  const ShallowScoreNet zero = ShallowScoreNet::Zero(5, 3);
  EXPECT_EQ(zero(Vector::Ones(3)).norm(), 0.0);

  const ShallowScoreNet single(Matrix::Identity(1, 2), Matrix::Identity(1, 2));
  EXPECT_EQ(single((Vector(2) << 1.5, -3.0).finished()), (Vector(2) << 1.5, 0.0).finished());
  EXPECT_EQ(single((Vector(2) << -1.5, 3.0).finished()), Vector::Zero(2));

  Rng rng(1);
  const ShallowScoreNet net(rng.Gaussian(7, 3), rng.Gaussian(7, 3));
  const Matrix x = rng.Gaussian(11, 3);
  const Matrix batch = net.Forward(x);
  for (Index i = 0; i < x.rows(); ++i) {
    EXPECT_LE((batch.row(i).transpose() - net(x.row(i).transpose())).norm(), 1e-14);
  }
  EXPECT_THROW(ShallowScoreNet(Matrix::Zero(3, 2), Matrix::Zero(2, 2)), std::exception);
}

TEST(ShallowNetTest, HomogeneityAndPathNormBound) {
  Rng rng(2);
  const ShallowScoreNet net(rng.Gaussian(20, 4), rng.Gaussian(20, 4));
  const double pn = path_norm(net);
  for (int i = 0; i < 50; ++i) {
    const Vector x = rng.GaussianVector(4);
    const double c = 3.0 * rng.Uniform();
    EXPECT_LE((net(c * x) - c * net(x)).norm(), 1e-13 * (1.0 + c * x.norm()));
    EXPECT_LE(net(x).norm(), pn * x.norm() * (1.0 + 1e-14));
  }
}

TEST(PathNormTest, Examples) {
  EXPECT_EQ(path_norm(ShallowScoreNet::Zero(4, 2)), 0.0);
  Rng rng(3);
  ShallowScoreNet net(rng.Gaussian(6, 3), rng.Gaussian(6, 3));
  const double before = path_norm(net);
  net.mutable_u().row(2) *= 2.0;
  net.mutable_v().row(2) /= 2.0;
  EXPECT_NEAR(path_norm(net), before, 1e-15 * before);

  const ShallowScoreNet sphere = ShallowScoreNet::RandomSphere(10, 3, 0.5, rng);
  EXPECT_NEAR(path_norm(sphere), 0.25, 1e-15);
}

TEST(ExactLinearNetTest, IdentityInOneDimension) {
  const ShallowScoreNet net = exact_linear_net({{1.0, Vector::Ones(1)}}, 1);
  EXPECT_EQ(net.width(), 2);
  for (double x : {-2.5, 0.0, 1.25}) EXPECT_EQ(net(Vector::Constant(1, x))(0), x);
}

TEST(ExactLinearNetTest, ComplementProjector) {
  Rng rng(4);
  for (const auto& [D, d] : {std::pair{4, 2}, std::pair{8, 3}, std::pair{16, 1}}) {
    const Matrix U = random_orthonormal(D, d, rng);
    const double s2 = std::pow(ou_coefficients(0.5).sigma, 2);
    const ShallowScoreNet net = exact_linear_net(ComplementProjectorTerms(U, -1.0 / s2), D);
    EXPECT_EQ(net.width(), 2 * (D - d));
    EXPECT_NEAR(path_norm(net), 2.0 * (D - d) / s2, 1e-15 * 2.0 * (D - d) / s2);
    for (int i = 0; i < 100; ++i) {
      const Vector x = rng.GaussianVector(D);
      const Vector expected = -(x - U * (U.transpose() * x)) / s2;
      EXPECT_LE((net(x) - expected).cwiseAbs().maxCoeff(), 1e-12 * x.norm());
    }
  }
  EXPECT_THROW(exact_linear_net({{1.0, Vector::Constant(2, 1.0)}}, 2), DomainError);
}

TEST(ProjectionTest, Examples) {
  Rng rng(5);
  const ShallowScoreNet net(rng.Gaussian(8, 3), rng.Gaussian(8, 3));
  const double pn = path_norm(net);

  const ShallowScoreNet same = project_to_ball(net, 2.0 * pn);
  EXPECT_EQ(same.u(), net.u());
  EXPECT_EQ(same.v(), net.v());

  const ShallowScoreNet half = project_to_ball(net, pn / 2.0);
  EXPECT_NEAR(path_norm(half), pn / 2.0, 1e-14 * pn);
  for (int i = 0; i < 20; ++i) {
    const Vector x = rng.GaussianVector(3);
    EXPECT_LE((half(x) - 0.5 * net(x)).norm(), 1e-14 * (1.0 + net(x).norm()));
  }

  const ShallowScoreNet zero = project_to_ball(ShallowScoreNet::Zero(3, 2), 1.0);
  EXPECT_EQ(path_norm(zero), 0.0);
}

TEST(EmbedNetTest, LiftsThroughFrame) {
  Rng rng(6);
  const ShallowScoreNet latent(rng.Gaussian(9, 2), rng.Gaussian(9, 2));
  const Matrix U = random_orthonormal(5, 2, rng);
  const ShallowScoreNet lifted = EmbedNet(latent, U);
  EXPECT_NEAR(path_norm(lifted), path_norm(latent), 1e-14);
  for (int i = 0; i < 20; ++i) {
    const Vector x = rng.GaussianVector(5);
    EXPECT_LE((lifted(x) - U * latent(U.transpose() * x)).norm(), 1e-13);
  }
}

TEST(DsmGradientTest, MatchesCentralDifferences) {
  Rng rng(7);
  const int m = 8, D = 3, n = 16;
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    const ShallowScoreNet net(rng.Gaussian(m, D), rng.Gaussian(m, D));
    const Matrix xt = rng.Gaussian(n, D), w = rng.Gaussian(n, D);
    const double sigma = 0.3 + rng.Uniform();
    const DsmGradient g = DsmLossAndGradient(net, xt, w, sigma);
    EXPECT_NEAR(g.loss, DsmLoss(net, xt, w, sigma), 1e-13 * g.loss);
    const Matrix pre = xt * net.v().transpose();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < D; ++j) {
        for (int which = 0; which < 2; ++which) {
          if (which == 1 && (pre.col(i).cwiseAbs().array() <= 2.0 * h * xt.col(j).cwiseAbs().array()).any()) continue;
          ShallowScoreNet plus = net, minus = net;
          (which == 0 ? plus.mutable_u() : plus.mutable_v())(i, j) += h;
          (which == 0 ? minus.mutable_u() : minus.mutable_v())(i, j) -= h;
          const double fd = (DsmLoss(plus, xt, w, sigma) - DsmLoss(minus, xt, w, sigma)) / (2.0 * h);
          const double an = which == 0 ? g.du(i, j) : g.dv(i, j);
          EXPECT_LE(std::abs(fd - an) / std::max(1.0, std::abs(an)), 1e-5) << which << " " << i << "," << j;
        }
      }
    }
  }
}

TEST(DsmGradientTest, DeadNeuronHasZeroGradient) {
  Rng rng(8);
  Matrix xt = rng.Gaussian(10, 2).cwiseAbs();  // positive orthant
  ShallowScoreNet net(rng.Gaussian(3, 2), rng.Gaussian(3, 2));
  net.mutable_v().row(1) << -1.0, -2.0;  // <v, x> < 0 on every row
  const DsmGradient g = DsmLossAndGradient(net, xt, rng.Gaussian(10, 2), 0.7);
  EXPECT_EQ(g.du.row(1).norm(), 0.0);
  EXPECT_EQ(g.dv.row(1).norm(), 0.0);
}

TEST(DsmGradientTest, ZeroResidualGivesZeroGradient) {
  Rng rng(9);
  const ShallowScoreNet net(rng.Gaussian(4, 3), rng.Gaussian(4, 3));
  const Matrix xt = rng.Gaussian(12, 3);
  const double sigma = 0.8;
  const Matrix w = -sigma * net.Forward(xt);
  const DsmGradient g = DsmLossAndGradient(net, xt, w, sigma);
  EXPECT_LE(g.loss, 1e-28);
  EXPECT_LE(g.du.norm() + g.dv.norm(), 1e-14);
}

TEST(DsmGradientTest, WorkspaceReuseIsExact) {
  Rng rng(10);
  const ShallowScoreNet net(rng.Gaussian(16, 4), rng.Gaussian(16, 4));
  DsmWorkspace ws;
  DsmGradient out;
  for (int n : {30, 7, 30}) {
    const Matrix xt = rng.Gaussian(n, 4), w = rng.Gaussian(n, 4);
    DsmLossAndGradientInto(net, xt, w, 0.5, out, ws);
    const DsmGradient fresh = DsmLossAndGradient(net, xt, w, 0.5);
    EXPECT_EQ(out.loss, fresh.loss);
    EXPECT_EQ(out.du, fresh.du);
    EXPECT_EQ(out.dv, fresh.dv);
  }
}

TEST(DsmGradientTest, ChunkedLossMatchesDirectFormula) {
  Rng rng(11);
  const ShallowScoreNet net(rng.Gaussian(5, 2), rng.Gaussian(5, 2));
  const Matrix xt = rng.Gaussian(1000, 2), w = rng.Gaussian(1000, 2);
  const double direct = (net.Forward(xt) + w / 0.9).rowwise().squaredNorm().mean();
  EXPECT_NEAR(DsmLoss(net, xt, w, 0.9), direct, 1e-12 * direct);
}

TEST(CheckpointTest, RoundTrip) {
  Rng rng(12);
  const ShallowScoreNet net(rng.Gaussian(6, 3), rng.Gaussian(6, 3));
  const fs::path path = fs::temp_directory_path() / "ldiff_net_test.bin";
  WriteCheckpoint(net, 0.25, path, "abc");
  const Checkpoint back = ReadCheckpoint(path);
  EXPECT_EQ(back.net.u(), net.u());
  EXPECT_EQ(back.net.v(), net.v());
  EXPECT_EQ(back.t, 0.25);
  EXPECT_EQ(back.path_norm, path_norm(net));
  fs::remove(path);
  fs::remove(fs::path(path.string() + ".json"));
}

}  // namespace
}  // namespace ldiff
