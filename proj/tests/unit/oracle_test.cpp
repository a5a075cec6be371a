#include "ldiff/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "ldiff/schedule.hpp"

namespace ldiff {
namespace {

double RelErr(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

LatentMixture RandomMixture(int dim, int K, Rng& rng) {
  std::vector<GaussianComponent> comps;
  std::vector<double> w(K);
  double total = 0.0;
  for (auto& x : w) total += (x = 0.2 + rng.Uniform());
  for (int k = 0; k < K; ++k) {
    const Matrix B = rng.Gaussian(dim, dim);
    comps.push_back({w[k] / total, rng.GaussianVector(dim), 0.2 * Matrix::Identity(dim, dim) + 0.3 * B * B.transpose()});
  }
  return LatentMixture(dim, comps);
}

Vector FdGradient(const std::function<double(const Vector&)>& f, const Vector& z, double h = 1e-5) {
  Vector g(z.size());
  for (Index i = 0; i < z.size(); ++i) {
    Vector p = z, m = z;
    p(i) += h;
    m(i) -= h;
    g(i) = (f(p) - f(m)) / (2.0 * h);
  }
  return g;
}

TEST(MixtureScoreTest, StandardNormalIsStationary) {
  const LatentMixture normal = LatentMixture::StandardNormal(3);
  Rng rng(1);
  for (double t : {0.0, 0.01, 0.5, 3.0}) {
    const MixtureAtTime mix(normal, t);
    const Vector z = rng.GaussianVector(3);
    EXPECT_LE((mixture_score(mix, z) + z).norm(), 1e-13 * (1.0 + z.norm()));
  }
}

TEST(MixtureScoreTest, SymmetricPointMasses) {
  Matrix pts(2, 2);
  pts << 1.0, -2.0, -1.0, 2.0;
  const MixtureAtTime mix(LatentMixture::PointMasses({0.5, 0.5}, pts), 0.3);
  EXPECT_LE(mixture_score(mix, Vector::Zero(2)).norm(), 1e-15);
}

TEST(MixtureScoreTest, MatchesFiniteDifferencesOfLogDensity) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const MixtureAtTime mix(RandomMixture(2, 3, rng), 0.05 + rng.Uniform());
    for (int i = 0; i < 10; ++i) {
      const Vector z = 1.5 * rng.GaussianVector(2);
      const Vector fd = FdGradient([&](const Vector& p) { return mix.LogDensity(p); }, z);
      EXPECT_LE(RelErr(mixture_score(mix, z), fd), 1e-6);
    }
  }
}

TEST(MixtureScoreTest, FarTailsStayFinite) {
  Matrix pts(2, 1);
  pts << -1.0, 1.0;
  const MixtureAtTime mix(LatentMixture::PointMasses({0.5, 0.5}, pts), 0.01);
  const Vector s = mixture_score(mix, Vector::Constant(1, 200.0));
  EXPECT_TRUE(s.allFinite());
  // Dominated by the right atom: (m - x) / sigma^2.
  const auto c = ou_coefficients(0.01);
  EXPECT_NEAR(s(0), (c.m - 200.0) / (c.sigma * c.sigma), 1e-6 * std::abs(s(0)));
}

TEST(MixtureScoreTest, DegenerateAtTimeZero) {
  EXPECT_THROW(MixtureAtTime(LatentMixture::PointMasses({1.0}, Matrix::Zero(1, 2)), 0.0), DomainError);
}

TEST(AmbientSubspaceScoreTest, GaussianLatentClosedForm) {
  Rng rng(3);
  const Matrix U = random_orthonormal(5, 2, rng);
  const Matrix P = U * U.transpose();
  for (double t : {0.1, 1.0, 20.0}) {
    const MixtureAtTime lat(LatentMixture::StandardNormal(2), t);
    const Vector x = rng.GaussianVector(5);
    const double s2 = std::pow(ou_coefficients(t).sigma, 2);
    const Vector expected = -P * x - (x - P * x) / s2;
    const Vector got = ambient_score_subspace(U, [&](const Vector& z) { return lat.Score(z); }, x, t);
    EXPECT_LE(RelErr(got, expected), 1e-13);
    if (t == 20.0) EXPECT_LE(RelErr(got, -x), 1e-12);
  }
}

TEST(AmbientSubspaceScoreTest, RangeOfUHasNoNormalTerm) {
  Rng rng(4);
  const Matrix U = random_orthonormal(4, 2, rng);
  const Vector x = U * rng.GaussianVector(2);
  const auto zero_latent = [](const Vector& z) { return Vector::Zero(z.size()); };
  EXPECT_LE(ambient_score_subspace(U, zero_latent, x, 0.2).norm(), 1e-15);
  EXPECT_THROW(ambient_score_subspace(U, zero_latent, x, 0.0), DomainError);
}

TEST(AmbientSubspaceScoreTest, PointMassesAgreeWithDirectAmbientMixture) {
  Rng rng(5);
  const int D = 6, d = 2;
  const Matrix U = random_orthonormal(D, d, rng);
  const Matrix pts = rng.Gaussian(3, d);
  const LatentMixture latent = LatentMixture::PointMasses({0.2, 0.5, 0.3}, pts);
  const LatentMixture ambient = latent.Transformed(U);
  for (int i = 0; i < 100; ++i) {
    const double t = 0.01 + 5.0 * rng.Uniform();
    const Vector x = 2.0 * rng.GaussianVector(D);
    const MixtureAtTime lat(latent, t);
    const Vector a = ambient_score_subspace(U, [&](const Vector& z) { return lat.Score(z); }, x, t);
    const Vector b = MixtureAtTime(ambient, t).Score(x);
    EXPECT_LE(RelErr(a, b), 1e-8);
  }
}

TEST(AmbientIndependentScoreTest, SingleGroupAndGaussianGroups) {
  Rng rng(6);
  const Matrix U = random_orthonormal(3, 3, rng);
  const double t = 0.4;
  const MixtureAtTime full(RandomMixture(3, 2, rng), t);
  const Vector x = rng.GaussianVector(3);
  const Vector one = ambient_score_independent(U, {[&](const Vector& z) { return full.Score(z); }}, {{0, 3}}, x, t);
  EXPECT_LE(RelErr(one, U * full.Score(U.transpose() * x)), 1e-14);

  const MixtureAtTime g1(LatentMixture::StandardNormal(1), t), g2(LatentMixture::StandardNormal(2), t);
  const Vector iso = ambient_score_independent(
      U, {[&](const Vector& z) { return g1.Score(z); }, [&](const Vector& z) { return g2.Score(z); }},
      SelectorsFromDims({1, 2}), x, t);
  EXPECT_LE(RelErr(iso, -x), 1e-13);

  EXPECT_THROW(ambient_score_independent(U, {[&](const Vector& z) { return g1.Score(z); }}, {{0, 2}}, x, t),
               ModelError);
}

TEST(AmbientIndependentScoreTest, PointMassGroupsMatchTweedie) {
  Rng rng(7);
  const Matrix U = random_orthonormal(3, 3, rng);
  Matrix p1(2, 1), p2(3, 2);
  p1 << -0.7, 0.9;
  p2 = rng.Gaussian(3, 2);
  const std::vector<double> w1{0.4, 0.6}, w2{0.3, 0.3, 0.4};
  // Product measure atoms in R^3.
  WeightedAtoms atoms{Vector(6), Matrix(6, 3)};
  int row = 0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j, ++row) {
      atoms.weights(row) = w1[i] * w2[j];
      Vector z(3);
      z << p1(i, 0), p2.row(j).transpose();
      atoms.points.row(row) = (U * z).transpose();
    }
  }
  const LatentMixture l1 = LatentMixture::PointMasses(w1, p1), l2 = LatentMixture::PointMasses(w2, p2);
  for (int i = 0; i < 100; ++i) {
    const double t = 0.01 + 5.0 * rng.Uniform();
    const MixtureAtTime m1(l1, t), m2(l2, t);
    const Vector x = 1.5 * rng.GaussianVector(3);
    const Vector a = ambient_score_independent(
        U, {[&](const Vector& z) { return m1.Score(z); }, [&](const Vector& z) { return m2.Score(z); }},
        SelectorsFromDims({1, 2}), x, t);
    EXPECT_LE(RelErr(a, tweedie_score(atoms, x, t)), 1e-8);
  }
}

TEST(TweedieScoreTest, Examples) {
  const double t = 0.6;
  const double s2 = std::pow(ou_coefficients(t).sigma, 2);
  const Vector x = (Vector(3) << 0.3, -1.2, 2.0).finished();
  const WeightedAtoms origin{Vector::Ones(1), Matrix::Zero(1, 3)};
  EXPECT_LE(RelErr(tweedie_score(origin, x, t), -x / s2), 1e-15);

  WeightedAtoms sym{Vector::Constant(2, 0.5), Matrix(2, 3)};
  sym.points << 1.0, 2.0, -0.5, -1.0, -2.0, 0.5;
  EXPECT_LE(tweedie_score(sym, Vector::Zero(3), t).norm(), 1e-15);

  Rng rng(8);
  WeightedAtoms atoms{(Vector(3) << 0.2, 0.3, 0.5).finished(), rng.Gaussian(3, 4)};
  const LatentMixture mix = LatentMixture::PointMasses({0.2, 0.3, 0.5}, atoms.points);
  for (int i = 0; i < 50; ++i) {
    const double tt = 0.05 + 3.0 * rng.Uniform();
    const Vector y = rng.GaussianVector(4);
    EXPECT_LE(RelErr(tweedie_score(atoms, y, tt), MixtureAtTime(mix, tt).Score(y)), 1e-10);
  }
}

TEST(GaussianAmbientScoreTest, Examples) {
  const Vector x = (Vector(2) << 1.5, -0.5).finished();
  EXPECT_LE((gaussian_ambient_score(Vector::Zero(2), Matrix::Identity(2, 2), x) + x).norm(), 1e-15);
  EXPECT_LE((gaussian_ambient_score(Vector::Zero(2), 4.0 * Matrix::Identity(2, 2), x) + x / 4.0).norm(), 1e-15);
  EXPECT_THROW(gaussian_ambient_score(Vector::Zero(2), Matrix::Zero(2, 2), x), DomainError);

  Rng rng(9);
  const Matrix B = rng.Gaussian(3, 3);
  const Matrix cov = B * B.transpose() + 0.5 * Matrix::Identity(3, 3);
  const Vector mean = rng.GaussianVector(3);
  const Eigen::LLT<Matrix> llt(cov);
  auto logp = [&](const Vector& y) { return -0.5 * (y - mean).dot(llt.solve(y - mean)); };
  const Vector y = rng.GaussianVector(3);
  EXPECT_LE(RelErr(gaussian_ambient_score(mean, cov, y), FdGradient(logp, y)), 1e-6);
}

TEST(ScoreOracleTest, ThreeConstructionsAgree) {
  Rng rng(10);
  const Matrix U = random_orthonormal(4, 2, rng);
  const Matrix pts = rng.Gaussian(2, 2);
  const LatentMixture latent = LatentMixture::PointMasses({0.5, 0.5}, pts);
  const SubspaceModel model(U, latent);
  const double t = 0.3;
  const ScoreOracle a = ScoreOracle::ForSubspace(model, t);
  const ScoreOracle b = ScoreOracle::ForAtoms({Vector::Constant(2, 0.5), pts * U.transpose()}, t);
  const Matrix x = rng.Gaussian(30, 4);
  const Matrix sa = a.Batch(x), sb = b.Batch(x);
  EXPECT_LE((sa - sb).norm() / sb.norm(), 1e-10);
  EXPECT_EQ(a.kind(), ScoreOracle::Kind::kClosedFormSubspace);
  EXPECT_EQ(a.dim(), 4);
}

TEST(ScoreOracleTest, SamplePtMatchesGaussianMarginal) {
  const double t = 0.8;
  const ScoreOracle g = ScoreOracle::ForGaussian(Vector::Zero(3), 4.0 * Matrix::Identity(3, 3), t);
  Rng rng(11);
  const TrainingSet s = g.SamplePt(100000, rng);
  const auto c = ou_coefficients(t);
  const double var = c.m * c.m * 4.0 + c.sigma * c.sigma;
  EXPECT_LE((SampleCovariance(s.xt) - var * Matrix::Identity(3, 3)).norm(), 3.0 * 3.0 * var / std::sqrt(1e5));
  EXPECT_NEAR((g(Vector::Ones(3)) + Vector::Ones(3) / var).norm(), 0.0, 1e-14);
}

}  // namespace
}  // namespace ldiff
