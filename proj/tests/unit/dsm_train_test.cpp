#include "ldiff/dsm_train.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "ldiff/metrics.hpp"
#include "ldiff/sampler.hpp"

namespace ldiff {
namespace {

namespace fs = std::filesystem;

// -x on R^D as a width-2D paired net.
ShallowScoreNet MinusIdentity(int D) {
  std::vector<RankOneTerm> terms;
  for (int k = 0; k < D; ++k) terms.push_back({-1.0, Vector::Unit(D, k)});
  return exact_linear_net(terms, D);
}

TrainingSet GaussianSet(int D, double t, Index n, std::uint64_t seed) {
  Rng rng(seed);
  const Matrix x0 = rng.Gaussian(n, D);
  return forward_corrupt(x0, t, rng);
}

TEST(DsmLossTest, ZeroNetAndExactScore) {
  const int D = 4;
  const double t = 0.5;
  const auto c = ou_coefficients(t);
  const double s2 = c.sigma * c.sigma;
  const TrainingSet set = GaussianSet(D, t, 100000, 1);

  auto mc = [&](const ShallowScoreNet& net) {
    const Matrix r = net.Forward(set.xt) + set.w / c.sigma;
    std::vector<double> q(set.size());
    for (Index i = 0; i < set.size(); ++i) q[i] = r.row(i).squaredNorm();
    return MeanAndStandardError(q);
  };
  const MeanSe zero = mc(ShallowScoreNet::Zero(3, D));
  EXPECT_NEAR(dsm_loss(ShallowScoreNet::Zero(3, D), set), zero.mean, 1e-12 * zero.mean);
  EXPECT_LE(std::abs(zero.mean - D / s2), 3.0 * zero.se);

  const MeanSe exact = mc(MinusIdentity(D));
  EXPECT_LE(std::abs(exact.mean - D * c.m * c.m / s2), 3.0 * exact.se);

  const TrainingSet one{t, Matrix::Zero(1, D), Matrix::Zero(1, D), Matrix::Zero(1, D)};
  EXPECT_EQ(dsm_loss(ShallowScoreNet::Zero(2, D), one), 0.0);
}

TEST(EstimateCtTest, GaussianClosedForm) {
  const int D = 3;
  Rng rng(2);
  for (double t : {0.2, 0.5, 1.5}) {
    const auto c = ou_coefficients(t);
    const ScoreOracle oracle = ScoreOracle::ForGaussian(Vector::Zero(D), Matrix::Identity(D, D), t);
    const MeanSe ct = estimate_Ct(oracle, t, 100000, rng);
    EXPECT_LE(std::abs(ct.mean - D * c.m * c.m / (c.sigma * c.sigma)), 3.0 * ct.se) << t;
    EXPECT_LE(ct.mean, D / (c.sigma * c.sigma) + 3.0 * ct.se);
  }
  const ScoreOracle late = ScoreOracle::ForGaussian(Vector::Zero(D), Matrix::Identity(D, D), 20.0);
  EXPECT_NEAR(estimate_Ct(late, 20.0, 10000, rng).mean, 0.0, 1e-6);
}

TEST(EstimateCtTest, BoundHoldsForMixtures) {
  Rng rng(3);
  const Matrix U = random_orthonormal(5, 2, rng);
  const SubspaceModel model(U, LatentMixture::PointMasses({0.3, 0.7}, rng.Gaussian(2, 2)));
  for (double t : {0.05, 0.5, 2.0}) {
    const MeanSe ct = estimate_Ct(ScoreOracle::ForSubspace(model, t), t, 20000, rng);
    const double s2 = std::pow(ou_coefficients(t).sigma, 2);
    EXPECT_LE(ct.mean, 5.0 / s2 + 3.0 * ct.se);
  }
  EXPECT_THROW(estimate_Ct(ScoreOracle::ForSubspace(model, 0.5), 0.4, 10, rng), DomainError);
}

TEST(RiskFromLossTest, ExactScoreHasZeroRisk) {
  const int D = 4;
  const double t = 0.5;
  const auto c = ou_coefficients(t);
  const double ct = D * c.m * c.m / (c.sigma * c.sigma);
  EXPECT_EQ(risk_from_loss(ct, ct), 0.0);
  const TrainingSet set = GaussianSet(D, t, 200000, 4);
  const double risk = risk_from_loss(dsm_loss(MinusIdentity(D), set), ct);
  EXPECT_LE(std::abs(risk), 0.05 * ct);
}

TrainConfig SmallConfig() {
  TrainConfig cfg;
  cfg.width = 16;
  cfg.epochs = 5;
  cfg.batch_size = 32;
  cfg.radius_mode = RadiusMode::kFixed;
  cfg.fixed_radius = 50.0;
  cfg.seed = 7;
  return cfg;
}

TEST(TrainTest, ZeroStepSizeLeavesNetUnchanged) {
  const TrainingSet set = GaussianSet(3, 0.5, 200, 5);
  TrainConfig cfg = SmallConfig();
  cfg.step_size = 0.0;
  cfg.optimizer = Optimizer::kProjectedGd;
  const TrainResult r = train_one_timestep(set, cfg, 50.0);
  ASSERT_EQ(r.trace.size(), 6u);
  for (const auto& e : r.trace) EXPECT_EQ(e.loss, r.trace.front().loss);
  Rng rng = Rng::Stream(cfg.seed, 0);
  const ShallowScoreNet init = ShallowScoreNet::RandomSphere(cfg.width, 3, cfg.r_init, rng);
  EXPECT_EQ(r.net.u(), init.u());
  EXPECT_EQ(r.net.v(), init.v());
}

TEST(TrainTest, TinyRadiusIsActive) {
  const TrainingSet set = GaussianSet(3, 0.5, 200, 6);
  const TrainResult r = train_one_timestep(set, SmallConfig(), 1e-3);
  EXPECT_NEAR(path_norm(r.net), 1e-3, 1e-15);
  for (const auto& e : r.trace) EXPECT_LE(e.path_norm, 1e-3 * (1.0 + 1e-12));
}

TEST(TrainTest, ProjectedGdTraceIsMonotone) {
  const TrainingSet set = GaussianSet(4, 0.5, 500, 7);
  TrainConfig cfg = SmallConfig();
  cfg.optimizer = Optimizer::kProjectedGd;
  cfg.batch_size = 0;
  cfg.step_size = 1e-3;
  cfg.epochs = 40;
  const TrainResult r = train_one_timestep(set, cfg, 50.0);
  for (size_t k = 1; k < r.trace.size(); ++k) EXPECT_LE(r.trace[k].loss, r.trace[k - 1].loss) << k;
  EXPECT_LT(r.trace.back().loss, r.trace.front().loss);
}

TEST(TrainTest, DeterministicGivenSeed) {
  const TrainingSet set = GaussianSet(3, 0.5, 300, 8);
  const TrainResult a = train_one_timestep(set, SmallConfig(), 50.0);
  const TrainResult b = train_one_timestep(set, SmallConfig(), 50.0);
  EXPECT_EQ(a.net.u(), b.net.u());
  EXPECT_EQ(a.final_loss, b.final_loss);
}

TEST(TrainTest, RejectsBadInputs) {
  const TrainingSet set = GaussianSet(3, 0.5, 50, 9);
  TrainConfig cfg = SmallConfig();
  EXPECT_THROW(train_one_timestep(set, cfg, 0.0), DomainError);
  cfg.width = 0;
  EXPECT_THROW(train_one_timestep(set, cfg, 1.0), ConfigError);
  EXPECT_THROW(train_one_timestep(GaussianSet(3, 0.0, 50, 9), SmallConfig(), 1.0), DomainError);
}

TEST(TrainTest, GaussianRegressionBound) {
  const int D = 4;
  const double t = 0.5;
  const TrainingSet set = GaussianSet(D, t, 4000, 10);
  TrainConfig cfg;
  cfg.width = 256;
  cfg.epochs = 60;
  cfg.batch_size = 256;
  cfg.step_size = 1e-2;
  cfg.step_schedule = StepSchedule::kCosine;
  cfg.radius_schedule = {8.0, D, D};
  cfg.seed = 11;
  const TrainResult r = train_one_timestep(set, cfg, RadiusFor(cfg, t, set.size()));
  const ScoreOracle oracle = ScoreOracle::ForGaussian(Vector::Zero(D), Matrix::Identity(D, D), t);
  Rng rng(12);
  const RiskEstimate risk = score_risk(NetScore(r.net), oracle, t, 10000, rng);
  EXPECT_LE(risk.estimate, 0.1 * D);
}

TEST(TrainAllTest, CardinalityAndWorkerIndependence) {
  const TimeGrid grid = make_time_grid({2.0, 4, 0.25, 2.0, 1.0});
  const Matrix x0 = Rng(13).Gaussian(200, 3);
  TrainConfig cfg = SmallConfig();
  cfg.radius_mode = RadiusMode::kSchedule;
  cfg.radius_schedule = {2.0, 3, 3};
  std::vector<TrainingTrace> traces;
  const ScoreModelSet serial = train_all_timesteps(grid, x0, cfg, &traces);
  ASSERT_EQ(serial.entries().size(), 4u);
  EXPECT_EQ(traces.size(), 4u);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(serial.entries()[k].t, grid.forward_times[k]);
    EXPECT_NE(serial.Find(grid.forward_times[k]), nullptr);
  }
  EXPECT_EQ(serial.Find(0.123), nullptr);
  // Forward times decrease along the grid, so radii must not decrease.
  for (int k = 1; k < 4; ++k) EXPECT_GE(serial.entries()[k].radius, serial.entries()[k - 1].radius);

  cfg.workers = 3;
  const ScoreModelSet parallel = train_all_timesteps(grid, x0, cfg);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(parallel.entries()[k].net.u(), serial.entries()[k].net.u());
    EXPECT_EQ(parallel.entries()[k].net.v(), serial.entries()[k].net.v());
  }

  const fs::path dir = fs::temp_directory_path() / "ldiff_models_test";
  fs::remove_all(dir);
  serial.Save(dir, "feedbeef");
  const ScoreModelSet back = ScoreModelSet::Load(dir);
  ASSERT_EQ(back.entries().size(), 4u);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(back.entries()[k].t, serial.entries()[k].t);
    EXPECT_EQ(back.entries()[k].net.u(), serial.entries()[k].net.u());
  }
  fs::remove_all(dir);
}

TEST(TraceTest, JsonLines) {
  TrainingTrace trace{{0, 1.5, 2.0, 0.0}, {1, 1.25, 2.0, 0.5}};
  std::ostringstream os;
  WriteTraceJsonl(trace, 0.5, os);
  const std::string s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 2);
  EXPECT_NE(s.find("\"loss\":1.25"), std::string::npos);
}

}  // namespace
}  // namespace ldiff
