#include "ldiff/harness/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "ldiff/oracle.hpp"
#include "ldiff/schedule.hpp"
#include "ldiff/shallow_net.hpp"
#include "ldiff/targets.hpp"

namespace ldiff::harness {

namespace {

double RelErr(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

SelftestCheck CheckOu() {
  double worst = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const auto c = ou_coefficients(0.01 * i);
    worst = std::max(worst, std::abs(c.m * c.m + c.sigma * c.sigma - 1.0));
  }
  std::ostringstream os;
  os << "max |m^2 + sigma^2 - 1| = " << worst;
  return {"ou coefficients", worst <= 4e-16, os.str()};
}

SelftestCheck CheckGrids() {
  Rng rng(11);
  int bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    ScheduleParams p;
    p.T = 1.0 + 0.1 + 9.0 * rng.Uniform();
    p.zeta = std::exp(std::log(1e-4) + rng.Uniform() * (std::log(0.5) - std::log(1e-4)));
    const int min_n = 2 * static_cast<int>(std::ceil(std::log(1.0 / p.zeta)));
    p.N = std::max(2, min_n) + 2 * static_cast<int>(rng.Below(100));
    const TimeGrid g = make_time_grid(p);
    bool ok = g.reverse_times.front() == 0.0 && g.reverse_times[p.N / 2] == p.T - 1.0 &&
              g.reverse_times.back() == p.T - p.zeta;
    const double kappa = g.Kappa();
    for (int k = 0; k < p.N; ++k) {
      ok = ok && g.gaps[k] > 0.0 && g.gaps[k] <= kappa * std::min(1.0, p.T - g.reverse_times[k + 1]) + 1e-12;
    }
    bad += !ok;
  }
  return {"time grid invariants", bad == 0, std::to_string(50 - bad) + "/50 grids"};
}

SelftestCheck CheckOracles() {
  Rng rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 1 + static_cast<int>(rng.Below(3));
    const int D = d + 1 + static_cast<int>(rng.Below(4));
    const int K = 1 + static_cast<int>(rng.Below(4));
    const Matrix U = random_orthonormal(D, d, rng);
    const Matrix points = rng.Gaussian(K, d);
    std::vector<double> w(K);
    double total = 0.0;
    for (auto& x : w) total += (x = 0.2 + rng.Uniform());
    for (auto& x : w) x /= total;
    const LatentMixture latent = LatentMixture::PointMasses(w, points);
    const WeightedAtoms atoms{Eigen::Map<const Vector>(w.data(), K), points * U.transpose()};
    const LatentMixture ambient = latent.Transformed(U);
    for (int i = 0; i < 20; ++i) {
      const double t = 0.05 + 2.0 * rng.Uniform();
      const Vector x = rng.GaussianVector(D);
      const MixtureAtTime lat(latent, t);
      const Vector a = ambient_score_subspace(U, [&](const Vector& z) { return lat.Score(z); }, x, t);
      const Vector b = tweedie_score(atoms, x, t);
      const Vector c = MixtureAtTime(ambient, t).Score(x);
      worst = std::max({worst, RelErr(a, b), RelErr(a, c)});
    }
  }
  std::ostringstream os;
  os << "max rel err " << worst;
  return {"score oracle agreement", worst <= 1e-8, os.str()};
}

SelftestCheck CheckGradient() {
  Rng rng(13);
  double worst = 0.0;
  int compared = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const int D = 2 + static_cast<int>(rng.Below(4));
    const int m = 3 + static_cast<int>(rng.Below(6));
    const int n = 5 + static_cast<int>(rng.Below(10));
    const ShallowScoreNet net(rng.Gaussian(m, D), rng.Gaussian(m, D));
    const Matrix xt = rng.Gaussian(n, D);
    const Matrix w = rng.Gaussian(n, D);
    const double sigma = 0.7;
    const DsmGradient g = DsmLossAndGradient(net, xt, w, sigma);
    const double h = 1e-6;
    const Matrix pre = xt * net.v().transpose();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < D; ++j) {
        for (int which = 0; which < 2; ++which) {
          // Perturbing v_i moves pre-activations by h |x_j|; skip kink crossings.
          if (which == 1 && (pre.col(i).cwiseAbs().array() <= h * xt.col(j).cwiseAbs().array() * 2.0).any()) continue;
          ShallowScoreNet plus = net, minus = net;
          (which == 0 ? plus.mutable_u() : plus.mutable_v())(i, j) += h;
          (which == 0 ? minus.mutable_u() : minus.mutable_v())(i, j) -= h;
          const double fd = (DsmLoss(plus, xt, w, sigma) - DsmLoss(minus, xt, w, sigma)) / (2.0 * h);
          const double an = which == 0 ? g.du(i, j) : g.dv(i, j);
          worst = std::max(worst, std::abs(fd - an) / std::max(1.0, std::abs(an)));
          ++compared;
        }
      }
    }
  }
  std::ostringstream os;
  os << compared << " partials, max rel err " << worst;
  return {"dsm gradient vs finite differences", worst <= 1e-5, os.str()};
}

SelftestCheck CheckLinearNet() {
  Rng rng(14);
  double worst = 0.0, pn_err = 0.0;
  for (const auto& [D, d] : {std::pair{4, 2}, std::pair{8, 3}, std::pair{16, 1}}) {
    const Matrix U = random_orthonormal(D, d, rng);
    const double s2 = std::pow(ou_coefficients(0.3).sigma, 2);
    const ShallowScoreNet net = exact_linear_net(ComplementProjectorTerms(U, -1.0 / s2), D);
    pn_err = std::max(pn_err, std::abs(path_norm(net) - 2.0 * (D - d) / s2) / (2.0 * (D - d) / s2));
    for (int i = 0; i < 10; ++i) {
      const Vector x = rng.GaussianVector(D);
      const Vector expected = -(x - U * (U.transpose() * x)) / s2;
      worst = std::max(worst, (net(x) - expected).norm() / x.norm());
    }
  }
  std::ostringstream os;
  os << "max err/|x| " << worst << ", path norm rel err " << pn_err;
  return {"exact linear net", worst <= 1e-12 && pn_err <= 1e-15, os.str()};
}

}  // namespace

int SelftestReport::passed() const {
  return static_cast<int>(std::count_if(checks.begin(), checks.end(), [](const auto& c) { return c.passed; }));
}

SelftestReport RunSelftest(std::ostream& log) {
  SelftestReport report;
  const std::vector<std::function<SelftestCheck()>> suite = {CheckOu, CheckGrids, CheckOracles, CheckGradient,
                                                             CheckLinearNet};
  for (const auto& run : suite) {
    SelftestCheck c;
    try {
      c = run();
    } catch (const std::exception& e) {
      c = {"(exception)", false, e.what()};
    }
    log << (c.passed ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << '\n';
    report.checks.push_back(std::move(c));
  }
  log << "selftest: " << report.passed() << "/" << report.checks.size() << " checks passed\n";
  return report;
}

}  // namespace ldiff::harness
