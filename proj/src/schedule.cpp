#include "ldiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ldiff/common.hpp"

namespace ldiff {

OUCoefficients ou_coefficients(double t) {
  if (!std::isfinite(t) || t < 0.0) {
    throw DomainError("ou_coefficients: t must be finite and >= 0, got " + std::to_string(t));
  }
  OUCoefficients c;
  c.t = t;
  c.m = std::exp(-t);
  c.sigma = std::sqrt(-std::expm1(-2.0 * t));
  return c;
}

void ScheduleParams::Validate() const {
  if (!(zeta > 0.0 && zeta < 1.0)) {
    throw ConfigError("schedule: zeta must lie in (0, 1), got " + std::to_string(zeta));
  }
  if (!(T > 1.0) || !std::isfinite(T)) {
    throw ConfigError("schedule: T must be finite and > 1, got " + std::to_string(T));
  }
  if (N <= 0 || N % 2 != 0) {
    throw ConfigError("schedule: N must be a positive even integer, got " + std::to_string(N));
  }
  if (static_cast<double>(N) < 2.0 * std::log(1.0 / zeta)) {
    throw ConfigError("schedule: N must satisfy N >= 2 log(1/zeta) = " +
                      std::to_string(2.0 * std::log(1.0 / zeta)) + ", got " + std::to_string(N));
  }
  if (!(c0 > 0.0) || !(c1 > 0.0)) {
    throw ConfigError("schedule: c0 and c1 must be positive");
  }
}

double TimeGrid::Kappa() const {
  return (2.0 * (T - 1.0) + 4.0 * std::log(1.0 / zeta)) / static_cast<double>(N);
}

TimeGrid make_time_grid(const ScheduleParams& params) {
  params.Validate();
  TimeGrid grid;
  grid.T = params.T;
  grid.N = params.N;
  grid.zeta = params.zeta;
  const int N = params.N;
  const int half = N / 2;
  grid.reverse_times.resize(N + 1);
  for (int i = 0; i <= N; ++i) {
    // 2i/N is exact at i = N/2 (== 1) and i = N (== 2), which pins
    // tau_{N/2} = T - 1 and tau_N = T - zeta bit-exactly.
    const double frac = static_cast<double>(2 * i) / static_cast<double>(N);
    if (i <= half) {
      grid.reverse_times[i] = (params.T - 1.0) * frac;
    } else {
      grid.reverse_times[i] = params.T - std::pow(params.zeta, frac - 1.0);
    }
  }
  grid.forward_times.resize(N);
  grid.gaps.resize(N);
  for (int k = 0; k < N; ++k) {
    grid.forward_times[k] = params.T - grid.reverse_times[k];
    grid.gaps[k] = grid.reverse_times[k + 1] - grid.reverse_times[k];
  }
  return grid;
}

ScheduleParams schedule_from_accuracy(double epsilon, double zeta, int D, double mu0,
                                      double c0, double c1) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("schedule_from_accuracy: epsilon must lie in (0, 1)");
  if (!(zeta > 0.0 && zeta < 1.0)) throw ConfigError("schedule_from_accuracy: zeta must lie in (0, 1)");
  if (D <= 0) throw ConfigError("schedule_from_accuracy: D must be positive");
  if (!(mu0 > 0.0)) throw ConfigError("schedule_from_accuracy: mu0 must be positive");
  if (!(c0 > 0.0) || !(c1 > 0.0)) throw ConfigError("schedule_from_accuracy: c0, c1 must be positive");

  const double scale = std::max(std::sqrt(static_cast<double>(D)), mu0);
  const double log_scale = std::log(scale / epsilon);
  const double log_zeta = std::log(1.0 / zeta);

  ScheduleParams p;
  p.zeta = zeta;
  p.c0 = c0;
  p.c1 = c1;
  p.T = c0 * log_scale;
  if (!(p.T > 1.0)) {
    throw ConfigError("schedule_from_accuracy: derived T = " + std::to_string(p.T) +
                      " is not > 1; increase c0");
  }
  const double moment = std::max(static_cast<double>(D), mu0 * mu0);
  const double inner =
      c1 * moment / (epsilon * epsilon) * (log_scale * log_scale + log_zeta * log_zeta);
  long long N = 2 * static_cast<long long>(std::ceil(inner));
  const long long n_min = 2 * static_cast<long long>(std::ceil(log_zeta));  // even, >= 2 log(1/zeta)
  N = std::max({N, n_min, 2LL});
  if (N > static_cast<long long>(std::numeric_limits<int>::max())) {
    throw ConfigError("schedule_from_accuracy: step count overflows");
  }
  p.N = static_cast<int>(N);
  p.Validate();
  return p;
}

double radius_at(const RadiusSchedule& sched, double t, long long n) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw DomainError("radius_at: t must be > 0 (the radius diverges at t = 0)");
  }
  if (n < 1) throw DomainError("radius_at: n must be >= 1");
  const double d = static_cast<double>(sched.d_latent);
  const double exponent = (d + 1.0) / (2.0 * (d + 5.0));
  const double sigma = ou_coefficients(t).sigma;
  return sched.r_bar * std::pow(static_cast<double>(n), exponent) +
         static_cast<double>(sched.ambient_dim) / (sigma * sigma);
}

}  // namespace ldiff
