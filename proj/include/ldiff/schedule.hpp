#pragma once

#include <vector>

namespace ldiff {

/// Coefficients of the OU interpolant x_t = m x_0 + sigma w.
struct OUCoefficients {
  double t = 0.0;
  double m = 1.0;
  double sigma = 0.0;
};

/// m = exp(-t), sigma = sqrt(1 - exp(-2t)). Throws DomainError for t < 0 or
/// non-finite t.
OUCoefficients ou_coefficients(double t);

struct ScheduleParams {
  double T = 5.0;       // horizon, strictly > 1
  int N = 200;          // even step count, N >= 2 log(1/zeta)
  double zeta = 0.01;   // early-stop time in (0, 1)
  double c0 = 2.0;
  double c1 = 1.0;

  /// Throws ConfigError naming the first violated constraint.
  void Validate() const;
};

/// Reverse-time discretization: linear up to T - 1, then geometric towards
/// T - zeta.
struct TimeGrid {
  double T = 0.0;
  int N = 0;
  double zeta = 0.0;
  std::vector<double> reverse_times;  // tau_0 .. tau_N
  /// Forward time at which the sampler evaluates the score in step k,
  /// forward_times[k] = T - tau_k for k = 0..N-1. Strictly decreasing from T.
  std::vector<double> forward_times;
  std::vector<double> gaps;  // gamma_k = tau_{k+1} - tau_k

  /// kappa = (2(T-1) + 4 log(1/zeta)) / N.
  double Kappa() const;
};

TimeGrid make_time_grid(const ScheduleParams& params);

/// T and N chosen from a target accuracy epsilon:
///   T = c0 log((sqrt(D) v mu0) / eps)
///   N = 2 ceil(c1 (D v mu0^2)/eps^2 (log^2((sqrt(D) v mu0)/eps) + log^2(1/zeta)))
/// N is bumped to the next admissible even value if it falls below
/// 2 log(1/zeta). Throws ConfigError if the resulting T <= 1.
ScheduleParams schedule_from_accuracy(double epsilon, double zeta, int D, double mu0,
                                      double c0 = 2.0, double c1 = 1.0);

/// Hypothesis-class radius R_t = r_bar n^{(d+1)/(2(d+5))} + D / sigma_t^2.
struct RadiusSchedule {
  double r_bar = 1.0;
  int d_latent = 1;
  int ambient_dim = 1;
};

double radius_at(const RadiusSchedule& sched, double t, long long n);

}  // namespace ldiff
