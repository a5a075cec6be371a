#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ldiff/harness/records.hpp"

namespace ldiff::harness {

/// Value of a named record field: "risk" (eval-time score risk), "loss",
/// "residual", "energy", "weighted_score_error" or "whitening_error". NaN when
/// the record does not carry it; ConfigError for an unknown name.
double RecordField(const ExperimentRecord& record, const std::string& field);

struct RateFit {
  double slope = 0.0;
  double se = 0.0;  // bootstrap over seeds
  double intercept = 0.0;
  std::vector<long long> n;
  std::vector<double> median;
  std::vector<int> seeds;  // per n
  /// Slopes between consecutive n values.
  std::vector<double> local_slopes;
  /// Heuristic: every local slope is negative and within 0.25 of the fit.
  bool power_law_regime = false;
};

/// Least-squares slope of log(median over seeds) against log n for the
/// records with the given (D, d). The SE is the standard deviation over
/// `bootstrap` resamplings of the seeds at each n (fixed RNG seed). Throws
/// DomainError with fewer than 3 distinct n or fewer than 3 seeds at some n.
RateFit fit_rate_exponent(const std::vector<ExperimentRecord>& records, int D, int d,
                          const std::string& field = "risk", int bootstrap = 500,
                          std::uint64_t rng_seed = 20240917);

struct ReportOutputs {
  std::filesystem::path summary_csv;
  std::filesystem::path rates_csv;
  std::filesystem::path plot_svg;
};

/// summary.csv (one row per fingerprint, D, d, n), rates.csv (one row per
/// fingerprint, D, d; slope columns empty when the grid is too small) and
/// risk_vs_n.svg. Reads nothing but `records`.
ReportOutputs WriteReport(const std::vector<ExperimentRecord>& records, const std::filesystem::path& out_dir);

}  // namespace ldiff::harness
