#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ldiff/common.hpp"
#include "ldiff/dsm_train.hpp"
#include "ldiff/oracle.hpp"
#include "ldiff/sampler.hpp"
#include "ldiff/schedule.hpp"

namespace ldiff {

/// Monte Carlo estimate of E_{x_t} ||s(x_t) - grad log p_t(x_t)||^2.
struct RiskEstimate {
  double t = 0.0;
  double estimate = 0.0;
  double se = 0.0;
  Index n_mc = 0;
};

RiskEstimate score_risk(const BatchScoreFn& model, const ScoreOracle& oracle, double t, Index n_mc, Rng& rng);

/// Risk on given points, for callers that control the draws.
RiskEstimate ScoreRiskOn(const BatchScoreFn& model, const ScoreOracle& oracle, const Matrix& xt);

using OracleFamily = std::function<ScoreOracle(double)>;

struct WeightedScoreError {
  struct Row {
    int k = 0;
    double t = 0.0;      // forward time T - tau_k
    double gamma = 0.0;
    RiskEstimate risk;
    double contribution = 0.0;  // gamma_k * risk
  };
  std::vector<Row> rows;
  double total = 0.0;
};

/// sum_k gamma_k R_{T - tau_k}. Throws ModelError listing the forward times
/// the model set does not cover exactly.
WeightedScoreError weighted_score_error(const ScoreModelSet& models, const OracleFamily& oracles,
                                        const TimeGrid& grid, Index n_mc, Rng& rng);
WeightedScoreError weighted_score_error(const ScoreProvider& models, const OracleFamily& oracles,
                                        const TimeGrid& grid, Index n_mc, Rng& rng);

/// (1/n) sum ||(I - U U^T) x_i||^2 with its standard error.
MeanSe subspace_residual(const Matrix& samples, const Matrix& U);

/// U-statistic energy distance 2E||a-b|| - E||a-a'|| - E||b-b'||. Each
/// sample is subsampled without replacement to at most `cap` rows.
double energy_distance(const Matrix& a, const Matrix& b, Rng& rng, Index cap = 2000);

struct PermutationTest {
  double statistic = 0.0;
  double null_q95 = 0.0;
  double p_value = 1.0;
  std::vector<double> null;
};

/// Energy-distance two-sample permutation test.
PermutationTest energy_permutation_test(const Matrix& a, const Matrix& b, int permutations, Rng& rng,
                                        Index cap = 2000);

struct LipschitzRow {
  double t = 0.0;
  double max_ratio = 0.0;  // max_z ||grad log pi_t(z)|| / (1 + ||z||)
};

struct LipschitzTable {
  std::vector<LipschitzRow> rows;
  /// max / min of the per-t maxima; the diagnostic expects <= 10.
  double variation = 0.0;
};

/// Linear-growth probe for a PD latent mixture. Throws DomainError when the
/// mixture has a degenerate component.
LipschitzTable lipschitz_probe(const LatentMixture& latent, const std::vector<double>& t_grid,
                               const Matrix& z_samples);

/// Largest spectral norm of the score Jacobian (central differences, step
/// 1e-5) over the probe points.
double EmpiricalScoreLipschitz(const MixtureAtTime& mix, const Matrix& z_samples);

struct MetricRow {
  std::string metric;
  double t = 0.0;
  double estimate = 0.0;
  double se = 0.0;
  Index n_mc = 0;
};

/// CSV with header metric,t,estimate,se,n_mc, preceded by a fingerprint
/// comment line when one is given.
void WriteMetricsCsv(const std::vector<MetricRow>& rows, const std::filesystem::path& path,
                     const std::string& fingerprint = "");

}  // namespace ldiff
