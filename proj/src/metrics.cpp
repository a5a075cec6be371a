#include "ldiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ldiff/io.hpp"

namespace ldiff {

RiskEstimate ScoreRiskOn(const BatchScoreFn& model, const ScoreOracle& oracle, const Matrix& xt) {
  const Matrix diff = model(xt) - oracle.Batch(xt);
  std::vector<double> sq(static_cast<std::size_t>(xt.rows()));
  for (Index i = 0; i < xt.rows(); ++i) sq[static_cast<std::size_t>(i)] = diff.row(i).squaredNorm();
  const MeanSe ms = MeanAndStandardError(sq);
  return {oracle.t(), ms.mean, ms.se, xt.rows()};
}

RiskEstimate score_risk(const BatchScoreFn& model, const ScoreOracle& oracle, double t, Index n_mc, Rng& rng) {
  if (n_mc < 2) throw DomainError("score_risk: n_mc must be >= 2");
  if (t != oracle.t()) throw DomainError("score_risk: t is outside the oracle's domain (oracle built for another t)");
  const TrainingSet draw = oracle.SamplePt(n_mc, rng);
  return ScoreRiskOn(model, oracle, draw.xt);
}

WeightedScoreError weighted_score_error(const ScoreProvider& models, const OracleFamily& oracles,
                                        const TimeGrid& grid, Index n_mc, Rng& rng) {
  try {
    models.RequireCoverage(grid);
  } catch (const ProviderError& e) {
    throw ModelError(std::string("weighted_score_error: model set misaligned with grid; ") + e.what());
  }
  WeightedScoreError out;
  for (int k = 0; k < grid.N; ++k) {
    WeightedScoreError::Row row;
    row.k = k;
    row.t = grid.forward_times[k];
    row.gamma = grid.gaps[k];
    row.risk = score_risk(models.At(row.t), oracles(row.t), row.t, n_mc, rng);
    row.contribution = row.gamma * row.risk.estimate;
    out.rows.push_back(row);
  }
  for (const auto& r : out.rows) out.total += r.contribution;
  return out;
}

WeightedScoreError weighted_score_error(const ScoreModelSet& models, const OracleFamily& oracles,
                                        const TimeGrid& grid, Index n_mc, Rng& rng) {
  std::ostringstream mismatch;
  int bad = 0;
  for (double t : grid.forward_times) {
    if (!models.Find(t)) mismatch << (bad++ ? ", " : "") << "missing t=" << io::FormatDouble(t);
  }
  for (const auto& e : models.entries()) {
    if (std::find(grid.forward_times.begin(), grid.forward_times.end(), e.t) == grid.forward_times.end()) {
      mismatch << (bad++ ? ", " : "") << "extra t=" << io::FormatDouble(e.t);
    }
  }
  if (bad) throw ModelError("weighted_score_error: model set misaligned with grid: " + mismatch.str());
  return weighted_score_error(ScoreProvider::FromModels(models), oracles, grid, n_mc, rng);
}

MeanSe subspace_residual(const Matrix& samples, const Matrix& U) {
  const Matrix normal = samples - (samples * U) * U.transpose();
  std::vector<double> sq(static_cast<std::size_t>(samples.rows()));
  for (Index i = 0; i < samples.rows(); ++i) sq[static_cast<std::size_t>(i)] = normal.row(i).squaredNorm();
  return MeanAndStandardError(sq);
}

namespace {

Matrix Subsample(const Matrix& x, Index cap, Rng& rng) {
  if (x.rows() <= cap) return x;
  std::vector<Index> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  Matrix out(cap, x.cols());
  for (Index i = 0; i < cap; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

// Packed upper-triangle pairwise distances of the pooled sample.
class PooledDistances {
 public:
  explicit PooledDistances(const Matrix& z) : n_(z.rows()) {
    d_.resize(static_cast<std::size_t>(n_ * (n_ - 1) / 2));
    std::size_t p = 0;
    for (Index i = 0; i < n_; ++i) {
      for (Index j = i + 1; j < n_; ++j) d_[p++] = static_cast<float>((z.row(i) - z.row(j)).norm());
    }
  }

  // Energy U-statistic when label[i] == 0 marks sample a.
  double Statistic(const std::vector<char>& label, Index na) const {
    const Index nb = n_ - na;
    double s_ab = 0.0, s_aa = 0.0, s_bb = 0.0;
    std::size_t p = 0;
    for (Index i = 0; i < n_; ++i) {
      const char li = label[static_cast<std::size_t>(i)];
      double row_ab = 0.0, row_same = 0.0;
      for (Index j = i + 1; j < n_; ++j, ++p) {
        const double d = d_[p];
        if (label[static_cast<std::size_t>(j)] == li) {
          row_same += d;
        } else {
          row_ab += d;
        }
      }
      s_ab += row_ab;
      (li == 0 ? s_aa : s_bb) += row_same;
    }
    const double mean_ab = s_ab / (static_cast<double>(na) * static_cast<double>(nb));
    const double mean_aa = na > 1 ? 2.0 * s_aa / (static_cast<double>(na) * static_cast<double>(na - 1)) : 0.0;
    const double mean_bb = nb > 1 ? 2.0 * s_bb / (static_cast<double>(nb) * static_cast<double>(nb - 1)) : 0.0;
    return 2.0 * mean_ab - mean_aa - mean_bb;
  }

 private:
  Index n_;
  std::vector<float> d_;
};

double EnergyExact(const Matrix& a, const Matrix& b) {
  auto mean_cross = [](const Matrix& x, const Matrix& y) {
    double s = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = 0; j < y.rows(); ++j) s += (x.row(i) - y.row(j)).norm();
    }
    return s / (static_cast<double>(x.rows()) * static_cast<double>(y.rows()));
  };
  auto mean_within = [](const Matrix& x) {
    if (x.rows() < 2) return 0.0;
    double s = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index j = i + 1; j < x.rows(); ++j) s += (x.row(i) - x.row(j)).norm();
    }
    return 2.0 * s / (static_cast<double>(x.rows()) * static_cast<double>(x.rows() - 1));
  };
  return 2.0 * mean_cross(a, b) - mean_within(a) - mean_within(b);
}

}  // namespace

double energy_distance(const Matrix& a, const Matrix& b, Rng& rng, Index cap) {
  if (a.rows() == 0 || b.rows() == 0) throw DomainError("energy_distance: empty sample");
  if (a.cols() != b.cols()) throw DomainError("energy_distance: dimension mismatch");
  return EnergyExact(Subsample(a, cap, rng), Subsample(b, cap, rng));
}

PermutationTest energy_permutation_test(const Matrix& a, const Matrix& b, int permutations, Rng& rng,
                                        Index cap) {
  if (a.rows() < 2 || b.rows() < 2) throw DomainError("energy_permutation_test: need >= 2 rows per sample");
  const Matrix sa = Subsample(a, cap, rng);
  const Matrix sb = Subsample(b, cap, rng);
  Matrix pooled(sa.rows() + sb.rows(), sa.cols());
  pooled << sa, sb;
  const PooledDistances dist(pooled);
  std::vector<char> label(static_cast<std::size_t>(pooled.rows()), 1);
  std::fill(label.begin(), label.begin() + sa.rows(), 0);

  PermutationTest out;
  out.statistic = dist.Statistic(label, sa.rows());
  int exceed = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(label.begin(), label.end(), rng.engine());
    const double s = dist.Statistic(label, sa.rows());
    out.null.push_back(s);
    if (s >= out.statistic) ++exceed;
  }
  std::vector<double> sorted = out.null;
  std::sort(sorted.begin(), sorted.end());
  if (!sorted.empty()) {
    const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1;
    out.null_q95 = sorted[std::min(idx, sorted.size() - 1)];
  }
  out.p_value = (1.0 + exceed) / (1.0 + permutations);
  return out;
}

LipschitzTable lipschitz_probe(const LatentMixture& latent, const std::vector<double>& t_grid,
                               const Matrix& z_samples) {
  if (!latent.IsPositiveDefinite()) {
    throw DomainError("lipschitz_probe: latent mixture must have PD components");
  }
  LipschitzTable table;
  for (double t : t_grid) {
    const MixtureAtTime mix(latent, t);
    double best = 0.0;
    for (Index i = 0; i < z_samples.rows(); ++i) {
      const Vector z = z_samples.row(i).transpose();
      best = std::max(best, mix.Score(z).norm() / (1.0 + z.norm()));
    }
    table.rows.push_back({t, best});
  }
  if (!table.rows.empty()) {
    double lo = table.rows.front().max_ratio, hi = lo;
    for (const auto& r : table.rows) {
      lo = std::min(lo, r.max_ratio);
      hi = std::max(hi, r.max_ratio);
    }
    table.variation = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  }
  return table;
}

double EmpiricalScoreLipschitz(const MixtureAtTime& mix, const Matrix& z_samples) {
  constexpr double kStep = 1e-5;
  const int d = mix.dim();
  double best = 0.0;
  Matrix jac(d, d);
  for (Index i = 0; i < z_samples.rows(); ++i) {
    const Vector z = z_samples.row(i).transpose();
    for (int k = 0; k < d; ++k) {
      Vector zp = z, zm = z;
      zp(k) += kStep;
      zm(k) -= kStep;
      jac.col(k) = (mix.Score(zp) - mix.Score(zm)) / (2.0 * kStep);
    }
    Eigen::JacobiSVD<Matrix> svd(jac);
    best = std::max(best, svd.singularValues()(0));
  }
  return best;
}

void WriteMetricsCsv(const std::vector<MetricRow>& rows, const std::filesystem::path& path,
                     const std::string& fingerprint) {
  auto os = io::OpenForWrite(path);
  if (!fingerprint.empty()) os << "# fingerprint=" << fingerprint << '\n';
  os << "metric,t,estimate,se,n_mc\n";
  for (const auto& r : rows) {
    os << r.metric << ',' << io::FormatDouble(r.t) << ',' << io::FormatDouble(r.estimate) << ','
       << io::FormatDouble(r.se) << ',' << r.n_mc << '\n';
  }
}

}  // namespace ldiff
