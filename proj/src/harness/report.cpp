#include "ldiff/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "ldiff/common.hpp"
#include "ldiff/io.hpp"

namespace ldiff::harness {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

struct Line {
  double slope = 0.0;
  double intercept = 0.0;
};

Line LeastSquares(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

using GroupKey = std::tuple<std::string, int, int>;  // fingerprint, D, d

std::map<GroupKey, std::vector<const ExperimentRecord*>> Groups(const std::vector<ExperimentRecord>& records) {
  std::map<GroupKey, std::vector<const ExperimentRecord*>> g;
  for (const auto& r : records) g[{r.fingerprint, r.D, r.d}].push_back(&r);
  return g;
}

// Values of `field` per n over the given records, NaNs dropped.
std::map<long long, std::vector<double>> ByN(const std::vector<const ExperimentRecord*>& records,
                                             const std::string& field) {
  std::map<long long, std::vector<double>> out;
  for (const auto* r : records) {
    const double v = RecordField(*r, field);
    if (std::isfinite(v)) out[r->n].push_back(v);
  }
  return out;
}

RateFit FitGroup(const std::map<long long, std::vector<double>>& by_n, int bootstrap, std::uint64_t rng_seed) {
  if (by_n.size() < 3) {
    throw DomainError("fit_rate_exponent: need >= 3 distinct n values, got " + std::to_string(by_n.size()));
  }
  RateFit fit;
  std::vector<double> lx, ly;
  for (const auto& [n, vals] : by_n) {
    if (vals.size() < 3) {
      throw DomainError("fit_rate_exponent: need >= 3 seeds at every n; n=" + std::to_string(n) + " has " +
                        std::to_string(vals.size()));
    }
    const double med = Median(vals);
    if (!(med > 0.0)) throw DomainError("fit_rate_exponent: median at n=" + std::to_string(n) + " is not positive");
    fit.n.push_back(n);
    fit.median.push_back(med);
    fit.seeds.push_back(static_cast<int>(vals.size()));
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(std::log(med));
  }
  const Line line = LeastSquares(lx, ly);
  fit.slope = line.slope;
  fit.intercept = line.intercept;
  for (std::size_t i = 1; i < lx.size(); ++i) fit.local_slopes.push_back((ly[i] - ly[i - 1]) / (lx[i] - lx[i - 1]));
  fit.power_law_regime = std::all_of(fit.local_slopes.begin(), fit.local_slopes.end(),
                                     [&](double s) { return s < 0.0 && std::abs(s - fit.slope) <= 0.25; });

  Rng rng(rng_seed);
  std::vector<double> slopes;
  std::vector<double> resampled;
  for (int b = 0; b < bootstrap; ++b) {
    std::vector<double> by;
    bool ok = true;
    for (const auto& [n, vals] : by_n) {
      resampled.clear();
      for (std::size_t i = 0; i < vals.size(); ++i) resampled.push_back(vals[rng.Below(vals.size())]);
      const double med = Median(resampled);
      ok = ok && med > 0.0;
      by.push_back(std::log(med));
    }
    if (ok) slopes.push_back(LeastSquares(lx, by).slope);
  }
  if (slopes.size() > 1) {
    const double mean = std::accumulate(slopes.begin(), slopes.end(), 0.0) / slopes.size();
    double ss = 0.0;
    for (double s : slopes) ss += (s - mean) * (s - mean);
    fit.se = std::sqrt(ss / static_cast<double>(slopes.size() - 1));
  }
  return fit;
}

std::string FingerprintComment(const std::vector<ExperimentRecord>& records) {
  std::set<std::string> fps;
  for (const auto& r : records) fps.insert(r.fingerprint);
  std::string out = "fingerprint=";
  bool first = true;
  for (const auto& f : fps) {
    out += (first ? "" : ";") + f;
    first = false;
  }
  return out;
}

std::string Fmt(double x) { return std::isfinite(x) ? io::FormatDouble(x) : ""; }

// ---------------------------------------------------------------------------
// SVG

struct Series {
  std::string label;
  std::vector<double> n, median, lo, hi;
};

std::string EscapeXml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void WriteSvg(const std::vector<Series>& series, const std::string& comment, const std::filesystem::path& path) {
  constexpr double kW = 640, kH = 440, kLeft = 80, kRight = 170, kTop = 40, kBottom = 60;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.n.size(); ++i) {
      xmin = std::min(xmin, std::log10(s.n[i]));
      xmax = std::max(xmax, std::log10(s.n[i]));
      ymin = std::min(ymin, std::log10(s.lo[i]));
      ymax = std::max(ymax, std::log10(s.hi[i]));
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax - xmin < 1e-9) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-9) ymin -= 0.5, ymax += 0.5;
  const double xpad = 0.05 * (xmax - xmin), ypad = 0.08 * (ymax - ymin);
  xmin -= xpad, xmax += xpad, ymin -= ypad, ymax += ypad;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double lx) { return kLeft + (lx - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double ly) { return kTop + (1.0 - (ly - ymin) / (ymax - ymin)) * ph; };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- " << comment << " -->\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  // Decade ticks plus, on the x axis, every sweep n.
  for (int e = static_cast<int>(std::ceil(ymin)); e <= static_cast<int>(std::floor(ymax)); ++e) {
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + pw << "\" y1=\"" << py(e) << "\" y2=\"" << py(e)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(e) + 4 << "\" text-anchor=\"end\">1e" << e << "</text>\n";
  }
  std::set<double> xticks;
  for (const auto& s : series) xticks.insert(s.n.begin(), s.n.end());
  for (double n : xticks) {
    const double x = px(std::log10(n));
    os << "<line x1=\"" << x << "\" x2=\"" << x << "\" y1=\"" << kTop << "\" y2=\"" << kTop + ph
       << "\" stroke=\"#eee\"/>\n";
    os << "<text x=\"" << x << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
       << static_cast<long long>(n) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 18 << "\" text-anchor=\"middle\">n (log scale)</text>\n";
  os << "<text x=\"20\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 "
     << kTop + ph / 2 << ")\">score risk at eval t (log scale)</text>\n";
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
     << "Median score risk vs n (bars: min..max over seeds)</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 6];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.n.size(); ++i) {
      os << (i ? " " : "") << px(std::log10(s.n[i])) << "," << py(std::log10(s.median[i]));
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.n.size(); ++i) {
      const double x = px(std::log10(s.n[i]));
      os << "<line x1=\"" << x << "\" x2=\"" << x << "\" y1=\"" << py(std::log10(s.lo[i])) << "\" y2=\""
         << py(std::log10(s.hi[i])) << "\" stroke=\"" << color << "\"/>\n";
      os << "<circle cx=\"" << x << "\" cy=\"" << py(std::log10(s.median[i])) << "\" r=\"3.5\" fill=\"" << color
         << "\"/>\n";
    }
    const double ly = kTop + 14 + 20.0 * k;
    os << "<line x1=\"" << kLeft + pw + 12 << "\" x2=\"" << kLeft + pw + 32 << "\" y1=\"" << ly - 4 << "\" y2=\""
       << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + pw + 38 << "\" y=\"" << ly << "\">" << EscapeXml(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  auto file = io::OpenForWrite(path);
  file << os.str();
}

}  // namespace

double RecordField(const ExperimentRecord& r, const std::string& field) {
  if (field == "risk") return r.EvalRisk();
  if (field == "loss") return r.timesteps.empty() ? kNaN : r.timesteps.front().loss;
  if (field == "residual") return r.sampler ? r.sampler->residual : kNaN;
  if (field == "energy") return r.sampler ? r.sampler->energy : kNaN;
  if (field == "weighted_score_error") return r.sampler ? r.sampler->weighted_score_error : kNaN;
  if (field == "whitening_error") return r.whitening_error.value_or(kNaN);
  throw ConfigError("unknown record field '" + field + "'");
}

RateFit fit_rate_exponent(const std::vector<ExperimentRecord>& records, int D, int d, const std::string& field,
                          int bootstrap, std::uint64_t rng_seed) {
  std::vector<const ExperimentRecord*> sel;
  for (const auto& r : records) {
    if (r.D == D && r.d == d) sel.push_back(&r);
  }
  return FitGroup(ByN(sel, field), bootstrap, rng_seed);
}

ReportOutputs WriteReport(const std::vector<ExperimentRecord>& records, const std::filesystem::path& out_dir) {
  ReportOutputs out{out_dir / "summary.csv", out_dir / "rates.csv", out_dir / "risk_vs_n.svg"};
  const std::string comment = FingerprintComment(records);
  const auto groups = Groups(records);

  auto summary = io::OpenForWrite(out.summary_csv);
  summary << "# " << comment << "\n";
  summary << "fingerprint,kind,D,d,n,seeds,median_risk,min_risk,max_risk,median_residual,residual_reference,"
             "median_energy,energy_null_q95,median_whitening_error\n";
  auto rates = io::OpenForWrite(out.rates_csv);
  rates << "# " << comment << "\n";
  rates << "fingerprint,kind,D,d,n_values,slope,slope_se,local_slopes,power_law_regime,note\n";

  std::vector<Series> series;
  for (const auto& [key, recs] : groups) {
    const auto& [fp, D, d] = key;
    const std::string kind = recs.front()->kind;
    const auto risk = ByN(recs, "risk");
    const auto residual = ByN(recs, "residual");
    const auto energy = ByN(recs, "energy");
    const auto whitening = ByN(recs, "whitening_error");
    std::map<long long, std::vector<double>> q95, reference;
    for (const auto* r : recs) {
      if (r->sampler) {
        if (std::isfinite(r->sampler->energy_null_q95)) q95[r->n].push_back(r->sampler->energy_null_q95);
        if (std::isfinite(r->sampler->residual_reference)) reference[r->n].push_back(r->sampler->residual_reference);
      }
    }
    auto med = [](const std::map<long long, std::vector<double>>& m, long long n) {
      const auto it = m.find(n);
      return it == m.end() || it->second.empty() ? kNaN : Median(it->second);
    };
    Series s;
    s.label = kind + " D=" + std::to_string(D) + " d=" + std::to_string(d);
    for (const auto& [n, vals] : risk) {
      const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
      summary << fp << ',' << kind << ',' << D << ',' << d << ',' << n << ',' << vals.size() << ','
              << Fmt(Median(vals)) << ',' << Fmt(*lo) << ',' << Fmt(*hi) << ',' << Fmt(med(residual, n)) << ','
              << Fmt(med(reference, n)) << ',' << Fmt(med(energy, n)) << ',' << Fmt(med(q95, n)) << ','
              << Fmt(med(whitening, n)) << '\n';
      if (Median(vals) > 0.0 && *lo > 0.0) {
        s.n.push_back(static_cast<double>(n));
        s.median.push_back(Median(vals));
        s.lo.push_back(*lo);
        s.hi.push_back(*hi);
      }
    }

    rates << fp << ',' << kind << ',' << D << ',' << d << ',' << risk.size() << ',';
    try {
      const RateFit fit = FitGroup(risk, 500, 20240917);
      std::string local;
      for (std::size_t i = 0; i < fit.local_slopes.size(); ++i) local += (i ? ";" : "") + Fmt(fit.local_slopes[i]);
      rates << Fmt(fit.slope) << ',' << Fmt(fit.se) << ',' << local << ','
            << (fit.power_law_regime ? "yes" : "no") << ",\n";
      std::ostringstream label;
      label.precision(3);
      label << " slope " << fit.slope;
      s.label += label.str();
    } catch (const DomainError& e) {
      rates << ",,,,\"" << e.what() << "\"\n";
    }
    if (!s.n.empty()) series.push_back(std::move(s));
  }
  WriteSvg(series, comment, out.plot_svg);
  return out;
}

}  // namespace ldiff::harness
