#include "ldiff/dsm_train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ldiff/io.hpp"

namespace ldiff {

void TrainConfig::Validate() const {
  if (width <= 0) throw ConfigError("train: width must be positive");
  if (epochs < 0) throw ConfigError("train: epochs must be non-negative");
  if (batch_size < 0) throw ConfigError("train: batch_size must be non-negative");
  if (!(step_size >= 0.0)) throw ConfigError("train: step_size must be non-negative");
  if (radius_mode == RadiusMode::kFixed && !(fixed_radius > 0.0)) {
    throw ConfigError("train: fixed radius must be positive");
  }
  if (radius_mode == RadiusMode::kSchedule &&
      (!(radius_schedule.r_bar > 0.0) || radius_schedule.d_latent <= 0 || radius_schedule.ambient_dim <= 0)) {
    throw ConfigError("train: radius schedule needs r_bar > 0, d > 0, D > 0");
  }
  if (!(r_init > 0.0)) throw ConfigError("train: r_init must be positive");
  if (workers <= 0) throw ConfigError("train: workers must be positive");
}

double dsm_loss(const ShallowScoreNet& net, const TrainingSet& batch) {
  const double sigma = ou_coefficients(batch.t).sigma;
  return DsmLoss(net, batch.xt, batch.w, sigma);
}

MeanSe estimate_Ct(const ScoreOracle& oracle, double t, Index n_mc, Rng& rng) {
  if (t != oracle.t()) throw DomainError("estimate_Ct: oracle time does not match t");
  if (!(t > 0.0)) throw DomainError("estimate_Ct: t must be > 0");
  const double sigma = ou_coefficients(t).sigma;
  const TrainingSet draw = oracle.SamplePt(n_mc, rng);
  const Matrix score = oracle.Batch(draw.xt);
  std::vector<double> q(static_cast<std::size_t>(n_mc));
  for (Index i = 0; i < n_mc; ++i) {
    q[static_cast<std::size_t>(i)] = draw.w.row(i).squaredNorm() / (sigma * sigma) - score.row(i).squaredNorm();
  }
  return MeanAndStandardError(q);
}

double RadiusFor(const TrainConfig& cfg, double t, Index n) {
  if (cfg.radius_mode == RadiusMode::kFixed) return cfg.fixed_radius;
  return radius_at(cfg.radius_schedule, t, static_cast<long long>(n));
}

namespace {

struct AdamState {
  Matrix mu, mv, su, sv;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
};

double StepSizeAt(const TrainConfig& cfg, int epoch) {
  if (cfg.step_schedule == StepSchedule::kConstant || cfg.epochs == 0) return cfg.step_size;
  const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return cfg.step_size * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace

TrainResult train_one_timestep(const TrainingSet& dataset, const TrainConfig& cfg, double radius) {
  cfg.Validate();
  if (dataset.size() == 0) throw DomainError("train_one_timestep: empty dataset");
  if (!(radius > 0.0)) throw DomainError("train_one_timestep: radius must be > 0");
  const double sigma = ou_coefficients(dataset.t).sigma;
  if (!(sigma > 0.0)) throw DomainError("train_one_timestep: t = 0 has no DSM target");

  Rng rng = Rng::Stream(cfg.seed, 0);
  const Index n = dataset.size();
  const int D = dataset.dim();
  const Index batch = cfg.batch_size == 0 ? n : std::min<Index>(cfg.batch_size, n);

  ShallowScoreNet net = ShallowScoreNet::RandomSphere(cfg.width, D, cfg.r_init, rng);
  ProjectToBallInPlace(net, radius);

  Matrix xt = dataset.xt;
  Matrix w = dataset.w;
  const OUCoefficients ou = ou_coefficients(dataset.t);

  TrainResult result;
  result.radius = radius;
  const double initial_loss = DsmLoss(net, xt, w, sigma);
  result.trace.push_back({0, initial_loss, path_norm(net), 0.0});
  result.net = net;
  result.final_loss = initial_loss;
  if (!std::isfinite(initial_loss)) {
    throw TrainingError("train_one_timestep: non-finite initial loss", result.trace);
  }

  AdamState adam;
  if (cfg.optimizer == Optimizer::kProjectedAdam) {
    adam.mu = adam.su = Matrix::Zero(cfg.width, D);
    adam.mv = adam.sv = Matrix::Zero(cfg.width, D);
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Matrix bx(batch, D), bw(batch, D);
  DsmWorkspace ws;
  DsmGradient g;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.resample_noise) {
      w = rng.Gaussian(n, D);
      xt = ou.m * dataset.x0 + ou.sigma * w;
    }
    if (batch < n) std::shuffle(order.begin(), order.end(), rng.engine());
    const double lr = StepSizeAt(cfg, epoch - 1);
    double grad_norm_sum = 0.0;
    int steps = 0;
    for (Index start = 0; start < n; start += batch) {
      const Index len = std::min(batch, n - start);
      if (batch == n) {
        DsmLossAndGradientInto(net, xt, w, sigma, g, ws);
      } else {
        for (Index r = 0; r < len; ++r) {
          const Index src = order[static_cast<std::size_t>(start + r)];
          bx.row(r) = xt.row(src);
          bw.row(r) = w.row(src);
        }
        DsmLossAndGradientInto(net, bx.topRows(len), bw.topRows(len), sigma, g, ws);
      }
      grad_norm_sum += std::sqrt(g.du.squaredNorm() + g.dv.squaredNorm());
      ++steps;
      if (cfg.optimizer == Optimizer::kProjectedGd) {
        net.mutable_u() -= lr * g.du;
        net.mutable_v() -= lr * g.dv;
      } else {
        ++adam.step;
        const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
        const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
        adam.mu = adam.beta1 * adam.mu + (1.0 - adam.beta1) * g.du;
        adam.mv = adam.beta1 * adam.mv + (1.0 - adam.beta1) * g.dv;
        adam.su = adam.beta2 * adam.su + (1.0 - adam.beta2) * g.du.cwiseAbs2();
        adam.sv = adam.beta2 * adam.sv + (1.0 - adam.beta2) * g.dv.cwiseAbs2();
        net.mutable_u().array() -=
            lr * (adam.mu.array() / c1) / ((adam.su.array() / c2).sqrt() + adam.eps);
        net.mutable_v().array() -=
            lr * (adam.mv.array() / c1) / ((adam.sv.array() / c2).sqrt() + adam.eps);
      }
      ProjectToBallInPlace(net, radius);
    }
    const double loss = DsmLoss(net, xt, w, sigma);
    result.trace.push_back({epoch, loss, path_norm(net), steps ? grad_norm_sum / steps : 0.0});
    if (!std::isfinite(loss)) {
      throw TrainingError("train_one_timestep: loss became non-finite at epoch " + std::to_string(epoch) +
                              " (step size too large?)",
                          result.trace);
    }
    // With resampled noise the losses are not comparable across epochs; the
    // last iterate is kept in that mode.
    if (cfg.resample_noise || loss <= result.final_loss) {
      result.final_loss = loss;
      result.net = net;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// ScoreModelSet

const ScoreModelSet::Entry* ScoreModelSet::Find(double t) const {
  for (const auto& e : entries_) {
    if (e.t == t) return &e;
  }
  return nullptr;
}

void ScoreModelSet::Save(const std::filesystem::path& dir, const std::string& fingerprint) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["fingerprint"] = fingerprint;
  manifest["entries"] = nlohmann::json::array();
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "net_%05zu.bin", k);
    WriteCheckpoint(entries_[k].net, entries_[k].t, dir / name, fingerprint);
    manifest["entries"].push_back({{"index", k},
                                   {"t", entries_[k].t},
                                   {"file", name},
                                   {"final_loss", entries_[k].final_loss},
                                   {"radius", entries_[k].radius},
                                   {"path_norm", path_norm(entries_[k].net)}});
  }
  auto os = io::OpenForWrite(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

ScoreModelSet ScoreModelSet::Load(const std::filesystem::path& dir) {
  auto is = io::OpenForRead(dir / "manifest.json");
  const nlohmann::json manifest = nlohmann::json::parse(is);
  ScoreModelSet set;
  for (const auto& e : manifest.at("entries")) {
    Checkpoint c = ReadCheckpoint(dir / e.at("file").get<std::string>());
    Entry entry;
    entry.t = e.at("t").get<double>();
    if (entry.t != c.t) throw std::runtime_error("model set: manifest/checkpoint time mismatch");
    entry.net = std::move(c.net);
    entry.final_loss = e.at("final_loss").get<double>();
    entry.radius = e.at("radius").get<double>();
    set.entries_.push_back(std::move(entry));
  }
  return set;
}

TrainingSet TimestepDataset(const Matrix& x0, double t, std::uint64_t seed, std::size_t index) {
  const std::uint64_t stream = 2 * static_cast<std::uint64_t>(index) + 1;
  Rng rng = Rng::Stream(seed, stream);
  return forward_corrupt(x0, t, rng, stream);
}

ScoreModelSet train_all_timesteps(const TimeGrid& grid, const Matrix& x0, const TrainConfig& cfg,
                                  std::vector<TrainingTrace>* traces) {
  cfg.Validate();
  if (grid.forward_times.empty()) throw ConfigError("train_all_timesteps: empty grid");
  const std::size_t count = grid.forward_times.size();
  ScoreModelSet set;
  set.entries().resize(count);
  std::vector<TrainingTrace> local_traces(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (std::size_t k = next++; k < count; k = next++) {
      const double t = grid.forward_times[k];
      try {
        const TrainingSet data = TimestepDataset(x0, t, cfg.seed, k);
        TrainConfig local = cfg;
        local.seed = SplitMix64(cfg.seed ^ SplitMix64(2 * static_cast<std::uint64_t>(k) + 2));
        TrainResult r = train_one_timestep(data, local, RadiusFor(cfg, t, x0.rows()));
        set.entries()[k] = {t, std::move(r.net), r.final_loss, r.radius};
        local_traces[k] = std::move(r.trace);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };

  const int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(count)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t k = 0; k < count; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const TrainingError& e) {
      throw TrainingError("timestep t = " + io::FormatDouble(grid.forward_times[k]) + ": " + e.what(),
                          e.trace());
    } catch (const std::exception& e) {
      throw std::runtime_error("timestep t = " + io::FormatDouble(grid.forward_times[k]) + ": " + e.what());
    }
  }
  if (traces) *traces = std::move(local_traces);
  return set;
}

void WriteTraceJsonl(const TrainingTrace& trace, double t, std::ostream& os) {
  for (const auto& r : trace) {
    nlohmann::json j = {{"t", t}, {"epoch", r.epoch}, {"loss", r.loss}, {"path_norm", r.path_norm},
                        {"grad_norm", r.grad_norm}};
    os << j.dump() << '\n';
  }
}

}  // namespace ldiff
