#include "ldiff/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ldiff/io.hpp"

namespace ldiff::harness {

namespace {

std::string_view Trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> SplitList(std::string_view s) {
  std::vector<std::string_view> out;
  if (Trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(Trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double ParseReal(std::string_view text, std::string_view what) {
  const std::string s(Trim(text));
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ConfigError(std::string(what) + ": expected a number, got '" + s + "'");
  }
  return v;
}

bool ParseBool(std::string_view text, std::string_view what) {
  const auto s = Trim(text);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(std::string(what) + ": expected true/false, got '" + std::string(s) + "'");
}

template <typename T>
std::string JoinList(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(xs[i]);
  }
  return out;
}

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  bool fingerprinted = true;
};

template <typename Get>
Field MakeInt(Get access, bool allow_negative = false) {
  return {[access](const ExperimentConfig& c) { return std::to_string(access(const_cast<ExperimentConfig&>(c))); },
          [access, allow_negative](ExperimentConfig& c, std::string_view v) {
            auto& ref = access(c);
            ref = static_cast<std::remove_reference_t<decltype(ref)>>(ParseInteger(v, "integer field", allow_negative));
          }};
}

template <typename Get>
Field MakeReal(Get access) {
  return {[access](const ExperimentConfig& c) { return io::FormatDouble(access(const_cast<ExperimentConfig&>(c))); },
          [access](ExperimentConfig& c, std::string_view v) { access(c) = ParseReal(v, "real field"); }};
}

template <typename Get>
Field MakeBool(Get access) {
  return {[access](const ExperimentConfig& c) {
            return std::string(access(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
          },
          [access](ExperimentConfig& c, std::string_view v) { access(c) = ParseBool(v, "boolean field"); }};
}

template <typename Get>
Field MakeIntList(Get access, bool allow_negative = false) {
  return {[access](const ExperimentConfig& c) { return JoinList(access(const_cast<ExperimentConfig&>(c))); },
          [access, allow_negative](ExperimentConfig& c, std::string_view v) {
            auto& ref = access(c);
            using Elem = typename std::remove_reference_t<decltype(ref)>::value_type;
            ref.clear();
            for (auto item : SplitList(v)) {
              ref.push_back(static_cast<Elem>(ParseInteger(item, "list entry", allow_negative)));
            }
          }};
}

template <typename E>
Field MakeEnum(E& (*access)(ExperimentConfig&), std::vector<std::pair<std::string, E>> names) {
  return {[access, names](const ExperimentConfig& c) {
            const E v = access(const_cast<ExperimentConfig&>(c));
            for (const auto& [name, e] : names) {
              if (e == v) return name;
            }
            return std::string("?");
          },
          [access, names](ExperimentConfig& c, std::string_view v) {
            const auto s = Trim(v);
            for (const auto& [name, e] : names) {
              if (s == name) {
                access(c) = e;
                return;
              }
            }
            std::string allowed;
            for (const auto& [name, e] : names) allowed += (allowed.empty() ? "" : "|") + name;
            throw ConfigError("expected one of " + allowed + ", got '" + std::string(s) + "'");
          }};
}

const std::map<std::string, Field>& Fields() {
  using C = ExperimentConfig;
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["target.kind"] = MakeEnum<TargetKind>(
        +[](C& c) -> TargetKind& { return c.target.kind; },
        {{"subspace", TargetKind::kSubspace}, {"independent", TargetKind::kIndependent}, {"mixed", TargetKind::kMixed}});
    f["target.latent_dim"] = MakeInt([](C& c) -> int& { return c.target.latent_dim; });
    f["target.ambient_dims"] = MakeIntList([](C& c) -> std::vector<int>& { return c.target.ambient_dims; });
    f["target.group_dims"] = MakeIntList([](C& c) -> std::vector<int>& { return c.target.group_dims; });
    f["target.components"] = MakeInt([](C& c) -> int& { return c.target.components; });
    f["target.mode_offset"] = MakeReal([](C& c) -> double& { return c.target.mode_offset; });
    f["target.mode_variance"] = MakeReal([](C& c) -> double& { return c.target.mode_variance; });
    f["target.condition_number"] = MakeReal([](C& c) -> double& { return c.target.condition_number; });

    f["schedule.T"] = MakeReal([](C& c) -> double& { return c.schedule.T; });
    f["schedule.N"] = MakeInt([](C& c) -> int& { return c.schedule.N; });
    f["schedule.zeta"] = MakeReal([](C& c) -> double& { return c.schedule.zeta; });
    f["schedule.c0"] = MakeReal([](C& c) -> double& { return c.schedule.c0; });
    f["schedule.c1"] = MakeReal([](C& c) -> double& { return c.schedule.c1; });

    f["train.width"] = MakeInt([](C& c) -> int& { return c.train.width; });
    f["train.epochs"] = MakeInt([](C& c) -> int& { return c.train.epochs; });
    f["train.steps"] = MakeInt([](C& c) -> int& { return c.train_steps; });
    f["train.pipeline_steps"] = MakeInt([](C& c) -> int& { return c.pipeline_steps; });
    f["train.batch_size"] = MakeInt([](C& c) -> int& { return c.train.batch_size; });
    f["train.step_size"] = MakeReal([](C& c) -> double& { return c.train.step_size; });
    f["train.step_schedule"] = MakeEnum<StepSchedule>(
        +[](C& c) -> StepSchedule& { return c.train.step_schedule; },
        {{"constant", StepSchedule::kConstant}, {"cosine", StepSchedule::kCosine}});
    f["train.optimizer"] = MakeEnum<Optimizer>(
        +[](C& c) -> Optimizer& { return c.train.optimizer; },
        {{"gd", Optimizer::kProjectedGd}, {"adam", Optimizer::kProjectedAdam}});
    f["train.radius_mode"] = MakeEnum<RadiusMode>(
        +[](C& c) -> RadiusMode& { return c.train.radius_mode; },
        {{"schedule", RadiusMode::kSchedule}, {"fixed", RadiusMode::kFixed}});
    f["train.radius"] = MakeReal([](C& c) -> double& { return c.train.fixed_radius; });
    f["train.r_bar"] = MakeReal([](C& c) -> double& { return c.r_bar; });
    f["train.r_init"] = MakeReal([](C& c) -> double& { return c.train.r_init; });
    f["train.resample_noise"] = MakeBool([](C& c) -> bool& { return c.train.resample_noise; });
    f["train.workers"] = MakeInt([](C& c) -> int& { return c.train.workers; });
    f["train.workers"].fingerprinted = false;

    f["sweep.n"] = MakeIntList([](C& c) -> std::vector<long long>& { return c.sweep.n; });
    f["sweep.seeds"] = MakeIntList([](C& c) -> std::vector<std::uint64_t>& { return c.sweep.seeds; });
    f["sweep.seeds"].fingerprinted = false;
    f["sweep.eval_t"] = MakeReal([](C& c) -> double& { return c.sweep.eval_t; });
    f["sweep.sample_n"] = MakeIntList([](C& c) -> std::vector<long long>& { return c.sweep.sample_n; }, true);
    f["sweep.n_samples"] = MakeInt([](C& c) -> long long& { return c.sweep.n_samples; });
    f["sweep.workers"] = MakeInt([](C& c) -> int& { return c.sweep.workers; });
    f["sweep.workers"].fingerprinted = false;

    f["metrics.n_mc"] = MakeInt([](C& c) -> long long& { return c.metrics.n_mc; });
    f["metrics.permutations"] = MakeInt([](C& c) -> int& { return c.metrics.permutations; });
    f["metrics.energy_cap"] = MakeInt([](C& c) -> long long& { return c.metrics.energy_cap; });
    f["metrics.weighted_error"] = MakeBool([](C& c) -> bool& { return c.metrics.weighted_error; });

    f["output.dir"] = {[](const C& c) { return c.output_dir; },
                       [](C& c, std::string_view v) { c.output_dir = std::string(Trim(v)); },
                       false};
    return f;
  }();
  return fields;
}

}  // namespace

long long ParseInteger(std::string_view text, std::string_view what, bool allow_negative) {
  const auto s = Trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(std::string(what) + ": expected an integer, got '" + std::string(s) + "'");
  }
  if (v < 0 && !allow_negative) {
    throw ConfigError(std::string(what) + ": must be non-negative, got " + std::to_string(v));
  }
  return v;
}

std::string TargetKindName(TargetKind k) {
  switch (k) {
    case TargetKind::kSubspace: return "subspace";
    case TargetKind::kIndependent: return "independent";
    case TargetKind::kMixed: return "mixed";
  }
  return "?";
}

int TargetSpec::IntrinsicDim() const {
  if (kind == TargetKind::kSubspace) return latent_dim;
  int total = 0;
  for (int g : group_dims) total += g;
  return total;
}

TrainConfig ExperimentConfig::DefaultTrain() {
  TrainConfig t;
  t.width = 512;
  t.batch_size = 256;
  t.step_size = 1e-2;
  t.step_schedule = StepSchedule::kCosine;
  t.optimizer = Optimizer::kProjectedAdam;
  t.radius_mode = RadiusMode::kSchedule;
  return t;
}

ExperimentConfig ExperimentConfig::Parse(std::string_view text) {
  ExperimentConfig config;
  const auto& fields = Fields();
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = Trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = std::string(Trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    std::string key(Trim(line.substr(0, eq)));
    if (key.find('.') == std::string::npos && !section.empty()) key = section + "." + key;
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    try {
      it->second.set(config, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + " (" + key + "): " + e.what());
    }
  }
  return config;
}

ExperimentConfig ExperimentConfig::Load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  ExperimentConfig config = Parse(ss.str());
  ApplySeedOverride(config);
  config.Validate();
  return config;
}

void ApplySeedOverride(ExperimentConfig& config) {
  const char* env = std::getenv("SEED_OVERRIDE");
  if (env == nullptr || *env == '\0') return;
  config.sweep.seeds = {static_cast<std::uint64_t>(ParseInteger(env, "SEED_OVERRIDE"))};
}

void ExperimentConfig::Validate() const {
  schedule.Validate();
  if (target.ambient_dims.empty()) throw ConfigError("target.ambient_dims must not be empty");
  for (int D : target.ambient_dims) {
    if (D <= 0) throw ConfigError("target.ambient_dims entries must be positive");
  }
  if (target.components <= 0) throw ConfigError("target.components must be positive");
  if (!(target.mode_variance > 0.0)) throw ConfigError("target.mode_variance must be > 0");
  if (!(target.mode_offset >= 0.0)) throw ConfigError("target.mode_offset must be >= 0");
  const int d = target.IntrinsicDim();
  if (target.kind == TargetKind::kSubspace) {
    if (d <= 0) throw ConfigError("target.latent_dim must be positive");
  } else {
    if (target.group_dims.empty()) throw ConfigError("target.group_dims is required for independent/mixed targets");
    for (int g : target.group_dims) {
      if (g <= 0) throw ConfigError("target.group_dims entries must be positive");
    }
  }
  for (int D : target.ambient_dims) {
    if (d > D) {
      throw ConfigError("intrinsic dimension " + std::to_string(d) + " exceeds ambient dimension " + std::to_string(D));
    }
    if (target.kind != TargetKind::kSubspace && d != D) {
      throw ConfigError("independent/mixed target: group_dims must sum to each ambient dimension");
    }
  }
  if (target.kind == TargetKind::kMixed && !(target.condition_number >= 1.0)) {
    throw ConfigError("target.condition_number must be >= 1");
  }
  TrainConfig probe = train;
  probe.radius_schedule = {r_bar, std::max(d, 1), target.ambient_dims.front()};
  probe.Validate();
  if (train_steps < 0 || pipeline_steps < 0) throw ConfigError("train.steps / train.pipeline_steps must be >= 0");
  if (sweep.n.empty()) throw ConfigError("sweep.n must not be empty");
  for (long long n : sweep.n) {
    if (n < 2) throw ConfigError("sweep.n entries must be >= 2");
  }
  for (long long n : sweep.sample_n) {
    if (n != -1 && std::find(sweep.n.begin(), sweep.n.end(), n) == sweep.n.end()) {
      throw ConfigError("sweep.sample_n entry " + std::to_string(n) + " is not in sweep.n");
    }
  }
  if (sweep.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
  if (!(sweep.eval_t > 0.0) || !std::isfinite(sweep.eval_t)) throw ConfigError("sweep.eval_t must be > 0");
  if (sweep.n_samples < 2) throw ConfigError("sweep.n_samples must be >= 2");
  if (sweep.workers <= 0) throw ConfigError("sweep.workers must be positive");
  if (metrics.n_mc < 2) throw ConfigError("metrics.n_mc must be >= 2");
  if (metrics.permutations < 0) throw ConfigError("metrics.permutations must be >= 0");
  if (metrics.energy_cap < 2) throw ConfigError("metrics.energy_cap must be >= 2");
}

std::string ExperimentConfig::Canonical() const {
  std::string out;
  for (const auto& [key, field] : Fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

namespace {

template <typename Keep>
std::string HashFields(const ExperimentConfig& config, Keep keep) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [key, field] : Fields()) {
    if (!field.fingerprinted || !keep(key)) continue;
    const std::string line = key + " = " + field.get(config) + "\n";
    for (unsigned char ch : line) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string ExperimentConfig::Fingerprint() const {
  return HashFields(*this, [](const std::string&) { return true; });
}

std::string ExperimentConfig::ModelFingerprint() const {
  return HashFields(*this, [](const std::string& key) {
    return key.starts_with("target.") || key.starts_with("schedule.") || key.starts_with("train.");
  });
}

TrainConfig ExperimentConfig::CellTrain(int ambient_dim, long long n, std::uint64_t seed, int steps) const {
  TrainConfig t = train;
  t.seed = seed;
  t.radius_schedule = {r_bar, target.IntrinsicDim(), ambient_dim};
  const long long batch = t.batch_size == 0 ? n : std::min<long long>(t.batch_size, n);
  if (steps > 0) {
    const long long per_epoch = (n + batch - 1) / batch;
    t.epochs = static_cast<int>(std::max<long long>(1, (steps + per_epoch - 1) / per_epoch));
  }
  return t;
}

bool ExperimentConfig::SamplesAt(long long n) const {
  const long long largest = *std::max_element(sweep.n.begin(), sweep.n.end());
  for (long long s : sweep.sample_n) {
    if (s == n || (s == -1 && n == largest)) return true;
  }
  return false;
}

}  // namespace ldiff::harness
