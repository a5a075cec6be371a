#include "ldiff/harness/records.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace ldiff::harness {

namespace {

using nlohmann::json;

// JSON has no NaN; missing values are written as null.
json Num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

double NumOr(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.at(key).get<double>();
}

}  // namespace

double ExperimentRecord::EvalRisk() const {
  if (timesteps.empty()) return std::numeric_limits<double>::quiet_NaN();
  return timesteps.front().risk;
}

std::string ToJsonLine(const ExperimentRecord& r) {
  json j;
  j["fingerprint"] = r.fingerprint;
  j["kind"] = r.kind;
  j["seed"] = r.seed;
  j["n"] = r.n;
  j["D"] = r.D;
  j["d"] = r.d;
  j["eval_t"] = r.eval_t;
  j["timesteps"] = json::array();
  for (const auto& s : r.timesteps) {
    j["timesteps"].push_back({{"t", s.t},
                              {"loss", Num(s.loss)},
                              {"risk", Num(s.risk)},
                              {"se", Num(s.risk_se)},
                              {"radius", s.radius},
                              {"path_norm", s.path_norm}});
  }
  if (r.sampler) {
    const auto& s = *r.sampler;
    j["sampler"] = {{"n_samples", s.n_samples},
                    {"zeta", s.zeta},
                    {"residual", Num(s.residual)},
                    {"residual_se", Num(s.residual_se)},
                    {"residual_reference", Num(s.residual_reference)},
                    {"energy", Num(s.energy)},
                    {"energy_null_q95", Num(s.energy_null_q95)},
                    {"energy_p_value", Num(s.energy_p_value)},
                    {"permutations", s.permutations},
                    {"weighted_score_error", Num(s.weighted_score_error)}};
  }
  if (r.whitening_error) j["whitening_error"] = *r.whitening_error;
  j["wall_time"] = r.wall_time;
  return j.dump();
}

ExperimentRecord FromJsonLine(const std::string& line) {
  ExperimentRecord r;
  try {
    const json j = json::parse(line);
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.kind = j.at("kind").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n = j.at("n").get<long long>();
    r.D = j.at("D").get<int>();
    r.d = j.at("d").get<int>();
    r.eval_t = j.at("eval_t").get<double>();
    for (const auto& s : j.at("timesteps")) {
      r.timesteps.push_back({s.at("t").get<double>(), NumOr(s, "loss"), NumOr(s, "risk"), NumOr(s, "se"),
                             s.at("radius").get<double>(), s.at("path_norm").get<double>()});
    }
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      SamplerRecord sr;
      sr.n_samples = s.at("n_samples").get<long long>();
      sr.zeta = s.at("zeta").get<double>();
      sr.residual = NumOr(s, "residual");
      sr.residual_se = NumOr(s, "residual_se");
      sr.residual_reference = NumOr(s, "residual_reference");
      sr.energy = NumOr(s, "energy");
      sr.energy_null_q95 = NumOr(s, "energy_null_q95");
      sr.energy_p_value = NumOr(s, "energy_p_value");
      sr.permutations = s.at("permutations").get<int>();
      sr.weighted_score_error = NumOr(s, "weighted_score_error");
      r.sampler = sr;
    }
    if (j.contains("whitening_error")) r.whitening_error = j.at("whitening_error").get<double>();
    r.wall_time = j.value("wall_time", 0.0);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed experiment record: ") + e.what());
  }
  return r;
}

std::vector<ExperimentRecord> ReadRecords(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open records file: " + path.string());
  std::vector<ExperimentRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(FromJsonLine(line));
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

RecordSink::RecordSink(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (std::filesystem::exists(path)) {
    for (const auto& r : ReadRecords(path)) keys_.insert(r.key());
  }
  os_.open(path, std::ios::app);
  if (!os_) throw std::runtime_error("cannot open records file for appending: " + path.string());
}

bool RecordSink::Contains(const ExperimentRecord::Key& key) const {
  std::lock_guard lock(mu_);
  return keys_.count(key) > 0;
}

bool RecordSink::Append(const ExperimentRecord& record) {
  std::lock_guard lock(mu_);
  if (!keys_.insert(record.key()).second) return false;
  os_ << ToJsonLine(record) << '\n';
  os_.flush();
  if (!os_) throw std::runtime_error("write failed: " + path_.string());
  return true;
}

}  // namespace ldiff::harness
