#include "swarmctl/workload.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace swarmctl {

using nlohmann::json;

double UploadCapacityDist::mean_kbps() const {
  if (kind == CapacityKind::kLogUniform) {
    if (hi_kbps == lo_kbps) return lo_kbps;
    return (hi_kbps - lo_kbps) / std::log(hi_kbps / lo_kbps);
  }
  double m = 0.0;
  for (const auto& p : points) m += p.value_kbps * p.prob;
  return m;
}

std::string UploadCapacityDist::descriptor() const {
  std::ostringstream os;
  if (kind == CapacityKind::kLogUniform) {
    os << "log-uniform " << lo_kbps << " " << hi_kbps;
  } else {
    os << "empirical";
    for (const auto& p : points) os << " " << p.value_kbps << ":" << p.prob;
  }
  return os.str();
}

void UploadCapacityDist::validate() const {
  if (kind == CapacityKind::kLogUniform) {
    if (!(lo_kbps > 0.0) || !(hi_kbps >= lo_kbps))
      throw std::invalid_argument("capacity distribution needs 0 < lo <= hi");
    return;
  }
  if (points.empty())
    throw std::invalid_argument("empirical capacity table is empty");
  double total = 0.0;
  for (const auto& p : points) {
    if (!(p.value_kbps > 0.0))
      throw std::invalid_argument("empirical capacity values must be > 0");
    if (p.prob < 0.0)
      throw std::invalid_argument("empirical capacity probabilities must be >= 0");
    total += p.prob;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("empirical capacity probabilities must sum to 1");
}

void Workload::validate() const {
  if (swarms.empty()) throw std::invalid_argument("workload has no swarms");
  if (!(total_server_bandwidth_kbps > 0.0))
    throw std::invalid_argument("total server bandwidth must be > 0");
  std::set<std::string> ids;
  for (const auto& s : swarms) {
    if (!(s.lambda_per_s > 0.0))
      throw std::invalid_argument("swarm " + s.id + ": lambda must be > 0");
    if (!(s.file_size_kb > 0.0))
      throw std::invalid_argument("swarm " + s.id + ": file size must be > 0");
    if (s.target_time_s && !(*s.target_time_s > 0.0))
      throw std::invalid_argument("swarm " + s.id + ": target time must be > 0");
    s.dist.validate();
    if (!ids.insert(s.id).second)
      throw std::invalid_argument("duplicate swarm id " + s.id);
  }
}

double interarrival_from_uniform(double lambda_per_s, double u) {
  return -std::log(u) / lambda_per_s;
}

double sample_interarrival(double lambda_per_s, RngStream& rng) {
  return interarrival_from_uniform(lambda_per_s, rng.uniform01());
}

double capacity_from_uniform(const UploadCapacityDist& dist, double u) {
  if (dist.kind == CapacityKind::kLogUniform) {
    return dist.lo_kbps * std::exp(u * std::log(dist.hi_kbps / dist.lo_kbps));
  }
  double cum = 0.0;
  for (const auto& p : dist.points) {
    cum += p.prob;
    if (u <= cum) return p.value_kbps;
  }
  return dist.points.back().value_kbps;  // u landed in rounding slack
}

double sample_capacity(const UploadCapacityDist& dist, RngStream& rng) {
  dist.validate();
  return capacity_from_uniform(dist, rng.uniform01());
}

std::vector<double> zipf_arrival_rates(std::size_t k, double exponent,
                                       double lambda_max) {
  if (k < 1) throw std::invalid_argument("zipf: k must be >= 1");
  if (!(exponent > 0.0) || !(lambda_max > 0.0))
    throw std::invalid_argument("zipf: exponent and lambda_max must be > 0");
  std::vector<double> rates(k);
  for (std::size_t r = 0; r < k; ++r)
    rates[r] = lambda_max * std::pow(static_cast<double>(r + 1), -exponent);
  return rates;
}

namespace {

Workload zipf_workload(double total_bw_kbps) {
  Workload w;
  w.total_server_bandwidth_kbps = total_bw_kbps;
  auto rates = zipf_arrival_rates(20, 1.5, 0.5);
  for (std::size_t i = 0; i < rates.size(); ++i) {
    SwarmSpec s;
    s.id = "swarm" + std::to_string(i + 1);
    s.lambda_per_s = rates[i];
    s.file_size_kb = 10000.0;  // 10 MB
    w.swarms.push_back(std::move(s));
  }
  return w;
}

}  // namespace

Workload standard_workload(const std::string& name) {
  if (name == "zipf_min_avg") return zipf_workload(200.0);
  if (name == "zipf_min_max") return zipf_workload(500.0);
  if (name == "min_cost_six") {
    Workload w;
    // nominal cap only; the cost objective is unbudgeted
    w.total_server_bandwidth_kbps = 1000.0;
    const double rates[] = {0.5, 0.14, 0.12, 0.1, 0.08, 0.01};
    int i = 0;
    for (double r : rates) {
      SwarmSpec s;
      s.id = "swarm" + std::to_string(++i);
      s.lambda_per_s = r;
      s.file_size_kb = 10000.0;
      s.target_time_s = 150.0;
      w.swarms.push_back(std::move(s));
    }
    return w;
  }
  throw std::invalid_argument("unknown standard workload: " + name);
}

namespace {

json dist_to_json(const UploadCapacityDist& d) {
  json j;
  if (d.kind == CapacityKind::kLogUniform) {
    j["kind"] = "log-uniform";
    j["lo_kbps"] = d.lo_kbps;
    j["hi_kbps"] = d.hi_kbps;
  } else {
    j["kind"] = "empirical";
    json pts = json::array();
    for (const auto& p : d.points) pts.push_back({p.value_kbps, p.prob});
    j["points"] = pts;
  }
  return j;
}

UploadCapacityDist dist_from_json(const json& j) {
  UploadCapacityDist d;
  if (j.is_null()) return d;  // default distribution
  std::string kind = j.value("kind", "log-uniform");
  if (kind == "log-uniform") {
    d.kind = CapacityKind::kLogUniform;
    d.lo_kbps = j.value("lo_kbps", 40.0);
    d.hi_kbps = j.value("hi_kbps", 200.0);
  } else if (kind == "empirical") {
    d.kind = CapacityKind::kEmpirical;
    if (!j.contains("points"))
      throw std::invalid_argument("empirical capacity distribution needs points");
    double lo = 0.0, hi = 0.0;
    for (const auto& p : j.at("points")) {
      CapacityPoint cp{p.at(0).get<double>(), p.at(1).get<double>()};
      if (d.points.empty() || cp.value_kbps < lo) lo = cp.value_kbps;
      if (d.points.empty() || cp.value_kbps > hi) hi = cp.value_kbps;
      d.points.push_back(cp);
    }
    d.lo_kbps = lo;
    d.hi_kbps = hi;
  } else {
    throw std::invalid_argument("unknown capacity distribution kind: " + kind);
  }
  d.validate();
  return d;
}

}  // namespace

std::string workload_to_json(const Workload& w) {
  json j;
  j["total_server_bandwidth_kbps"] = w.total_server_bandwidth_kbps;
  j["seed"] = w.seed;
  json swarms = json::array();
  for (const auto& s : w.swarms) {
    json js;
    js["id"] = s.id;
    js["lambda_per_s"] = s.lambda_per_s;
    js["file_size_kb"] = s.file_size_kb;
    js["dist"] = dist_to_json(s.dist);
    if (s.target_time_s) js["target_time_s"] = *s.target_time_s;
    swarms.push_back(std::move(js));
  }
  j["swarms"] = std::move(swarms);
  return j.dump(2);
}

Workload workload_from_json(const std::string& text) {
  json j = json::parse(text);
  Workload w;
  w.total_server_bandwidth_kbps = j.at("total_server_bandwidth_kbps").get<double>();
  w.seed = j.value("seed", 1ull);
  for (const auto& js : j.at("swarms")) {
    SwarmSpec s;
    s.id = js.at("id").get<std::string>();
    s.lambda_per_s = js.at("lambda_per_s").get<double>();
    s.file_size_kb = js.at("file_size_kb").get<double>();
    if (js.contains("dist")) s.dist = dist_from_json(js.at("dist"));
    if (js.contains("target_time_s"))
      s.target_time_s = js.at("target_time_s").get<double>();
    w.swarms.push_back(std::move(s));
  }
  w.validate();
  return w;
}

}  // namespace swarmctl
