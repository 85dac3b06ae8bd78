#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swarmctl/rng.hpp"

namespace swarmctl {

// Units used throughout: bandwidth and rates in KBps, sizes in KB, time in
// seconds. Decimal units: 1 MB = 1000 KB, 1 KB = 1000 bytes.

enum class CapacityKind { kLogUniform, kEmpirical };

struct CapacityPoint {
  double value_kbps = 0.0;
  double prob = 0.0;
};

// Distribution of peer upload capacities. The default log-uniform on
// [40, 200] KBps has mean (hi-lo)/ln(hi/lo) ~= 99.4 KBps.
struct UploadCapacityDist {
  CapacityKind kind = CapacityKind::kLogUniform;
  double lo_kbps = 40.0;
  double hi_kbps = 200.0;
  std::vector<CapacityPoint> points;  // empirical tables only

  double mean_kbps() const;
  // short descriptor such as "log-uniform 40 200", used in file metadata
  std::string descriptor() const;
  void validate() const;  // throws std::invalid_argument on a malformed table
};

struct SwarmSpec {
  std::string id;
  double lambda_per_s = 0.0;   // mean peer arrival rate
  double file_size_kb = 0.0;   // S
  UploadCapacityDist dist;
  std::optional<double> target_time_s;  // per-swarm download-time target
};

struct Workload {
  std::vector<SwarmSpec> swarms;
  double total_server_bandwidth_kbps = 0.0;  // X
  std::uint64_t seed = 1;

  void validate() const;
};

// Seed for the rng stream of swarm `index`; independent streams per swarm.
inline std::uint64_t swarm_seed(std::uint64_t workload_seed, std::size_t index) {
  return workload_seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1);
}

// Exponential interarrival gap: -ln(u)/lambda for u in (0,1).
double interarrival_from_uniform(double lambda_per_s, double u);
double sample_interarrival(double lambda_per_s, RngStream& rng);

// Capacity draw; log-uniform maps u to exp(uniform(ln lo, ln hi)),
// empirical tables invert the cumulative probabilities.
double capacity_from_uniform(const UploadCapacityDist& dist, double u);
double sample_capacity(const UploadCapacityDist& dist, RngStream& rng);

// Arrival rate of rank r is lambda_max * r^-exponent; sorted descending.
std::vector<double> zipf_arrival_rates(std::size_t k, double exponent,
                                       double lambda_max);

// Named workloads used by the stock experiments:
//   zipf_min_avg  - 20 swarms, Zipf 1.5, lambda_max 0.5/s, S 10 MB, X 200
//   zipf_min_max  - same swarms, X 500
//   min_cost_six  - six swarms (0.5, 0.14, 0.12, 0.1, 0.08, 0.01)/s,
//                   S 10 MB, target 150 s each
Workload standard_workload(const std::string& name);

std::string workload_to_json(const Workload& w);
Workload workload_from_json(const std::string& text);

}  // namespace swarmctl
