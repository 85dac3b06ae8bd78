#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "swarmctl/workload.hpp"

namespace swarmctl {

// Ground-truth supply model for a simulated swarm. Peer exchanges
// contribute two terms, both riding on the upload capacity U of
// seeding-eligible peers:
//
//   relay     = r * (n - 1) / n,   r = min(x / mu_ref, 1)
//   diversity = e_max_eff * (1 - exp(-v^pairing_power)),
//               v = (n - 1) * r * phi / pairing_scale,
//               phi = min(coverage / coverage_ref, 1)
//   e = min(e_max_eff, relay + diversity)        (0 when n <= 1)
//
// relay: freshly injected data is re-uploaded across the swarm, which lifts
// a block-starved swarm to the injection rate -- per-peer rate ~ x, the
// client-server line. diversity: exchange turns capacity-bound once enough
// usefully distinct pieces circulate; that takes population, server feed,
// and turnover. coverage = lambda*S/mu (the steady population a healthy
// swarm would hold) is the stand-in for unmodeled block-level state:
// high-turnover swarms keep their piece mix rich, low-turnover swarms
// exhaust it and stay relay-bound however large their backlog grows.
struct SupplyModelParams {
  double e_max = 0.85;          // peak usable fraction of peer upload capacity
  double p0 = 0.0;              // file fraction a peer needs before uploading
  double mu_ref_kbps = 100.0;   // capacity mean the efficiency curve is scaled to
  double size_uplift_kappa = 0.0;  // optional file-size boost, off by default
  double ref_size_kb = 10000.0;
  double pairing_scale = 5.0;
  double pairing_power = 4.0;
  double coverage_ref = 50.0;   // turnover at which diversity saturates

  void validate() const;
};

// Efficiency e for `active` peers at server bandwidth x. Coverage is the
// swarm's lambda*S/mu; file size feeds the optional uplift knob.
double swarm_efficiency(const SupplyModelParams& p, std::size_t active,
                        double x_kbps, double file_size_kb, double coverage);

struct PeerState {
  std::uint64_t id = 0;
  double arrival_time_s = 0.0;
  double upload_capacity_kbps = 0.0;
  // cumulative per-peer drain at arrival; remaining = S - (drain_now - this)
  double drain_at_arrival_kb = 0.0;
  bool seeding_eligible = false;
};

struct Completion {
  double arrival_time_s = 0.0;
  double departure_time_s = 0.0;
  double duration_s() const { return departure_time_s - arrival_time_s; }
};

enum class SimEvent { kArrival, kSeedingEligible, kCompletion, kSetBandwidth };

using EventRecorder =
    std::function<void(double time_s, SimEvent kind, std::uint64_t peer_id, double value)>;

// Event-driven fluid simulation of one swarm: Poisson arrivals, equal-share
// download rates under the supply model, immediate departure on completion.
// Rates are piecewise constant between events and every peer drains at the
// same rate, so peers complete in arrival order and a single cumulative
// drain counter gives exact closed-form event times.
class SwarmSim {
 public:
  SwarmSim(const SwarmSpec& spec, const SupplyModelParams& params,
           std::uint64_t seed);

  // Advances the clock processing arrivals, eligibility crossings, and
  // completions in deterministic order. Throws if until < now().
  void advance(double until_s);

  // Takes effect immediately; pending event times are recomputed from the
  // new rate on the next step. Throws on negative x.
  void set_server_bandwidth(double x_kbps);

  double server_bandwidth() const { return x_kbps_; }
  double now() const { return clock_s_; }
  const SwarmSpec& spec() const { return spec_; }
  const SupplyModelParams& supply() const { return params_; }

  std::size_t population() const { return peers_.size(); }

  // Per-peer download rates under the current state; empty when idle.
  std::vector<std::pair<std::uint64_t, double>> peer_rates() const;
  // The equal per-peer share (x + e*U)/n, 0 when the swarm is empty.
  double per_peer_rate() const;

  // Mean over completions inside (now - window, now] pooled with the ages of
  // peers still downloading; nullopt when both sets are empty.
  std::optional<double> window_mean_download_time(double window_s) const;
  struct WindowStats {
    double mean_s = 0.0;
    std::size_t samples = 0;  // completions in window + resident peers
  };
  std::optional<WindowStats> window_time_stats(double window_s) const;

  // Mean duration of completions with departure_time > after_s.
  std::optional<double> mean_completed_time(double after_s = 0.0) const;

  const std::vector<Completion>& completions() const { return completions_; }
  std::uint64_t arrivals_total() const { return arrivals_total_; }

  // Cumulative counters for windowed metrics (snapshot and diff):
  double delivered_kb_total() const { return delivered_kb_; }
  double peer_seconds_total() const { return peer_seconds_; }
  // time integral of the population, for Little's-law checks
  double population_seconds_total() const { return peer_seconds_; }

  void set_event_recorder(EventRecorder rec) { recorder_ = std::move(rec); }

 private:
  void process_next_event(double until_s);
  void record(SimEvent kind, std::uint64_t peer, double value);

  SwarmSpec spec_;
  SupplyModelParams params_;
  RngStream rng_;

  double x_kbps_ = 0.0;
  double clock_s_ = 0.0;
  double next_arrival_s_ = 0.0;
  std::uint64_t next_peer_id_ = 1;

  // active peers in arrival order; [0, eligible_count_) are seeding-eligible
  std::deque<PeerState> peers_;
  std::size_t eligible_count_ = 0;
  double eligible_upload_sum_kbps_ = 0.0;

  double drain_kb_ = 0.0;       // cumulative per-peer drain
  double delivered_kb_ = 0.0;   // total bytes handed to peers
  double peer_seconds_ = 0.0;   // total peer-active seconds
  std::uint64_t arrivals_total_ = 0;

  std::vector<Completion> completions_;
  EventRecorder recorder_;
};

}  // namespace swarmctl
