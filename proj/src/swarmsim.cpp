#include "swarmctl/swarmsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace swarmctl {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void SupplyModelParams::validate() const {
  if (!(e_max > 0.0) || e_max > 1.0)
    throw std::invalid_argument("e_max must be in (0, 1]");
  if (p0 < 0.0 || p0 >= 1.0)
    throw std::invalid_argument("p0 must be in [0, 1)");
  if (!(mu_ref_kbps > 0.0))
    throw std::invalid_argument("mu_ref must be > 0");
  if (!(pairing_scale > 0.0) || !(pairing_power > 0.0))
    throw std::invalid_argument("pairing constants must be > 0");
  if (!(coverage_ref > 0.0))
    throw std::invalid_argument("coverage_ref must be > 0");
  if (!(ref_size_kb > 0.0))
    throw std::invalid_argument("ref_size must be > 0");
}

double swarm_efficiency(const SupplyModelParams& p, std::size_t active,
                        double x_kbps, double file_size_kb, double coverage) {
  if (active <= 1) return 0.0;
  double n = static_cast<double>(active);
  double r = std::min(x_kbps / p.mu_ref_kbps, 1.0);
  if (r <= 0.0) return 0.0;
  double e_max_eff = p.e_max;
  if (p.size_uplift_kappa != 0.0) {
    e_max_eff *= 1.0 + p.size_uplift_kappa * std::log10(file_size_kb / p.ref_size_kb);
    e_max_eff = std::clamp(e_max_eff, 0.0, 1.0);
  }
  double relay = r * (n - 1.0) / n;
  double phi = std::min(std::max(coverage, 0.0) / p.coverage_ref, 1.0);
  double v = (n - 1.0) * r * phi / p.pairing_scale;
  double diversity = e_max_eff * (1.0 - std::exp(-std::pow(v, p.pairing_power)));
  return std::min(e_max_eff, relay + diversity);
}

SwarmSim::SwarmSim(const SwarmSpec& spec, const SupplyModelParams& params,
                   std::uint64_t seed)
    : spec_(spec), params_(params), rng_(seed) {
  params_.validate();
  spec_.dist.validate();
  if (!(spec_.lambda_per_s > 0.0) || !(spec_.file_size_kb > 0.0))
    throw std::invalid_argument("swarm spec needs lambda > 0 and file size > 0");
  next_arrival_s_ = sample_interarrival(spec_.lambda_per_s, rng_);
}

void SwarmSim::set_server_bandwidth(double x_kbps) {
  if (x_kbps < 0.0) throw std::invalid_argument("server bandwidth must be >= 0");
  if (x_kbps == x_kbps_) return;
  x_kbps_ = x_kbps;
  record(SimEvent::kSetBandwidth, 0, x_kbps);
}

double SwarmSim::per_peer_rate() const {
  std::size_t n = peers_.size();
  if (n == 0) return 0.0;
  double coverage = spec_.lambda_per_s * spec_.file_size_kb / params_.mu_ref_kbps;
  double e = swarm_efficiency(params_, n, x_kbps_, spec_.file_size_kb, coverage);
  double aggregate = x_kbps_ + e * eligible_upload_sum_kbps_;
  return aggregate / static_cast<double>(n);
}

std::vector<std::pair<std::uint64_t, double>> SwarmSim::peer_rates() const {
  std::vector<std::pair<std::uint64_t, double>> out;
  out.reserve(peers_.size());
  double rate = per_peer_rate();
  for (const auto& p : peers_) out.emplace_back(p.id, rate);
  return out;
}

void SwarmSim::record(SimEvent kind, std::uint64_t peer, double value) {
  if (recorder_) recorder_(clock_s_, kind, peer, value);
}

void SwarmSim::advance(double until_s) {
  if (until_s < clock_s_)
    throw std::logic_error("advance: until precedes the swarm clock");
  while (clock_s_ < until_s) process_next_event(until_s);
}

void SwarmSim::process_next_event(double until_s) {
  std::size_t n = peers_.size();
  double rate = per_peer_rate();

  // closed-form next event times under the constant per-peer rate
  double t_completion = kInf;
  if (n > 0 && rate > 0.0) {
    double remaining = spec_.file_size_kb - (drain_kb_ - peers_.front().drain_at_arrival_kb);
    t_completion = clock_s_ + std::max(remaining, 0.0) / rate;
  }
  double t_crossing = kInf;
  if (eligible_count_ < n && rate > 0.0) {
    const PeerState& p = peers_[eligible_count_];
    double need = params_.p0 * spec_.file_size_kb - (drain_kb_ - p.drain_at_arrival_kb);
    t_crossing = clock_s_ + std::max(need, 0.0) / rate;
  }
  double t_arrival = next_arrival_s_;

  // same-instant ties resolve completion, then crossing, then arrival
  double t = std::min({until_s, t_completion, t_crossing, t_arrival});
  double dt = t - clock_s_;
  if (dt > 0.0) {
    drain_kb_ += rate * dt;
    delivered_kb_ += rate * dt * static_cast<double>(n);
    peer_seconds_ += dt * static_cast<double>(n);
    clock_s_ = t;
  }

  if (t == t_completion) {
    PeerState done = peers_.front();
    peers_.pop_front();
    if (eligible_count_ > 0) {
      --eligible_count_;
      eligible_upload_sum_kbps_ -= done.upload_capacity_kbps;
    }
    completions_.push_back({done.arrival_time_s, clock_s_});
    record(SimEvent::kCompletion, done.id, clock_s_ - done.arrival_time_s);
  } else if (t == t_crossing) {
    PeerState& p = peers_[eligible_count_];
    p.seeding_eligible = true;
    eligible_upload_sum_kbps_ += p.upload_capacity_kbps;
    ++eligible_count_;
    record(SimEvent::kSeedingEligible, p.id, clock_s_);
  } else if (t == t_arrival) {
    PeerState p;
    p.id = next_peer_id_++;
    p.arrival_time_s = clock_s_;
    p.upload_capacity_kbps = sample_capacity(spec_.dist, rng_);
    p.drain_at_arrival_kb = drain_kb_;
    ++arrivals_total_;
    if (params_.p0 <= 0.0) {
      // eligible from the start; eligible peers always precede the rest,
      // which holds because everyone is eligible in this mode
      p.seeding_eligible = true;
      eligible_upload_sum_kbps_ += p.upload_capacity_kbps;
      peers_.push_back(p);
      ++eligible_count_;
    } else {
      peers_.push_back(p);
    }
    record(SimEvent::kArrival, p.id, p.upload_capacity_kbps);
    next_arrival_s_ = clock_s_ + sample_interarrival(spec_.lambda_per_s, rng_);
  }
  // else: reached until_s
}

std::optional<SwarmSim::WindowStats> SwarmSim::window_time_stats(double window_s) const {
  if (!(window_s > 0.0)) throw std::invalid_argument("window must be > 0");
  double cutoff = clock_s_ - window_s;
  double sum = 0.0;
  std::size_t count = 0;
  // completions are logged in departure order; walk the qualifying tail
  auto it = std::lower_bound(
      completions_.begin(), completions_.end(), cutoff,
      [](const Completion& c, double t) { return c.departure_time_s <= t; });
  for (; it != completions_.end(); ++it) {
    sum += it->duration_s();
    ++count;
  }
  for (const auto& p : peers_) {
    sum += clock_s_ - p.arrival_time_s;
    ++count;
  }
  if (count == 0) return std::nullopt;
  return WindowStats{sum / static_cast<double>(count), count};
}

std::optional<double> SwarmSim::window_mean_download_time(double window_s) const {
  auto stats = window_time_stats(window_s);
  if (!stats) return std::nullopt;
  return stats->mean_s;
}

std::optional<double> SwarmSim::mean_completed_time(double after_s) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& c : completions_) {
    if (c.departure_time_s > after_s) {
      sum += c.duration_s();
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace swarmctl
