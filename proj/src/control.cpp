#include "swarmctl/control.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace swarmctl {

void ControllerConfig::validate() const {
  if (!(epoch_length_s > 0.0)) throw std::invalid_argument("epoch length must be > 0");
  if (!(delta_kbps > 0.0) || !(antfarm_delta_kbps > 0.0) || !(solver_step_kbps > 0.0))
    throw std::invalid_argument("adjustment steps must be > 0");
  if (min_bandwidth_kbps < 0.0)
    throw std::invalid_argument("min bandwidth must be >= 0");
  if (stability_window_epochs < 2)
    throw std::invalid_argument("stability window must be >= 2 epochs");
  if (!(metrics_window_s > 0.0))
    throw std::invalid_argument("metrics window must be > 0");
}

Allocation equal_split(double total_kbps, std::size_t k) {
  if (k == 0) throw std::invalid_argument("equal_split: no swarms");
  return Allocation(k, total_kbps / static_cast<double>(k));
}

Allocation prop_split(double total_kbps, const std::vector<double>& lambdas) {
  double sum = std::accumulate(lambdas.begin(), lambdas.end(), 0.0);
  if (sum <= 0.0) return equal_split(total_kbps, lambdas.size());
  Allocation x(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i)
    x[i] = total_kbps * lambdas[i] / sum;
  return x;
}

Allocation btcap_split(double total_kbps, const std::vector<std::size_t>& populations) {
  std::size_t sum = std::accumulate(populations.begin(), populations.end(), std::size_t{0});
  if (sum == 0) return equal_split(total_kbps, populations.size());
  Allocation x(populations.size());
  for (std::size_t i = 0; i < populations.size(); ++i)
    x[i] = total_kbps * static_cast<double>(populations[i]) / static_cast<double>(sum);
  return x;
}

Allocation allocate_by_gradient(
    const std::vector<std::function<double(double)>>& slopes,
    const std::vector<double>& weights, double total_kbps, double step_kbps) {
  std::size_t k = slopes.size();
  if (k == 0 || weights.size() != k)
    throw std::invalid_argument("allocate_by_gradient: bad inputs");
  if (total_kbps + 1e-9 < static_cast<double>(k) * step_kbps)
    throw std::invalid_argument(
        "allocate_by_gradient: budget below one step per swarm");

  Allocation x(k, step_kbps);
  double remaining = total_kbps - static_cast<double>(k) * step_kbps;
  while (remaining > 1e-9) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i)
      best = std::max(best, weights[i] * slopes[i](x[i]));
    std::vector<std::size_t> tied;
    for (std::size_t i = 0; i < k; ++i)
      if (weights[i] * slopes[i](x[i]) >= best - 1e-9) tied.push_back(i);
    double grant = std::min(step_kbps, remaining);
    for (std::size_t i : tied) x[i] += grant / static_cast<double>(tied.size());
    remaining -= grant;
  }
  return x;
}

RateEstimate estimate_arrival_rate(const std::vector<std::size_t>& counts_per_epoch,
                                   std::size_t window, double epoch_length_s,
                                   double threshold) {
  if (window < 2) throw std::invalid_argument("estimate window must be >= 2");
  RateEstimate out;
  if (counts_per_epoch.empty()) return out;
  auto window_rate = [&](std::size_t end) {  // over epochs [end-window, end)
    std::size_t lo = end > window ? end - window : 0;
    std::size_t total = 0;
    for (std::size_t i = lo; i < end; ++i) total += counts_per_epoch[i];
    return static_cast<double>(total) / (static_cast<double>(end - lo) * epoch_length_s);
  };
  std::size_t end = counts_per_epoch.size();
  out.lambda_hat_per_s = window_rate(end);
  if (end >= 2 * window) {
    double cur = out.lambda_hat_per_s;
    double prev = window_rate(end - window);
    if (prev > 0.0)
      out.stable = std::abs(cur - prev) < threshold * prev;
    else
      out.stable = cur == 0.0;
  }
  return out;
}

// ---- single-swarm AIAD ----

double aiad_step(std::optional<double> current_kbps,
                 std::optional<double> measured_rate_kbps, double file_size_kb,
                 double target_time_s, const ControllerConfig& config) {
  double target_rate = file_size_kb / target_time_s;
  if (!current_kbps) return std::round(target_rate);  // whole-KBps start
  if (!measured_rate_kbps) return *current_kbps;      // nothing measured: hold
  if (*measured_rate_kbps < target_rate) return *current_kbps + config.delta_kbps;
  return std::max(*current_kbps - config.delta_kbps, config.min_bandwidth_kbps);
}

// ---- Leveler ----

Allocation leveler_step(const std::vector<std::optional<double>>& rates,
                        const Allocation& current, double total_kbps,
                        const ControllerConfig& config) {
  std::vector<double> measured;
  for (const auto& r : rates)
    if (r) measured.push_back(*r);
  Allocation next = current;
  if (measured.size() >= 2) {
    std::sort(measured.begin(), measured.end());
    std::size_t m = measured.size();
    double median = m % 2 ? measured[m / 2]
                          : 0.5 * (measured[m / 2 - 1] + measured[m / 2]);
    for (std::size_t i = 0; i < rates.size(); ++i) {
      if (!rates[i]) continue;
      if (*rates[i] < median)
        next[i] = current[i] + config.delta_kbps;
      else if (*rates[i] > median)
        next[i] = std::max(current[i] - config.delta_kbps, config.min_bandwidth_kbps);
    }
  }
  double sum = std::accumulate(next.begin(), next.end(), 0.0);
  if (sum > total_kbps) {
    // shave the overage proportionally from the headroom above the floor
    double floor = config.min_bandwidth_kbps;
    double headroom = 0.0;
    for (double x : next) headroom += std::max(x - floor, 0.0);
    double over = sum - total_kbps;
    if (headroom > over) {
      double scale = 1.0 - over / headroom;
      for (double& x : next) x = floor + std::max(x - floor, 0.0) * scale;
    } else {
      for (double& x : next) x = std::min(x, floor);
    }
  }
  return next;
}

// ---- controllers ----

namespace {

class EqualController final : public Controller {
 public:
  EqualController(const Workload& w) : k_(w.swarms.size()), x_(w.total_server_bandwidth_kbps) {}
  Allocation decide(const Observation&) override { return equal_split(x_, k_); }
  std::string name() const override { return "equal"; }

 private:
  std::size_t k_;
  double x_;
};

class PropController final : public Controller {
 public:
  PropController(const Workload& w) : x_(w.total_server_bandwidth_kbps) {
    for (const auto& s : w.swarms) lambdas_.push_back(s.lambda_per_s);
  }
  Allocation decide(const Observation&) override { return prop_split(x_, lambdas_); }
  std::string name() const override { return "prop"; }

 private:
  double x_;
  std::vector<double> lambdas_;
};

class BtCapController final : public Controller {
 public:
  BtCapController(const Workload& w) : k_(w.swarms.size()), x_(w.total_server_bandwidth_kbps) {}
  Allocation decide(const Observation& obs) override {
    std::vector<std::size_t> pops(k_, 0);
    for (std::size_t i = 0; i < obs.swarms.size() && i < k_; ++i)
      pops[i] = obs.swarms[i].population;
    return btcap_split(x_, pops);
  }
  std::string name() const override { return "btcap"; }

 private:
  std::size_t k_;
  double x_;
};

class AiadController final : public Controller {
 public:
  AiadController(const Workload& w, const ControllerConfig& cfg) : cfg_(cfg) {
    for (const auto& s : w.swarms) {
      sizes_.push_back(s.file_size_kb);
      targets_.push_back(*s.target_time_s);
    }
    current_.resize(w.swarms.size());
  }
  Allocation decide(const Observation& obs) override {
    Allocation x(sizes_.size());
    for (std::size_t i = 0; i < sizes_.size(); ++i) {
      std::optional<double> rate;
      if (i < obs.swarms.size()) rate = obs.swarms[i].mean_rate_kbps;
      x[i] = aiad_step(current_[i], rate, sizes_[i], targets_[i], cfg_);
      current_[i] = x[i];
    }
    return x;
  }
  std::string name() const override { return "aiad"; }

 private:
  ControllerConfig cfg_;
  std::vector<double> sizes_, targets_;
  std::vector<std::optional<double>> current_;
};

class LevelerController final : public Controller {
 public:
  LevelerController(const Workload& w, const ControllerConfig& cfg)
      : cfg_(cfg), k_(w.swarms.size()), x_(w.total_server_bandwidth_kbps) {}
  Allocation decide(const Observation& obs) override {
    if (current_.empty()) {
      current_ = equal_split(x_, k_);
      return current_;
    }
    std::vector<std::optional<double>> rates(k_);
    for (std::size_t i = 0; i < obs.swarms.size() && i < k_; ++i)
      rates[i] = obs.swarms[i].mean_rate_kbps;
    current_ = leveler_step(rates, current_, x_, cfg_);
    return current_;
  }
  std::string name() const override { return "leveler"; }

 private:
  ControllerConfig cfg_;
  std::size_t k_;
  double x_;
  Allocation current_;
};

class AntFarmController final : public Controller {
 public:
  AntFarmController(const Workload& w, const ControllerConfig& cfg)
      : cfg_(cfg), k_(w.swarms.size()), x_(w.total_server_bandwidth_kbps) {
    samples_.resize(k_);
    curves_.resize(k_);
    counts_.resize(k_);
    last_inc_rate_.assign(k_, 0.0);
    has_inc_.assign(k_, false);
    perturb_up_.assign(k_, true);
    double init = std::min(cfg_.antfarm_init_kbps, x_ / static_cast<double>(k_));
    alloc_.assign(k_, init);
  }

  Allocation decide(const Observation& obs) override {
    if (obs.epoch_index == 0) return alloc_;

    // fold in this epoch's arrivals and samples at the bandwidth that was
    // actually applied during the epoch
    for (std::size_t i = 0; i < k_; ++i) {
      std::size_t arr = i < obs.swarms.size() ? obs.swarms[i].arrivals : 0;
      counts_[i].push_back(arr);
      if (i < obs.swarms.size() && obs.swarms[i].mean_rate_kbps) {
        samples_[i].push_back({alloc_[i], *obs.swarms[i].mean_rate_kbps});
        while (samples_[i].size() > cfg_.antfarm_max_samples)
          samples_[i].pop_front();
        curves_[i] = ConcavePwl::fit(
            {samples_[i].begin(), samples_[i].end()});
      }
    }
    std::vector<double> lam(k_);
    for (std::size_t i = 0; i < k_; ++i)
      lam[i] = estimate_arrival_rate(counts_[i], cfg_.stability_window_epochs,
                                     cfg_.epoch_length_s, cfg_.stability_threshold)
                   .lambda_hat_per_s;

    double allocated = std::accumulate(alloc_.begin(), alloc_.end(), 0.0);
    if (allocated + 1e-9 < x_) {
      warmup_chunk(obs, lam, allocated);
      return alloc_;
    }
    steady_state(lam);
    return alloc_;
  }
  std::string name() const override { return "antfarm"; }

 private:
  void warmup_chunk(const Observation& obs, const std::vector<double>& lam,
                    double allocated) {
    // next chunk goes to the best arrival-weighted rate gain since that
    // swarm's last increment; unexplored swarms first, ranked by arrivals
    double best = -std::numeric_limits<double>::infinity();
    std::size_t pick = 0;
    for (std::size_t i = 0; i < k_; ++i) {
      double y = 0.0;
      if (i < obs.swarms.size() && obs.swarms[i].mean_rate_kbps)
        y = *obs.swarms[i].mean_rate_kbps;
      double score = has_inc_[i] ? lam[i] * (y - last_inc_rate_[i]) : lam[i] * 1e9;
      if (score > best) {
        best = score;
        pick = i;
      }
    }
    double grant = std::min(cfg_.antfarm_delta_kbps, x_ - allocated);
    alloc_[pick] += grant;
    double y = 0.0;
    if (pick < obs.swarms.size() && obs.swarms[pick].mean_rate_kbps)
      y = *obs.swarms[pick].mean_rate_kbps;
    last_inc_rate_[pick] = y;
    has_inc_[pick] = true;
  }

  void steady_state(const std::vector<double>& lam) {
    double step = cfg_.antfarm_delta_kbps;
    std::vector<std::function<double(double)>> slopes;
    for (std::size_t i = 0; i < k_; ++i) {
      const ConcavePwl& curve = curves_[i];
      slopes.push_back([&curve, step](double x) {
        if (curve.empty()) return 1.0;  // nothing measured yet: explore
        return (curve.value(x + step) - curve.value(x)) / step;
      });
    }
    alloc_ = allocate_by_gradient(slopes, lam, x_, step);

    // perturb one swarm per epoch, alternating direction, budget preserved
    std::size_t target = rr_next_++ % k_;
    bool up = perturb_up_[target];
    perturb_up_[target] = !up;
    if (up) {
      std::size_t donor = k_;
      double donor_x = -1.0;
      for (std::size_t j = 0; j < k_; ++j) {
        if (j == target) continue;
        if (alloc_[j] - step >= cfg_.min_bandwidth_kbps && alloc_[j] > donor_x) {
          donor_x = alloc_[j];
          donor = j;
        }
      }
      if (donor < k_) {
        alloc_[target] += step;
        alloc_[donor] -= step;
      }
    } else {
      alloc_[target] = std::max(alloc_[target] - step, cfg_.min_bandwidth_kbps);
    }
  }

  ControllerConfig cfg_;
  std::size_t k_;
  double x_;
  Allocation alloc_;
  std::vector<std::deque<std::pair<double, double>>> samples_;
  std::vector<ConcavePwl> curves_;
  std::vector<std::vector<std::size_t>> counts_;
  std::vector<double> last_inc_rate_;
  std::vector<bool> has_inc_;
  std::vector<bool> perturb_up_;
  std::size_t rr_next_ = 0;
};

class ModelController final : public Controller {
 public:
  ModelController(const std::string& objective, const Workload& w,
                  const ControllerConfig& cfg, const PerfModel& model)
      : objective_(objective), cfg_(cfg), model_(model),
        x_(w.total_server_bandwidth_kbps) {
    for (const auto& s : w.swarms) {
      lambdas_.push_back(s.lambda_per_s);
      sizes_.push_back(s.file_size_kb);
      targets_.push_back(s.target_time_s.value_or(0.0));
    }
    counts_.resize(w.swarms.size());
    mu_ = model_.table().grid.mu_kbps;
  }

  Allocation decide(const Observation& obs) override {
    std::size_t k = lambdas_.size();
    if (obs.epoch_index > 0) {
      std::size_t total = 0;
      for (std::size_t i = 0; i < k; ++i) {
        std::size_t arr = i < obs.swarms.size() ? obs.swarms[i].arrivals : 0;
        counts_[i].push_back(arr);
        total += arr;
      }
      agg_counts_.push_back(total);
      if (!stable_) {
        auto agg = estimate_arrival_rate(agg_counts_, cfg_.stability_window_epochs,
                                         cfg_.epoch_length_s, cfg_.stability_threshold);
        stable_ = agg.stable;  // latched once reached
      }
    }

    // weights: configured rates for the cost objective (the targets and
    // rates are part of the contract there) or on request; otherwise online
    // estimates over the full history, which keeps converging while the
    // stability check runs on the spec'd sliding windows
    std::vector<double> lam(k);
    bool configured = cfg_.use_true_rates || objective_ == "min_cost";
    for (std::size_t i = 0; i < k; ++i)
      lam[i] = configured
                   ? lambdas_[i]
                   : estimate_arrival_rate(counts_[i],
                                           std::max(counts_[i].size(), std::size_t{2}),
                                           cfg_.epoch_length_s, cfg_.stability_threshold)
                         .lambda_hat_per_s;

    if (objective_ == "min_cost") return solve_min_cost(lam);
    if (!configured && !stable_) {
      // no trustworthy estimate yet: demand-proportional for the averaging
      // objective, uniform for the bottleneck one
      if (objective_ == "min_avg") return prop_split(x_, lambdas_);
      return equal_split(x_, k);
    }
    if (objective_ == "min_avg") return solve_min_avg(lam);
    return solve_min_max(lam);
  }
  std::string name() const override { return "model"; }

 private:
  // query rate floored so coverage clamping stays meaningful for cold
  // estimates (clamp lands at the client-server end of the table)
  double query_lambda(double lam) const { return std::max(lam, 1e-6); }

  Allocation solve_min_avg(const std::vector<double>& lam) {
    std::size_t k = lambdas_.size();
    // exact per-chunk marginal of the true objective sum(lambda * S / f),
    // read off the solver surface; decreasing in x on a concave
    // non-decreasing f, so the greedy step-filling hits the grid optimum
    double step = cfg_.solver_step_kbps;
    std::vector<std::function<double(double)>> slopes;
    for (std::size_t i = 0; i < k; ++i) {
      double ql = query_lambda(lam[i]);
      double S = sizes_[i];
      const PerfModel& m = model_;
      double mu = mu_;
      slopes.push_back([&m, mu, ql, S, step](double x) {
        double y0 = m.solver_value(x, mu, ql, S);
        double y1 = m.solver_value(x + step, mu, ql, S);
        if (y0 <= 0.0) return 1e18;  // any bandwidth beats a stalled swarm
        return S * (1.0 / y0 - 1.0 / y1) / step;
      });
    }
    return allocate_by_gradient(slopes, lam, x_, step);
  }

  Allocation solve_min_max(const std::vector<double>& lam) {
    std::size_t k = lambdas_.size();
    double step = cfg_.solver_step_kbps;
    double y_cap = 0.0;  // nothing above the cap-rate can ever be demanded
    for (std::size_t i = 0; i < k; ++i)
      y_cap = std::max(y_cap, model_.value(model_.bandwidth_cap_kbps(), mu_,
                                           query_lambda(lam[i]), sizes_[i]));
    Allocation best;
    for (double y = step; y <= y_cap + step; y += step) {
      Allocation x(k);
      double sum = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        auto inv = model_.bandwidth_for_rate(y, mu_, query_lambda(lam[i]), sizes_[i]);
        x[i] = inv.saturated ? model_.bandwidth_cap_kbps() : inv.x_kbps;
        sum += x[i];
      }
      if (sum >= x_) break;
      best = std::move(x);
    }
    if (best.empty()) {
      std::cerr << "model/min_max: target rate " << step
                << " KBps already infeasible; falling back to equal split\n";
      return equal_split(x_, k);
    }
    double leftover = x_ - std::accumulate(best.begin(), best.end(), 0.0);
    for (double& xi : best) xi += leftover / static_cast<double>(best.size());
    return best;
  }

  Allocation solve_min_cost(const std::vector<double>& lam) {
    std::size_t k = lambdas_.size();
    Allocation x(k);
    for (std::size_t i = 0; i < k; ++i) {
      double y_target = sizes_[i] / targets_[i];
      auto inv = model_.bandwidth_for_rate(y_target, mu_, query_lambda(lam[i]), sizes_[i]);
      if (inv.saturated && !warned_.count(i)) {
        std::cerr << "model/min_cost: swarm " << i << " target unreachable below "
                  << model_.bandwidth_cap_kbps() << " KBps; pinning at the cap\n";
        warned_.insert(i);
      }
      x[i] = std::max(inv.x_kbps, cfg_.min_bandwidth_kbps);
    }
    return x;
  }

  std::string objective_;
  ControllerConfig cfg_;
  const PerfModel& model_;
  double x_ = 0.0, mu_ = 0.0;
  std::vector<double> lambdas_, sizes_, targets_;
  std::vector<std::vector<std::size_t>> counts_;
  std::vector<std::size_t> agg_counts_;
  bool stable_ = false;
  std::set<std::size_t> warned_;
};

}  // namespace

std::unique_ptr<Controller> make_controller(const std::string& name,
                                            const std::string& objective,
                                            const Workload& workload,
                                            const ControllerConfig& config,
                                            const PerfModel* model) {
  workload.validate();
  config.validate();
  if (objective != "min_avg" && objective != "min_max" && objective != "min_cost")
    throw std::invalid_argument("unknown objective: " + objective);

  auto need_targets = [&](const std::string& who) {
    for (const auto& s : workload.swarms)
      if (!s.target_time_s)
        throw std::invalid_argument(who + " needs a target_time for every swarm");
  };

  if (name == "equal") return std::make_unique<EqualController>(workload);
  if (name == "prop") return std::make_unique<PropController>(workload);
  if (name == "btcap") return std::make_unique<BtCapController>(workload);
  if (name == "aiad") {
    if (objective != "min_cost")
      throw std::invalid_argument("aiad only serves the min_cost objective");
    need_targets("aiad");
    return std::make_unique<AiadController>(workload, config);
  }
  if (name == "leveler") {
    if (objective != "min_max")
      throw std::invalid_argument("leveler only serves the min_max objective");
    return std::make_unique<LevelerController>(workload, config);
  }
  if (name == "antfarm") {
    if (objective != "min_avg")
      throw std::invalid_argument("antfarm only serves the min_avg objective");
    return std::make_unique<AntFarmController>(workload, config);
  }
  if (name == "model") {
    if (!model)
      throw std::invalid_argument("model controller needs a performance table");
    if (objective == "min_cost") need_targets("model/min_cost");
    return std::make_unique<ModelController>(objective, workload, config, *model);
  }
  throw std::invalid_argument("unknown controller: " + name);
}

}  // namespace swarmctl
