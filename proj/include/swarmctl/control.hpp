#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "swarmctl/perfmodel.hpp"
#include "swarmctl/workload.hpp"

namespace swarmctl {

struct SwarmObservation {
  std::optional<double> mean_rate_kbps;  // mean download rate over the epoch
  std::optional<double> window_time_s;   // windowed mean download time
  std::size_t population = 0;
  std::size_t arrivals = 0;  // arrivals during the epoch
};

struct Observation {
  std::size_t epoch_index = 0;  // 0 = before any simulated time
  double time_s = 0.0;
  std::vector<SwarmObservation> swarms;
};

// Per-swarm server bandwidth, KBps, indexed like the workload.
using Allocation = std::vector<double>;

struct ControllerConfig {
  double epoch_length_s = 200.0;
  double delta_kbps = 10.0;          // AIAD / Leveler adjustment step
  double antfarm_delta_kbps = 5.0;   // AntFarm chunk and perturbation
  double antfarm_init_kbps = 5.0;
  double min_bandwidth_kbps = 5.0;
  double solver_step_kbps = 5.0;     // gradient / target-raising grid
  double stability_threshold = 0.10;
  std::size_t stability_window_epochs = 10;
  std::size_t antfarm_max_samples = 12;
  double metrics_window_s = 2000.0;
  bool use_true_rates = false;  // weight model solvers with configured rates

  void validate() const;
};

// ---- pure allocation rules ----

Allocation equal_split(double total_kbps, std::size_t k);
// proportional to arrival-rate estimates; all-zero falls back to equal
Allocation prop_split(double total_kbps, const std::vector<double>& lambdas);
// proportional to current populations; empty swarms get 0, all-zero -> equal
Allocation btcap_split(double total_kbps, const std::vector<std::size_t>& populations);

// Greedy concave filling: start every swarm at `step`, then repeatedly grant
// the next step to the swarm(s) with the largest weighted slope, splitting
// exact ties equally, until the budget is spent. Throws when X < k*step.
Allocation allocate_by_gradient(
    const std::vector<std::function<double(double)>>& slopes,
    const std::vector<double>& weights, double total_kbps, double step_kbps);

// ---- arrival-rate estimation ----

struct RateEstimate {
  double lambda_hat_per_s = 0.0;
  bool stable = false;
};

// lambda over the trailing `window` epochs; stable when the two most recent
// non-overlapping windows agree within `threshold` relative.
RateEstimate estimate_arrival_rate(const std::vector<std::size_t>& counts_per_epoch,
                                   std::size_t window, double epoch_length_s,
                                   double threshold);

// ---- controllers ----

class Controller {
 public:
  virtual ~Controller() = default;
  // Called at every epoch boundary, including t = 0 (empty observation).
  virtual Allocation decide(const Observation& obs) = 0;
  virtual std::string name() const = 0;
};

// controller names: equal | prop | btcap | aiad | leveler | antfarm | model
// The model controller solves the objective on the measured table and is the
// only one that needs `model`.
std::unique_ptr<Controller> make_controller(const std::string& name,
                                            const std::string& objective,
                                            const Workload& workload,
                                            const ControllerConfig& config,
                                            const PerfModel* model);

// single-swarm AIAD step, exposed for tests: nullopt previous = first epoch
double aiad_step(std::optional<double> current_kbps,
                 std::optional<double> measured_rate_kbps, double file_size_kb,
                 double target_time_s, const ControllerConfig& config);

// Leveler step on measured rates; sums above the budget are rescaled onto it
Allocation leveler_step(const std::vector<std::optional<double>>& rates,
                        const Allocation& current, double total_kbps,
                        const ControllerConfig& config);

}  // namespace swarmctl
