#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swarmctl/control.hpp"
#include "swarmctl/perfmodel.hpp"
#include "swarmctl/workload.hpp"

namespace swarmctl {

struct ExperimentConfig {
  Workload workload;
  std::string controller = "equal";
  std::string objective = "min_avg";  // min_avg | min_max | min_cost
  ControllerConfig control;
  SupplyModelParams supply;
  double duration_s = 20000.0;
  double warmup_s = 2000.0;
  std::string table_path;  // model controller input
  std::optional<std::uint64_t> seed;  // overrides workload.seed when set
  std::string event_log_path;         // optional per-event CSV

  // have_model: a table object is being passed in directly
  void validate(bool have_model = false) const;
};

// One row per epoch boundary: the allocation applied during the epoch that
// just ended plus end-of-epoch metrics. Completions are bucketed by their
// departure epoch so every summary is recomputable from rows alone.
struct EpochRow {
  double time_s = 0.0;
  std::vector<double> x_kbps;
  std::vector<std::size_t> population;
  std::vector<std::optional<double>> window_time_s;
  std::vector<std::size_t> window_samples;  // peers behind the window metric
  std::vector<std::optional<double>> rate_kbps;
  std::vector<std::size_t> completions;
  std::vector<double> completed_time_sum_s;
};

struct MinCostSwarm {
  std::string id;
  double target_time_s = 0.0;
  double achieved_time_s = 0.0;  // 0 when nothing completed post-warmup
  bool within_band = false;      // +/-10% of target by default
};

struct Summary {
  std::optional<double> min_avg_time_s;   // completion-weighted mean
  std::optional<double> min_max_time_s;   // worst swarm's steady window time
  double server_kb = 0.0;                 // post-warmup server bytes
  // first epoch where the pooled window download time settles within 5%
  // across two consecutive metric windows
  std::optional<double> steady_state_s;
  std::vector<MinCostSwarm> cost;         // min_cost only
  std::string degenerate_reason;          // set when objectives are null
};

struct Report {
  std::vector<std::string> swarm_ids;
  std::vector<EpochRow> rows;
  Summary summary;
  // config echo for summary.json
  std::string controller, objective;
  double duration_s = 0.0, warmup_s = 0.0, epoch_length_s = 0.0;
  double total_server_bandwidth_kbps = 0.0;
  std::uint64_t seed = 0;
};

// Lockstep co-simulation: k independent swarms advance epoch by epoch; at
// every boundary the controller sees the observation and its allocation is
// applied verbatim (clamps live in controllers, never here).
Report run_experiment(const ExperimentConfig& config, const PerfModel* model);

// Summary recomputation from rows (also used to verify emitted reports).
Summary summarize(const Report& report, const Workload& workload, double warmup_s,
                  double target_band = 0.10);

// Exhaustive allocation search over a step grid, the solver oracle.
// For min_avg/min_max: all grid allocations summing to total (k <= 4).
// For min_cost: per-swarm smallest grid x meeting the target rate.
struct OracleSpec {
  std::vector<std::function<double(double)>> rate_fns;  // f_i(x) -> KBps
  std::vector<double> weights;      // lambda_i (min_avg)
  std::vector<double> sizes_kb;     // S_i
  std::vector<double> target_rate;  // min_cost targets, KBps
};
Allocation exhaustive_best_allocation(const OracleSpec& spec,
                                      const std::string& objective,
                                      double total_kbps, double grid_step_kbps);

// files: timeseries.csv, summary.json, curves.csv
void emit_report(const Report& report, const std::string& dir);
Report load_timeseries(const std::string& path);

}  // namespace swarmctl
