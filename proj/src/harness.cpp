#include "swarmctl/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "swarmctl/swarmsim.hpp"

namespace swarmctl {

using nlohmann::ordered_json;

void ExperimentConfig::validate(bool have_model) const {
  workload.validate();
  control.validate();
  supply.validate();
  if (!(duration_s > warmup_s) || warmup_s < 0.0)
    throw std::invalid_argument("need duration > warmup >= 0");
  if (controller == "model" && !have_model && table_path.empty())
    throw std::invalid_argument("the model controller needs a table path");
}

namespace {

// shortest representation that parses back to the same double, so emitted
// rows reproduce summaries exactly
std::string fmt6(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

const char* event_name(SimEvent e) {
  switch (e) {
    case SimEvent::kArrival: return "arrival";
    case SimEvent::kSeedingEligible: return "seed_eligible";
    case SimEvent::kCompletion: return "completion";
    case SimEvent::kSetBandwidth: return "set_bandwidth";
  }
  return "?";
}

}  // namespace

Report run_experiment(const ExperimentConfig& config, const PerfModel* model) {
  config.validate(model != nullptr);
  const Workload& w = config.workload;
  std::uint64_t seed = config.seed.value_or(w.seed);
  std::size_t k = w.swarms.size();

  std::unique_ptr<PerfModel> loaded;
  if (config.controller == "model" && !model) {
    loaded = std::make_unique<PerfModel>(load_table(config.table_path));
    model = loaded.get();
  }
  auto controller = make_controller(config.controller, config.objective, w,
                                    config.control, model);

  std::vector<std::unique_ptr<SwarmSim>> sims;
  std::ofstream event_log;
  if (!config.event_log_path.empty()) {
    event_log.open(config.event_log_path);
    if (!event_log)
      throw std::runtime_error("cannot open event log " + config.event_log_path);
    event_log << "time_s,swarm_id,event_kind,peer_id,value\n";
  }
  for (std::size_t i = 0; i < k; ++i) {
    sims.push_back(std::make_unique<SwarmSim>(w.swarms[i], config.supply,
                                              swarm_seed(seed, i)));
    if (event_log.is_open()) {
      const std::string id = w.swarms[i].id;
      std::ofstream* log = &event_log;
      sims.back()->set_event_recorder(
          [log, id](double t, SimEvent kind, std::uint64_t peer, double value) {
            (*log) << fmt6(t) << ',' << id << ',' << event_name(kind) << ','
                   << peer << ',' << fmt6(value) << '\n';
          });
    }
  }

  Report report;
  report.controller = config.controller;
  report.objective = config.objective;
  report.duration_s = config.duration_s;
  report.warmup_s = config.warmup_s;
  report.epoch_length_s = config.control.epoch_length_s;
  report.total_server_bandwidth_kbps = w.total_server_bandwidth_kbps;
  report.seed = seed;
  for (const auto& s : w.swarms) report.swarm_ids.push_back(s.id);

  // per-swarm snapshots for epoch deltas
  std::vector<std::size_t> completions_seen(k, 0), arrivals_seen(k, 0);
  std::vector<double> delivered_seen(k, 0.0), peer_seconds_seen(k, 0.0);

  double epoch = config.control.epoch_length_s;
  std::size_t epochs = static_cast<std::size_t>(std::ceil(config.duration_s / epoch));

  Observation obs;
  obs.epoch_index = 0;
  obs.time_s = 0.0;
  obs.swarms.assign(k, SwarmObservation{});
  Allocation applied = controller->decide(obs);
  if (applied.size() != k) throw std::logic_error("controller returned wrong arity");
  for (std::size_t i = 0; i < k; ++i) sims[i]->set_server_bandwidth(applied[i]);

  for (std::size_t e = 1; e <= epochs; ++e) {
    double t_end = std::min(epoch * static_cast<double>(e), config.duration_s);
    for (auto& sim : sims) sim->advance(t_end);

    EpochRow row;
    row.time_s = t_end;
    row.x_kbps = applied;
    obs.epoch_index = e;
    obs.time_s = t_end;
    for (std::size_t i = 0; i < k; ++i) {
      SwarmObservation& so = obs.swarms[i];
      const SwarmSim& sim = *sims[i];
      so.population = sim.population();
      so.arrivals = sim.arrivals_total() - arrivals_seen[i];
      arrivals_seen[i] = sim.arrivals_total();
      double d_kb = sim.delivered_kb_total() - delivered_seen[i];
      double d_ps = sim.peer_seconds_total() - peer_seconds_seen[i];
      delivered_seen[i] = sim.delivered_kb_total();
      peer_seconds_seen[i] = sim.peer_seconds_total();
      so.mean_rate_kbps =
          d_ps > 0.0 ? std::optional<double>(d_kb / d_ps) : std::nullopt;
      auto wstats = sim.window_time_stats(config.control.metrics_window_s);
      so.window_time_s =
          wstats ? std::optional<double>(wstats->mean_s) : std::nullopt;

      row.population.push_back(so.population);
      row.rate_kbps.push_back(so.mean_rate_kbps);
      row.window_time_s.push_back(so.window_time_s);
      row.window_samples.push_back(wstats ? wstats->samples : 0);
      std::size_t comp = 0;
      double dur_sum = 0.0;
      const auto& log = sim.completions();
      for (std::size_t c = completions_seen[i]; c < log.size(); ++c) {
        ++comp;
        dur_sum += log[c].duration_s();
      }
      completions_seen[i] = log.size();
      row.completions.push_back(comp);
      row.completed_time_sum_s.push_back(dur_sum);
    }
    report.rows.push_back(std::move(row));

    if (e < epochs) {
      applied = controller->decide(obs);
      if (applied.size() != k) throw std::logic_error("controller returned wrong arity");
      for (std::size_t i = 0; i < k; ++i) sims[i]->set_server_bandwidth(applied[i]);
    }
  }

  report.summary = summarize(report, w, config.warmup_s);
  return report;
}

Summary summarize(const Report& report, const Workload& workload, double warmup_s,
                  double target_band) {
  Summary s;
  std::size_t k = report.swarm_ids.size();
  double epoch = report.epoch_length_s;

  std::size_t total_completions = 0;
  double total_duration_sum = 0.0;
  std::vector<double> swarm_dur_sum(k, 0.0);
  std::vector<std::size_t> swarm_comp(k, 0);
  std::vector<double> wtime_sum(k, 0.0);
  std::vector<std::size_t> wtime_n(k, 0);

  for (const auto& row : report.rows) {
    if (row.time_s <= warmup_s) continue;
    for (std::size_t i = 0; i < k; ++i) {
      s.server_kb += row.x_kbps[i] * epoch;
      total_completions += row.completions[i];
      total_duration_sum += row.completed_time_sum_s[i];
      swarm_comp[i] += row.completions[i];
      swarm_dur_sum[i] += row.completed_time_sum_s[i];
      if (row.window_time_s[i]) {
        wtime_sum[i] += *row.window_time_s[i];
        ++wtime_n[i];
      }
    }
  }

  if (total_completions > 0)
    s.min_avg_time_s = total_duration_sum / static_cast<double>(total_completions);
  else
    s.degenerate_reason = "no completions after warmup";

  double worst = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < k; ++i) {
    if (wtime_n[i] == 0) continue;
    any = true;
    worst = std::max(worst, wtime_sum[i] / static_cast<double>(wtime_n[i]));
  }
  if (any) s.min_max_time_s = worst;

  for (std::size_t i = 0; i < k; ++i) {
    if (!workload.swarms[i].target_time_s) continue;
    MinCostSwarm c;
    c.id = report.swarm_ids[i];
    c.target_time_s = *workload.swarms[i].target_time_s;
    if (swarm_comp[i] > 0)
      c.achieved_time_s = swarm_dur_sum[i] / static_cast<double>(swarm_comp[i]);
    c.within_band = c.achieved_time_s > 0.0 &&
                    std::abs(c.achieved_time_s - c.target_time_s) <=
                        target_band * c.target_time_s;
    s.cost.push_back(std::move(c));
  }

  // steady state: the pooled (peer-weighted) window download time settles
  // within 5% across two consecutive metric windows
  auto pooled = [&](const EpochRow& row) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (!row.window_time_s[i]) continue;
      sum += *row.window_time_s[i] * static_cast<double>(row.window_samples[i]);
      n += row.window_samples[i];
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  std::size_t rows_per_window = epoch > 0.0
      ? static_cast<std::size_t>(std::lround(2000.0 / epoch)) : 0;
  if (rows_per_window > 0 && report.rows.size() > rows_per_window) {
    // final level: pooled metric averaged over the last metric window
    double final_sum = 0.0;
    std::size_t final_n = 0;
    for (std::size_t r = report.rows.size() - rows_per_window; r < report.rows.size(); ++r) {
      if (auto v = pooled(report.rows[r])) {
        final_sum += *v;
        ++final_n;
      }
    }
    if (final_n > 0) {
      double final_level = final_sum / static_cast<double>(final_n);
      // settled = entered the final 5% band and never left it again
      std::optional<double> entered;
      for (const auto& row : report.rows) {
        auto v = pooled(row);
        if (!v) continue;
        if (std::abs(*v - final_level) <= 0.05 * final_level) {
          if (!entered) entered = row.time_s;
        } else {
          entered.reset();
        }
      }
      s.steady_state_s = entered;
    }
  }
  return s;
}

Allocation exhaustive_best_allocation(const OracleSpec& spec,
                                      const std::string& objective,
                                      double total_kbps, double grid_step_kbps) {
  std::size_t k = spec.rate_fns.size();
  if (k == 0) throw std::invalid_argument("oracle: no swarms");
  if (!(grid_step_kbps > 0.0)) throw std::invalid_argument("oracle: bad grid step");

  if (objective == "min_cost") {
    if (spec.target_rate.size() != k)
      throw std::invalid_argument("oracle/min_cost: needs a target rate per swarm");
    Allocation x(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      double xi = 0.0;
      while (spec.rate_fns[i](xi) < spec.target_rate[i] &&
             xi < 1000.0 * grid_step_kbps)
        xi += grid_step_kbps;
      x[i] = xi;
    }
    return x;
  }

  if (k > 4) throw std::invalid_argument("oracle: more than 4 swarms");
  std::size_t steps = static_cast<std::size_t>(std::llround(total_kbps / grid_step_kbps));
  if (std::abs(static_cast<double>(steps) * grid_step_kbps - total_kbps) > 1e-6)
    throw std::invalid_argument("oracle: grid step must divide the budget");

  auto objective_of = [&](const Allocation& x) {
    if (objective == "min_avg") {
      double obj = 0.0;  // sum of lambda_i * S_i / f_i(x_i)
      for (std::size_t i = 0; i < k; ++i) {
        double y = spec.rate_fns[i](x[i]);
        if (y <= 0.0) return std::numeric_limits<double>::infinity();
        obj += spec.weights[i] * spec.sizes_kb[i] / y;
      }
      return obj;
    }
    double worst = 0.0;  // max download time
    for (std::size_t i = 0; i < k; ++i) {
      double y = spec.rate_fns[i](x[i]);
      if (y <= 0.0) return std::numeric_limits<double>::infinity();
      worst = std::max(worst, spec.sizes_kb[i] / y);
    }
    return worst;
  };

  Allocation best, current(k, 0.0);
  double best_obj = std::numeric_limits<double>::infinity();
  // enumerate compositions of `steps` into k parts
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i,
                                                          std::size_t left) {
    if (i + 1 == k) {
      current[i] = static_cast<double>(left) * grid_step_kbps;
      double obj = objective_of(current);
      if (obj < best_obj) {
        best_obj = obj;
        best = current;
      }
      return;
    }
    for (std::size_t take = 0; take <= left; ++take) {
      current[i] = static_cast<double>(take) * grid_step_kbps;
      rec(i + 1, left - take);
    }
  };
  rec(0, steps);
  return best;
}

namespace {

std::string opt_fmt(const std::optional<double>& v) {
  return v ? fmt6(*v) : std::string();
}

}  // namespace

void emit_report(const Report& report, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create report dir " + dir + ": " + ec.message());

  // timeseries.csv: wide per-epoch rows
  {
    std::string path = dir + "/timeseries.csv";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "time_s";
    for (const auto& id : report.swarm_ids)
      out << ",x_" << id << ",pop_" << id << ",wtime_" << id << ",wn_" << id
          << ",rate_" << id << ",comps_" << id << ",ctsum_" << id;
    out << '\n';
    for (const auto& row : report.rows) {
      out << fmt6(row.time_s);
      for (std::size_t i = 0; i < report.swarm_ids.size(); ++i) {
        out << ',' << fmt6(row.x_kbps[i]) << ',' << row.population[i] << ','
            << opt_fmt(row.window_time_s[i]) << ',' << row.window_samples[i]
            << ',' << opt_fmt(row.rate_kbps[i]) << ',' << row.completions[i]
            << ',' << fmt6(row.completed_time_sum_s[i]);
      }
      out << '\n';
    }
    if (!out.good()) throw std::runtime_error("write failed for " + path);
  }

  // curves.csv: long-format download-time trajectories
  {
    std::string path = dir + "/curves.csv";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "time_s,swarm_id,window_time_s\n";
    for (const auto& row : report.rows)
      for (std::size_t i = 0; i < report.swarm_ids.size(); ++i)
        if (row.window_time_s[i])
          out << fmt6(row.time_s) << ',' << report.swarm_ids[i] << ','
              << fmt6(*row.window_time_s[i]) << '\n';
    if (!out.good()) throw std::runtime_error("write failed for " + path);
  }

  // summary.json
  {
    ordered_json j;
    j["controller"] = report.controller;
    j["objective"] = report.objective;
    j["seed"] = report.seed;
    j["duration_s"] = report.duration_s;
    j["warmup_s"] = report.warmup_s;
    j["epoch_length_s"] = report.epoch_length_s;
    j["total_server_bandwidth_kbps"] = report.total_server_bandwidth_kbps;
    const Summary& s = report.summary;
    j["objective_values"]["min_avg_time_s"] =
        s.min_avg_time_s ? ordered_json(*s.min_avg_time_s) : ordered_json(nullptr);
    j["objective_values"]["min_max_time_s"] =
        s.min_max_time_s ? ordered_json(*s.min_max_time_s) : ordered_json(nullptr);
    j["objective_values"]["server_kb"] = s.server_kb;
    if (!s.degenerate_reason.empty())
      j["objective_values"]["null_reason"] = s.degenerate_reason;
    j["time_to_steady_state_s"] =
        s.steady_state_s ? ordered_json(*s.steady_state_s) : ordered_json(nullptr);
    if (!s.cost.empty()) {
      ordered_json arr = ordered_json::array();
      for (const auto& c : s.cost) {
        ordered_json e;
        e["id"] = c.id;
        e["target_time_s"] = c.target_time_s;
        e["achieved_time_s"] = c.achieved_time_s;
        e["within_band"] = c.within_band;
        arr.push_back(std::move(e));
      }
      j["cost"] = std::move(arr);
    }
    std::string path = dir + "/summary.json";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out.good()) throw std::runtime_error("write failed for " + path);
  }
}

Report load_timeseries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  Report report;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");

  // header: time_s then 6 columns per swarm; ids recovered from x_<id>
  {
    std::istringstream hs(line);
    std::string col;
    std::getline(hs, col, ',');
    if (col != "time_s") throw std::runtime_error(path + ": unexpected header");
    std::vector<std::string> cols;
    while (std::getline(hs, col, ',')) cols.push_back(col);
    if (cols.size() % 7 != 0) throw std::runtime_error(path + ": ragged header");
    for (std::size_t i = 0; i < cols.size(); i += 7) {
      if (cols[i].rfind("x_", 0) != 0) throw std::runtime_error(path + ": bad header");
      report.swarm_ids.push_back(cols[i].substr(2));
    }
  }

  std::size_t k = report.swarm_ids.size();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    EpochRow row;
    std::getline(ls, cell, ',');
    row.time_s = std::stod(cell);
    for (std::size_t i = 0; i < k; ++i) {
      auto next = [&]() {
        std::getline(ls, cell, ',');
        return cell;
      };
      row.x_kbps.push_back(std::stod(next()));
      row.population.push_back(std::stoul(next()));
      std::string w = next();
      row.window_time_s.push_back(w.empty() ? std::optional<double>()
                                            : std::optional<double>(std::stod(w)));
      row.window_samples.push_back(std::stoul(next()));
      std::string r = next();
      row.rate_kbps.push_back(r.empty() ? std::optional<double>()
                                        : std::optional<double>(std::stod(r)));
      row.completions.push_back(std::stoul(next()));
      row.completed_time_sum_s.push_back(std::stod(next()));
    }
    report.rows.push_back(std::move(row));
  }
  if (report.rows.size() >= 2)
    report.epoch_length_s = report.rows[1].time_s - report.rows[0].time_s;
  else if (report.rows.size() == 1)
    report.epoch_length_s = report.rows[0].time_s;
  return report;
}

}  // namespace swarmctl
