#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "swarmctl/swarmsim.hpp"
#include "swarmctl/workload.hpp"

namespace swarmctl {

// Stopping rule for one measurement run: advance until both the completion
// and duration milestones are met, or the hard cap is hit.
struct RunPolicy {
  std::size_t min_completions = 200;
  double min_duration_s = 20000.0;
  double max_duration_s = 200000.0;
  double warmup_s = 2000.0;  // completions before this are discarded
};

// Measurement grid: swarm performance y = S/tau is sampled over
// (file size, server bandwidth, healthy swarm size), where the healthy
// swarm size ("coverage") is lambda*S/mu and recovers lambda as cov*mu/S.
struct GridSpec {
  double mu_kbps = 100.0;
  UploadCapacityDist dist;
  std::vector<double> x_values_kbps;    // default: mu/10 .. mu, 10 equal steps
  std::vector<double> coverage_values;  // default: 1 .. 50, 10 equal steps
  std::vector<double> file_sizes_kb;    // geometric; default {5, 10, 20} MB
  int reps = 5;
  RunPolicy run_policy;
  SupplyModelParams supply;
  std::uint64_t seed = 1;

  static GridSpec defaults();
  void validate() const;
};

struct CellStats {
  double y_mean_kbps = 0.0;
  double y_std_kbps = 0.0;
  int reps = 0;
};

// Measured table plus build metadata. Cells are indexed
// [size][x][coverage] in grid order. Immutable once built; fits are
// derived data and recomputed on load.
struct PerfTable {
  GridSpec grid;
  std::vector<CellStats> cells;
  std::string built;  // timestamp string, metadata only

  std::size_t cell_index(std::size_t si, std::size_t xi, std::size_t ci) const;
  const CellStats& cell(std::size_t si, std::size_t xi, std::size_t ci) const;
};

// Concave non-decreasing quadratic y = a*x^2 + b*x + c on [0, x_max]:
// a <= 0 and 2*a*x_max + b >= 0.
struct FittedLine {
  double a = 0.0, b = 0.0, c = 0.0;
  double residual_rms = 0.0;
};

// Concave non-decreasing piecewise-linear least squares: pool adjacent
// violating slopes, then shift vertically by the mean residual. Used both
// for the online response curves and as the solver-side cleaning of
// measured lines (a single quadratic cannot follow the knee of mid-coverage
// lines, see PerfModel::solver_value).
class ConcavePwl {
 public:
  ConcavePwl() = default;
  static ConcavePwl fit(std::vector<std::pair<double, double>> samples);

  double value(double x) const;
  bool empty() const { return xs_.empty(); }
  const std::vector<double>& knots() const { return xs_; }
  const std::vector<double>& values() const { return ys_; }

 private:
  std::vector<double> xs_, ys_;  // knot positions and fitted values
};

struct MeasureResult {
  double y_mean_kbps = 0.0;
  double y_std_kbps = 0.0;
};

class MeasurementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ModelMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class TableFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One grid point: `reps` independent runs with distinct seeds; y = S/tau per
// run, tau = mean download time of post-warmup completions. A run with zero
// completions is re-seeded once; a second failure raises MeasurementError.
MeasureResult measure_point(double x_kbps, double lambda_per_s,
                            double file_size_kb, const UploadCapacityDist& dist,
                            int reps, const SupplyModelParams& supply,
                            const RunPolicy& policy, std::uint64_t seed);

// Full campaign; cells fan out over `threads` workers with per-cell seeds,
// so the result is independent of the thread count.
PerfTable build_table(const GridSpec& grid, unsigned threads = 0);

// Constrained least squares for one (file size, coverage) line; needs >= 3
// points. Solves the unconstrained quadratic and falls back over the
// active-set of the two constraints, keeping the feasible fit with the
// least squared error.
FittedLine fit_line(const std::vector<double>& xs, const std::vector<double>& ys);

// Query layer: bilinear interpolation across the fitted lines (linear in
// coverage, linear in log file size), analytic in x on the blended
// quadratic. Queries must carry the mu the table was measured with.
class PerfModel {
 public:
  explicit PerfModel(PerfTable table);

  const PerfTable& table() const { return table_; }
  const FittedLine& line(std::size_t si, std::size_t ci) const;

  // swarm performance y (KBps); above mu the excess is shared
  // client-server style across the healthy population lambda*S/y(mu)
  double value(double x_kbps, double mu_kbps, double lambda_per_s,
               double file_size_kb) const;
  // dy/dx of the interpolated curve; 1/n_bar above mu
  double slope(double x_kbps, double mu_kbps, double lambda_per_s,
               double file_size_kb) const;

  struct InverseResult {
    double x_kbps = 0.0;
    bool saturated = false;  // y unreachable below the bandwidth cap
  };
  // smallest x >= 0 with value(x) >= y
  InverseResult bandwidth_for_rate(double y_kbps, double mu_kbps,
                                   double lambda_per_s, double file_size_kb) const;

  double bandwidth_cap_kbps() const { return 10.0 * table_.grid.mu_kbps; }

  // Solver-side view of the same cells: concave piecewise-linear per line
  // anchored at the origin, blended with the lookup weights. The quadratic
  // cleaning smooths the knee of mid-coverage lines by several KBps, which
  // is enough to hide their allocation value; gradient solvers read this
  // surface instead.
  double solver_value(double x_kbps, double mu_kbps, double lambda_per_s,
                      double file_size_kb) const;

 private:
  struct Blend {
    double a = 0.0, b = 0.0, c = 0.0;  // coverage/size-weighted quadratic
  };
  Blend blend_at(double mu_kbps, double lambda_per_s, double file_size_kb) const;

  PerfTable table_;
  std::vector<FittedLine> lines_;      // [size][coverage]
  std::vector<ConcavePwl> pwl_lines_;  // same order
};

void save_table(const PerfTable& table, const std::string& path);
PerfTable load_table(const std::string& path);

}  // namespace swarmctl
