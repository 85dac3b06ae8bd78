#include "swarmctl/perfmodel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

namespace swarmctl {

GridSpec GridSpec::defaults() {
  GridSpec g;
  for (int i = 1; i <= 10; ++i) g.x_values_kbps.push_back(g.mu_kbps * i / 10.0);
  for (int i = 0; i < 10; ++i) g.coverage_values.push_back(1.0 + 49.0 * i / 9.0);
  g.file_sizes_kb = {5000.0, 10000.0, 20000.0};
  return g;
}

void GridSpec::validate() const {
  if (!(mu_kbps > 0.0)) throw std::invalid_argument("grid: mu must be > 0");
  dist.validate();
  supply.validate();
  if (x_values_kbps.size() < 3 || coverage_values.size() < 2 || file_sizes_kb.empty())
    throw std::invalid_argument("grid: need >= 3 x values, >= 2 coverage values, >= 1 file size");
  auto increasing = [](const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
      if (!(v[i] > v[i - 1])) return false;
    return true;
  };
  if (!increasing(x_values_kbps) || !increasing(coverage_values) ||
      !increasing(file_sizes_kb))
    throw std::invalid_argument("grid: axis values must be strictly increasing");
  if (std::abs(x_values_kbps.back() - mu_kbps) > 1e-9)
    throw std::invalid_argument("grid: max x must equal mu");
  if (reps < 1) throw std::invalid_argument("grid: reps must be >= 1");
}

std::size_t PerfTable::cell_index(std::size_t si, std::size_t xi, std::size_t ci) const {
  return (si * grid.x_values_kbps.size() + xi) * grid.coverage_values.size() + ci;
}

const CellStats& PerfTable::cell(std::size_t si, std::size_t xi, std::size_t ci) const {
  return cells[cell_index(si, xi, ci)];
}

namespace {

// one measurement run; returns S/tau or nullopt when nothing completed
std::optional<double> run_once(double x_kbps, double lambda_per_s,
                               double file_size_kb, const UploadCapacityDist& dist,
                               const SupplyModelParams& supply,
                               const RunPolicy& policy, std::uint64_t seed) {
  SwarmSpec spec;
  spec.id = "measure";
  spec.lambda_per_s = lambda_per_s;
  spec.file_size_kb = file_size_kb;
  spec.dist = dist;
  SwarmSim sim(spec, supply, seed);
  sim.set_server_bandwidth(x_kbps);

  double horizon = policy.min_duration_s;
  while (true) {
    sim.advance(horizon);
    std::size_t done = 0;
    for (const auto& c : sim.completions())
      if (c.departure_time_s > policy.warmup_s) ++done;
    bool milestones = done >= policy.min_completions && sim.now() >= policy.min_duration_s;
    if (milestones || sim.now() >= policy.max_duration_s) break;
    horizon = std::min(policy.max_duration_s, horizon + policy.min_duration_s / 4.0);
  }
  auto tau = sim.mean_completed_time(policy.warmup_s);
  if (!tau || !(*tau > 0.0)) return std::nullopt;
  return file_size_kb / *tau;
}

}  // namespace

MeasureResult measure_point(double x_kbps, double lambda_per_s,
                            double file_size_kb, const UploadCapacityDist& dist,
                            int reps, const SupplyModelParams& supply,
                            const RunPolicy& policy, std::uint64_t seed) {
  if (!(x_kbps > 0.0)) throw std::invalid_argument("measure_point: x must be > 0");
  if (reps < 1) throw std::invalid_argument("measure_point: reps must be >= 1");
  std::vector<double> ys;
  ys.reserve(reps);
  for (int r = 0; r < reps; ++r) {
    std::uint64_t rep_seed = splitmix64(seed + 0x100000001ull * (r + 1));
    auto y = run_once(x_kbps, lambda_per_s, file_size_kb, dist, supply, policy, rep_seed);
    if (!y) {
      // one re-seeded retry, then give up with coordinates attached
      y = run_once(x_kbps, lambda_per_s, file_size_kb, dist, supply, policy,
                   splitmix64(rep_seed ^ 0xdeadbeefull));
      if (!y) {
        std::ostringstream os;
        os << "no completions at x=" << x_kbps << " lambda=" << lambda_per_s
           << " S=" << file_size_kb << " rep=" << r;
        throw MeasurementError(os.str());
      }
    }
    ys.push_back(*y);
  }
  MeasureResult out;
  for (double y : ys) out.y_mean_kbps += y;
  out.y_mean_kbps /= ys.size();
  if (ys.size() > 1) {
    double ss = 0.0;
    for (double y : ys) ss += (y - out.y_mean_kbps) * (y - out.y_mean_kbps);
    out.y_std_kbps = std::sqrt(ss / (ys.size() - 1));
  }
  return out;
}

PerfTable build_table(const GridSpec& grid, unsigned threads) {
  grid.validate();
  PerfTable table;
  table.grid = grid;
  std::size_t total = grid.file_sizes_kb.size() * grid.x_values_kbps.size() *
                      grid.coverage_values.size();
  table.cells.resize(total);
  {
    char buf[64];
    std::time_t t = std::time(nullptr);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    table.built = buf;
  }

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(threads);
  auto worker = [&](unsigned tid) {
    try {
      for (std::size_t i = next.fetch_add(1); i < total; i = next.fetch_add(1)) {
        std::size_t ci = i % grid.coverage_values.size();
        std::size_t xi = (i / grid.coverage_values.size()) % grid.x_values_kbps.size();
        std::size_t si = i / (grid.coverage_values.size() * grid.x_values_kbps.size());
        double S = grid.file_sizes_kb[si];
        double x = grid.x_values_kbps[xi];
        double lambda = grid.coverage_values[ci] * grid.mu_kbps / S;
        std::uint64_t cell_seed =
            splitmix64(grid.seed ^ splitmix64(1000003ull * si + 1009ull * xi + ci + 1));
        auto r = measure_point(x, lambda, S, grid.dist, grid.reps, grid.supply,
                               grid.run_policy, cell_seed);
        table.cells[i] = {r.y_mean_kbps, r.y_std_kbps, grid.reps};
      }
    } catch (const std::exception& e) {
      errors[tid] = e.what();
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw MeasurementError(e);
  return table;
}

// ---- concave piecewise-linear fit ----

ConcavePwl ConcavePwl::fit(std::vector<std::pair<double, double>> samples) {
  ConcavePwl out;
  if (samples.empty()) return out;
  std::sort(samples.begin(), samples.end());

  // collapse repeated x to the mean of their y, keeping multiplicity
  std::vector<double> xs, ys, counts;
  for (const auto& [x, y] : samples) {
    if (!xs.empty() && x == xs.back()) {
      ys.back() += (y - ys.back()) / (counts.back() + 1.0);
      counts.back() += 1.0;
    } else {
      xs.push_back(x);
      ys.push_back(y);
      counts.push_back(1.0);
    }
  }

  if (xs.size() == 1) {
    // single point: ray from the origin
    if (xs[0] > 0.0) {
      out.xs_ = {0.0, xs[0]};
      out.ys_ = {0.0, ys[0]};
    } else {
      out.xs_ = {0.0, 1.0};
      out.ys_ = {ys[0], ys[0]};
    }
    return out;
  }

  // pool adjacent violators on the segment slopes (non-increasing), weights
  // are the segment lengths
  std::size_t m = xs.size() - 1;
  std::vector<double> slope(m), w(m);
  for (std::size_t j = 0; j < m; ++j) {
    w[j] = xs[j + 1] - xs[j];
    slope[j] = (ys[j + 1] - ys[j]) / w[j];
  }
  std::vector<double> ps, pw;  // pooled values and weights
  std::vector<std::size_t> pn;
  for (std::size_t j = 0; j < m; ++j) {
    ps.push_back(slope[j]);
    pw.push_back(w[j]);
    pn.push_back(1);
    while (ps.size() > 1 && ps[ps.size() - 2] < ps.back()) {
      std::size_t b = ps.size() - 1, a = b - 1;
      ps[a] = (ps[a] * pw[a] + ps[b] * pw[b]) / (pw[a] + pw[b]);
      pw[a] += pw[b];
      pn[a] += pn[b];
      ps.pop_back();
      pw.pop_back();
      pn.pop_back();
    }
  }
  // expand pooled slopes, floored at zero so the curve never decreases
  std::vector<double> s_fit;
  for (std::size_t b = 0; b < ps.size(); ++b)
    for (std::size_t r = 0; r < pn[b]; ++r) s_fit.push_back(std::max(ps[b], 0.0));

  // rebuild the shape, then shift by the weighted mean residual
  std::vector<double> g(xs.size(), 0.0);
  for (std::size_t j = 0; j < m; ++j) g[j + 1] = g[j] + s_fit[j] * w[j];
  double shift = 0.0, total_count = 0.0;
  for (std::size_t j = 0; j < xs.size(); ++j) {
    shift += counts[j] * (ys[j] - g[j]);
    total_count += counts[j];
  }
  shift /= total_count;

  out.xs_ = xs;
  out.ys_.resize(xs.size());
  for (std::size_t j = 0; j < xs.size(); ++j) out.ys_[j] = g[j] + shift;
  return out;
}

double ConcavePwl::value(double x) const {
  if (xs_.empty()) return 0.0;
  if (xs_.size() == 1) return std::max(ys_[0], 0.0);
  std::size_t hi;
  if (x <= xs_.front())
    hi = 1;
  else if (x >= xs_.back())
    hi = xs_.size() - 1;
  else
    hi = std::upper_bound(xs_.begin(), xs_.end(), x) - xs_.begin();
  std::size_t lo = hi - 1;
  double s = (ys_[hi] - ys_[lo]) / (xs_[hi] - xs_[lo]);
  return std::max(ys_[lo] + s * (x - xs_[lo]), 0.0);
}

FittedLine fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 3)
    throw std::invalid_argument("fit_line: need >= 3 points");
  std::size_t n = xs.size();
  double x_max = *std::max_element(xs.begin(), xs.end());

  // moment sums for the normal equations
  double s0 = static_cast<double>(n), s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  double t0 = 0, t1 = 0, t2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double x = xs[i], x2 = x * x;
    s1 += x;
    s2 += x2;
    s3 += x2 * x;
    s4 += x2 * x2;
    t0 += ys[i];
    t1 += x * ys[i];
    t2 += x2 * ys[i];
  }

  auto sse = [&](double a, double b, double c) {
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double r = ys[i] - (a * xs[i] * xs[i] + b * xs[i] + c);
      e += r * r;
    }
    return e;
  };

  struct Candidate {
    double a, b, c, err;
    bool ok;
  };
  std::vector<Candidate> cands;

  // unconstrained quadratic via Cramer on the 3x3 normal equations
  {
    double det = s4 * (s2 * s0 - s1 * s1) - s3 * (s3 * s0 - s1 * s2) +
                 s2 * (s3 * s1 - s2 * s2);
    if (std::abs(det) > 1e-12) {
      double da = t2 * (s2 * s0 - s1 * s1) - s3 * (t1 * s0 - t0 * s1) +
                  s2 * (t1 * s1 - t0 * s2);
      double db = s4 * (t1 * s0 - t0 * s1) - t2 * (s3 * s0 - s1 * s2) +
                  s2 * (s3 * t0 - s2 * t1);
      double dc = s4 * (s2 * t0 - t1 * s1) - s3 * (s3 * t0 - s2 * t1) +
                  t2 * (s3 * s1 - s2 * s2);
      double a = da / det, b = db / det, c = dc / det;
      cands.push_back({a, b, c, sse(a, b, c),
                       a <= 1e-15 && 2 * a * x_max + b >= -1e-12});
    }
  }
  // a = 0: plain linear fit, feasible when b >= 0
  {
    double det = s2 * s0 - s1 * s1;
    if (std::abs(det) > 1e-12) {
      double b = (t1 * s0 - t0 * s1) / det;
      double c = (s2 * t0 - s1 * t1) / det;
      cands.push_back({0.0, b, c, sse(0.0, b, c), b >= -1e-12});
    }
  }
  // monotone edge active: b = -2*a*x_max, fit y = a*(x^2 - 2*x_max*x) + c
  {
    double zs = 0, zz = 0, zy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = xs[i] * xs[i] - 2.0 * x_max * xs[i];
      zs += z;
      zz += z * z;
      zy += z * ys[i];
    }
    double det = zz * s0 - zs * zs;
    if (std::abs(det) > 1e-12) {
      double a = (zy * s0 - t0 * zs) / det;
      double c = (zz * t0 - zs * zy) / det;
      double b = -2.0 * a * x_max;
      cands.push_back({a, b, c, sse(a, b, c), a <= 1e-15});
    }
  }
  // both constraints active: flat line at the mean
  {
    double c = t0 / s0;
    cands.push_back({0.0, 0.0, c, sse(0.0, 0.0, c), true});
  }

  const Candidate* best = nullptr;
  for (const auto& cand : cands)
    if (cand.ok && (!best || cand.err < best->err)) best = &cand;

  FittedLine f;
  f.a = std::min(best->a, 0.0);
  f.b = best->b;
  f.c = best->c;
  f.residual_rms = std::sqrt(best->err / n);
  return f;
}

PerfModel::PerfModel(PerfTable table) : table_(std::move(table)) {
  const auto& g = table_.grid;
  lines_.resize(g.file_sizes_kb.size() * g.coverage_values.size());
  pwl_lines_.resize(lines_.size());
  for (std::size_t si = 0; si < g.file_sizes_kb.size(); ++si) {
    for (std::size_t ci = 0; ci < g.coverage_values.size(); ++ci) {
      std::vector<double> ys;
      ys.reserve(g.x_values_kbps.size());
      for (std::size_t xi = 0; xi < g.x_values_kbps.size(); ++xi)
        ys.push_back(table_.cell(si, xi, ci).y_mean_kbps);
      lines_[si * g.coverage_values.size() + ci] = fit_line(g.x_values_kbps, ys);
      std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
      for (std::size_t xi = 0; xi < g.x_values_kbps.size(); ++xi)
        pts.push_back({g.x_values_kbps[xi], ys[xi]});
      pwl_lines_[si * g.coverage_values.size() + ci] = ConcavePwl::fit(std::move(pts));
    }
  }
}

const FittedLine& PerfModel::line(std::size_t si, std::size_t ci) const {
  return lines_[si * table_.grid.coverage_values.size() + ci];
}

namespace {

// bracket q in sorted axis; returns (lo index, weight of hi side)
std::pair<std::size_t, double> bracket(const std::vector<double>& axis, double q) {
  if (q <= axis.front()) return {0, 0.0};
  if (q >= axis.back()) return {axis.size() - 2, 1.0};
  std::size_t hi = std::upper_bound(axis.begin(), axis.end(), q) - axis.begin();
  std::size_t lo = hi - 1;
  double w = (q - axis[lo]) / (axis[hi] - axis[lo]);
  return {lo, w};
}

}  // namespace

PerfModel::Blend PerfModel::blend_at(double mu_kbps, double lambda_per_s,
                                     double file_size_kb) const {
  const auto& g = table_.grid;
  if (std::abs(mu_kbps - g.mu_kbps) > 1e-6 * g.mu_kbps)
    throw ModelMismatchError("table was measured for mu=" + std::to_string(g.mu_kbps) +
                             " KBps; re-measure for a different capacity distribution");
  double cov = lambda_per_s * file_size_kb / mu_kbps;
  cov = std::clamp(cov, g.coverage_values.front(), g.coverage_values.back());
  auto [ci, wc] = bracket(g.coverage_values, cov);

  Blend out;
  if (g.file_sizes_kb.size() == 1) {
    const FittedLine& l0 = line(0, ci);
    const FittedLine& l1 = line(0, ci + 1);
    out.a = (1 - wc) * l0.a + wc * l1.a;
    out.b = (1 - wc) * l0.b + wc * l1.b;
    out.c = (1 - wc) * l0.c + wc * l1.c;
    return out;
  }
  // log-linear in file size across the geometric grid, clamped at the edges
  std::vector<double> logs;
  logs.reserve(g.file_sizes_kb.size());
  for (double s : g.file_sizes_kb) logs.push_back(std::log(s));
  auto [si, ws] = bracket(logs, std::log(file_size_kb));
  for (int ds = 0; ds <= 1; ++ds) {
    double w_size = ds == 0 ? 1 - ws : ws;
    for (int dc = 0; dc <= 1; ++dc) {
      double w = w_size * (dc == 0 ? 1 - wc : wc);
      const FittedLine& l = line(si + ds, ci + dc);
      out.a += w * l.a;
      out.b += w * l.b;
      out.c += w * l.c;
    }
  }
  return out;
}

double PerfModel::value(double x_kbps, double mu_kbps, double lambda_per_s,
                        double file_size_kb) const {
  if (x_kbps < 0.0) throw std::invalid_argument("value: x must be >= 0");
  Blend q = blend_at(mu_kbps, lambda_per_s, file_size_kb);
  double mu = table_.grid.mu_kbps;
  double x_min = table_.grid.x_values_kbps.front();
  if (x_kbps < x_min) {
    // nothing was measured below mu/10; a swarm with no server feed stalls,
    // so take the chord from the origin to the first measured point
    double y_min = q.a * x_min * x_min + q.b * x_min + q.c;
    return y_min * x_kbps / x_min;
  }
  if (x_kbps <= mu) return q.a * x_kbps * x_kbps + q.b * x_kbps + q.c;
  double y_mu = q.a * mu * mu + q.b * mu + q.c;
  // population the excess bandwidth is split across
  double n_bar = lambda_per_s * file_size_kb / y_mu;
  return y_mu + (x_kbps - mu) / n_bar;
}

double PerfModel::slope(double x_kbps, double mu_kbps, double lambda_per_s,
                        double file_size_kb) const {
  if (x_kbps < 0.0) throw std::invalid_argument("slope: x must be >= 0");
  Blend q = blend_at(mu_kbps, lambda_per_s, file_size_kb);
  double mu = table_.grid.mu_kbps;
  double x_min = table_.grid.x_values_kbps.front();
  if (x_kbps < x_min) {
    double y_min = q.a * x_min * x_min + q.b * x_min + q.c;
    return y_min / x_min;
  }
  if (x_kbps <= mu) return 2.0 * q.a * x_kbps + q.b;
  double y_mu = q.a * mu * mu + q.b * mu + q.c;
  double n_bar = lambda_per_s * file_size_kb / y_mu;
  return 1.0 / n_bar;
}

double PerfModel::solver_value(double x_kbps, double mu_kbps, double lambda_per_s,
                               double file_size_kb) const {
  if (x_kbps < 0.0) throw std::invalid_argument("solver_value: x must be >= 0");
  const auto& g = table_.grid;
  // blend weights identical to the quadratic surface
  blend_at(mu_kbps, lambda_per_s, file_size_kb);  // mu guard
  double cov = lambda_per_s * file_size_kb / mu_kbps;
  cov = std::clamp(cov, g.coverage_values.front(), g.coverage_values.back());
  auto [ci, wc] = bracket(g.coverage_values, cov);
  auto line_value = [&](std::size_t si, double x) {
    return (1 - wc) * pwl_lines_[si * g.coverage_values.size() + ci].value(x) +
           wc * pwl_lines_[si * g.coverage_values.size() + ci + 1].value(x);
  };
  double mu = g.mu_kbps;
  double xq = std::min(x_kbps, mu);
  double y;
  if (g.file_sizes_kb.size() == 1) {
    y = line_value(0, xq);
  } else {
    std::vector<double> logs;
    logs.reserve(g.file_sizes_kb.size());
    for (double s : g.file_sizes_kb) logs.push_back(std::log(s));
    auto [si, ws] = bracket(logs, std::log(file_size_kb));
    y = (1 - ws) * line_value(si, xq) + ws * line_value(si + 1, xq);
  }
  if (x_kbps <= mu) return y;
  double n_bar = lambda_per_s * file_size_kb / std::max(y, 1e-9);
  return y + (x_kbps - mu) / n_bar;
}

PerfModel::InverseResult PerfModel::bandwidth_for_rate(double y_kbps, double mu_kbps,
                                                       double lambda_per_s,
                                                       double file_size_kb) const {
  if (!(y_kbps > 0.0)) throw std::invalid_argument("bandwidth_for_rate: y must be > 0");
  Blend q = blend_at(mu_kbps, lambda_per_s, file_size_kb);
  double mu = table_.grid.mu_kbps;
  double x_min = table_.grid.x_values_kbps.front();
  double y_min = q.a * x_min * x_min + q.b * x_min + q.c;
  if (y_kbps <= y_min) {
    // below-grid chord through the origin
    if (y_min <= 0.0) return {bandwidth_cap_kbps(), true};
    return {y_kbps * x_min / y_min, false};
  }
  double y_mu = q.a * mu * mu + q.b * mu + q.c;
  if (y_kbps <= y_mu) {
    // increasing-branch root of a*x^2 + b*x + (c - y) = 0, stable as a -> 0
    double disc = q.b * q.b - 4.0 * q.a * (q.c - y_kbps);
    disc = std::max(disc, 0.0);
    double denom = q.b + std::sqrt(disc);
    if (denom <= 0.0) return {bandwidth_cap_kbps(), true};  // flat line below y
    double x = 2.0 * (y_kbps - q.c) / denom;
    return {std::clamp(x, 0.0, mu), false};
  }
  double n_bar = lambda_per_s * file_size_kb / y_mu;
  double x = mu + (y_kbps - y_mu) * n_bar;
  if (x > bandwidth_cap_kbps()) return {bandwidth_cap_kbps(), true};
  return {x, false};
}

namespace {

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

void save_table(const PerfTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TableFormatError("cannot open " + path + " for writing");
  const auto& g = table.grid;
  out << "# schema_version 1\n";
  out << "# mu_kbps " << fmt6(g.mu_kbps) << "\n";
  out << "# dist " << g.dist.descriptor() << "\n";
  out << "# e_max " << fmt6(g.supply.e_max) << "\n";
  out << "# p0 " << fmt6(g.supply.p0) << "\n";
  out << "# mu_ref_kbps " << fmt6(g.supply.mu_ref_kbps) << "\n";
  out << "# size_uplift_kappa " << fmt6(g.supply.size_uplift_kappa) << "\n";
  out << "# ref_size_kb " << fmt6(g.supply.ref_size_kb) << "\n";
  out << "# pairing_scale " << fmt6(g.supply.pairing_scale) << "\n";
  out << "# pairing_power " << fmt6(g.supply.pairing_power) << "\n";
  out << "# coverage_ref " << fmt6(g.supply.coverage_ref) << "\n";
  out << "# seed " << g.seed << "\n";
  out << "# reps " << g.reps << "\n";
  out << "# built " << table.built << "\n";
  out << "# columns file_size_kb,x_kbps,coverage,y_mean_kbps,y_std_kbps,reps\n";
  for (std::size_t si = 0; si < g.file_sizes_kb.size(); ++si)
    for (std::size_t xi = 0; xi < g.x_values_kbps.size(); ++xi)
      for (std::size_t ci = 0; ci < g.coverage_values.size(); ++ci) {
        const CellStats& cell = table.cell(si, xi, ci);
        out << fmt6(g.file_sizes_kb[si]) << ',' << fmt6(g.x_values_kbps[xi]) << ','
            << fmt6(g.coverage_values[ci]) << ',' << fmt6(cell.y_mean_kbps) << ','
            << fmt6(cell.y_std_kbps) << ',' << cell.reps << '\n';
      }
  if (!out.good()) throw TableFormatError("write failed for " + path);
}

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t lineno,
                             std::size_t byte_offset, const std::string& why) {
  std::ostringstream os;
  os << path << ":" << lineno << " (byte " << byte_offset << "): " << why;
  throw TableFormatError(os.str());
}

}  // namespace

PerfTable load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TableFormatError("cannot open " + path);
  PerfTable table;
  GridSpec& g = table.grid;
  g.x_values_kbps.clear();
  g.coverage_values.clear();
  g.file_sizes_kb.clear();

  struct Row {
    double size, x, cov, y_mean, y_std;
    int reps;
  };
  std::vector<Row> rows;
  std::map<std::string, std::string> meta;

  std::string linebuf;
  std::size_t lineno = 0, offset = 0;
  bool seen_schema = false;
  while (std::getline(in, linebuf)) {
    ++lineno;
    std::size_t line_start = offset;
    offset += linebuf.size() + 1;
    if (linebuf.empty()) continue;
    if (linebuf[0] == '#') {
      std::istringstream ls(linebuf.substr(1));
      std::string key;
      ls >> key;
      std::string rest;
      std::getline(ls, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      meta[key] = rest;
      if (key == "schema_version") {
        if (rest != "1")
          parse_fail(path, lineno, line_start, "unsupported schema_version " + rest);
        seen_schema = true;
      }
      continue;
    }
    Row r;
    char trailing;
    int got = std::sscanf(linebuf.c_str(), "%lf,%lf,%lf,%lf,%lf,%d%c", &r.size, &r.x,
                          &r.cov, &r.y_mean, &r.y_std, &r.reps, &trailing);
    if (got != 6) parse_fail(path, lineno, line_start, "malformed data row");
    rows.push_back(r);
  }
  if (!seen_schema) parse_fail(path, lineno + 1, offset, "missing schema_version header");
  if (rows.empty()) parse_fail(path, lineno + 1, offset, "no data rows");

  auto meta_num = [&](const std::string& key, double fallback,
                      bool required = false) {
    auto it = meta.find(key);
    if (it == meta.end()) {
      if (required) parse_fail(path, lineno + 1, offset, "missing # " + key + " header");
      return fallback;
    }
    return std::stod(it->second);
  };
  g.mu_kbps = meta_num("mu_kbps", 100.0, true);
  g.supply.e_max = meta_num("e_max", g.supply.e_max);
  g.supply.p0 = meta_num("p0", g.supply.p0);
  g.supply.mu_ref_kbps = meta_num("mu_ref_kbps", g.supply.mu_ref_kbps);
  g.supply.size_uplift_kappa = meta_num("size_uplift_kappa", 0.0);
  g.supply.ref_size_kb = meta_num("ref_size_kb", g.supply.ref_size_kb);
  g.supply.pairing_scale = meta_num("pairing_scale", g.supply.pairing_scale);
  g.supply.pairing_power = meta_num("pairing_power", g.supply.pairing_power);
  g.supply.coverage_ref = meta_num("coverage_ref", g.supply.coverage_ref);
  g.seed = static_cast<std::uint64_t>(meta_num("seed", 1.0));
  g.reps = static_cast<int>(meta_num("reps", rows.front().reps));
  if (meta.count("built")) table.built = meta["built"];
  if (meta.count("dist")) {
    std::istringstream ds(meta["dist"]);
    std::string kind;
    ds >> kind;
    if (kind == "log-uniform") {
      ds >> g.dist.lo_kbps >> g.dist.hi_kbps;
    }
    // empirical descriptors are informational; queries only need mu
  }

  auto collect_axis = [&](auto getter) {
    std::vector<double> axis;
    for (const auto& r : rows) axis.push_back(getter(r));
    std::sort(axis.begin(), axis.end());
    axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
    return axis;
  };
  g.file_sizes_kb = collect_axis([](const Row& r) { return r.size; });
  g.x_values_kbps = collect_axis([](const Row& r) { return r.x; });
  g.coverage_values = collect_axis([](const Row& r) { return r.cov; });

  if (g.x_values_kbps.size() < 3 || g.coverage_values.size() < 2)
    parse_fail(path, lineno + 1, offset,
               "grid too small: need >= 3 bandwidth and >= 2 coverage values");
  std::size_t expected =
      g.file_sizes_kb.size() * g.x_values_kbps.size() * g.coverage_values.size();
  if (rows.size() != expected)
    parse_fail(path, lineno + 1, offset,
               "incomplete grid: " + std::to_string(rows.size()) + " rows, expected " +
                   std::to_string(expected));

  auto index_of = [](const std::vector<double>& axis, double v) {
    return static_cast<std::size_t>(
        std::lower_bound(axis.begin(), axis.end(), v) - axis.begin());
  };
  table.cells.assign(expected, CellStats{});
  std::vector<bool> seen(expected, false);
  for (const auto& r : rows) {
    std::size_t idx = table.cell_index(index_of(g.file_sizes_kb, r.size),
                                       index_of(g.x_values_kbps, r.x),
                                       index_of(g.coverage_values, r.cov));
    if (seen[idx]) parse_fail(path, lineno + 1, offset, "duplicate grid coordinate");
    seen[idx] = true;
    table.cells[idx] = {r.y_mean, r.y_std, r.reps};
  }
  return table;
}

}  // namespace swarmctl
