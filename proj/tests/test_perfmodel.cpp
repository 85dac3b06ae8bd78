#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "swarmctl/perfmodel.hpp"

using namespace swarmctl;
using doctest::Approx;

namespace {

// synthetic table whose cells follow y = f(x, coverage); fits recover f when
// it is quadratic in x per coverage line
PerfTable synth_table(const std::vector<double>& xs, const std::vector<double>& covs,
                      const std::vector<double>& sizes,
                      const std::function<double(double, double, double)>& f) {
  PerfTable t;
  t.grid = GridSpec::defaults();
  t.grid.x_values_kbps = xs;
  t.grid.coverage_values = covs;
  t.grid.file_sizes_kb = sizes;
  t.grid.mu_kbps = xs.back();
  t.cells.resize(xs.size() * covs.size() * sizes.size());
  for (std::size_t si = 0; si < sizes.size(); ++si)
    for (std::size_t xi = 0; xi < xs.size(); ++xi)
      for (std::size_t ci = 0; ci < covs.size(); ++ci)
        t.cells[t.cell_index(si, xi, ci)] = {f(xs[xi], covs[ci], sizes[si]), 0.0, 1};
  return t;
}

std::vector<double> default_xs() {
  std::vector<double> xs;
  for (int i = 1; i <= 10; ++i) xs.push_back(10.0 * i);
  return xs;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("line fitting") {
  std::vector<double> xs = default_xs();
  SUBCASE("identity line is recovered exactly") {
    std::vector<double> ys = xs;
    FittedLine f = fit_line(xs, ys);
    CHECK(f.a == Approx(0.0).epsilon(1e-12));
    CHECK(f.b == Approx(1.0));
    CHECK(f.c == Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(f.residual_rms == Approx(0.0).scale(1.0).epsilon(1e-9));
  }
  SUBCASE("concave quadratic is recovered exactly") {
    std::vector<double> ys;
    for (double x : xs) ys.push_back(-0.005 * x * x + 1.5 * x);
    FittedLine f = fit_line(xs, ys);
    CHECK(f.a == Approx(-0.005).epsilon(1e-6));
    CHECK(f.b == Approx(1.5).epsilon(1e-6));
    CHECK(f.c == Approx(0.0).scale(1.0).epsilon(1e-6));
  }
  SUBCASE("constraints hold under arbitrary noise") {
    RngStream rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> ys;
      for (double x : xs)
        ys.push_back(std::max(0.0, -0.004 * x * x + 1.2 * x +
                                       30.0 * (rng.uniform01() - 0.5)));
      FittedLine f = fit_line(xs, ys);
      CHECK(f.a <= 1e-12);
      CHECK(2.0 * f.a * xs.back() + f.b >= -1e-9);
    }
  }
  SUBCASE("convex data is projected onto the constraint") {
    std::vector<double> ys;
    for (double x : xs) ys.push_back(0.01 * x * x);  // convex
    FittedLine f = fit_line(xs, ys);
    CHECK(f.a <= 1e-12);
    CHECK(2.0 * f.a * xs.back() + f.b >= -1e-9);
  }
  SUBCASE("too few points") {
    CHECK_THROWS_AS(fit_line({1.0, 2.0}, {1.0, 2.0}), std::invalid_argument);
  }
}

TEST_CASE("measure_point") {
  SupplyModelParams supply;
  UploadCapacityDist dist;
  RunPolicy quick;
  quick.min_completions = 60;
  quick.min_duration_s = 12000.0;
  quick.max_duration_s = 60000.0;

  SUBCASE("client-server regime lands near y = x") {
    auto r = measure_point(50.0, 0.01, 10000.0, dist, 3, supply, quick, 5);
    CHECK(r.y_mean_kbps == Approx(50.0).epsilon(0.15));
    CHECK(r.y_std_kbps < 10.0);
  }
  SUBCASE("one repetition has zero spread") {
    auto r = measure_point(50.0, 0.05, 5000.0, dist, 1, supply, quick, 6);
    CHECK(r.y_std_kbps == 0.0);
    CHECK(r.y_mean_kbps > 0.0);
  }
  SUBCASE("a run that never completes anything is an error") {
    RunPolicy dead;
    dead.min_completions = 10;
    dead.min_duration_s = 3000.0;
    dead.max_duration_s = 3000.0;
    // mean interarrival 1e5 s: nobody arrives inside the capped run
    CHECK_THROWS_AS(
        measure_point(10.0, 1e-5, 10000.0, dist, 1, supply, dead, 7),
        MeasurementError);
  }
}

TEST_CASE("campaign build") {
  GridSpec g;
  g.mu_kbps = 100.0;
  g.x_values_kbps = {20.0, 60.0, 100.0};
  g.coverage_values = {1.0, 50.0};
  g.file_sizes_kb = {10000.0};
  g.reps = 2;
  g.run_policy.min_completions = 40;
  g.run_policy.min_duration_s = 6000.0;
  g.run_policy.max_duration_s = 40000.0;
  g.seed = 3;

  PerfTable t1 = build_table(g, 1);
  CHECK(t1.cells.size() == g.file_sizes_kb.size() * 3 * 2);
  for (const auto& c : t1.cells) {
    CHECK(c.y_mean_kbps > 0.0);
    CHECK(c.reps == 2);
  }
  SUBCASE("thread count does not change the cells") {
    PerfTable t2 = build_table(g, 2);
    REQUIRE(t2.cells.size() == t1.cells.size());
    for (std::size_t i = 0; i < t1.cells.size(); ++i) {
      CHECK(t2.cells[i].y_mean_kbps == t1.cells[i].y_mean_kbps);
      CHECK(t2.cells[i].y_std_kbps == t1.cells[i].y_std_kbps);
    }
  }
  SUBCASE("grid validation") {
    GridSpec bad = g;
    bad.x_values_kbps = {20.0, 60.0, 90.0};  // max != mu
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = g;
    bad.reps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_CASE("lookup on synthetic tables") {
  SUBCASE("grid coordinates reproduce the fitted line") {
    auto quad = [](double x, double cov, double) {
      return -0.002 * x * x + (0.8 + 0.01 * cov) * x + 2.0 * cov;
    };
    PerfTable t = synth_table(default_xs(), {1.0, 25.0, 50.0}, {10000.0}, quad);
    PerfModel m(t);
    // on-grid coverage: the blend degenerates to that line
    for (double x : {10.0, 40.0, 100.0}) {
      double lambda = 25.0 * 100.0 / 10000.0;  // coverage 25
      CHECK(m.value(x, 100.0, lambda, 10000.0) == Approx(quad(x, 25.0, 0)).epsilon(1e-9));
    }
  }
  SUBCASE("bilinear midpoint of a 2x2 corner layout") {
    // corners (x0,c0)=10 (x1,c0)=100 (x0,c1)=80 (x1,c1)=90 with linear lines
    auto f = [](double x, double cov, double) {
      double y0 = 10.0 + (100.0 - 10.0) * (x - 50.0) / 50.0;
      double y1 = 80.0 + (90.0 - 80.0) * (x - 50.0) / 50.0;
      return cov == 1.0 ? y0 : y1;
    };
    PerfTable t = synth_table({50.0, 75.0, 100.0}, {1.0, 2.0}, {10000.0}, f);
    PerfModel m(t);
    double lambda_mid = 1.5 * 100.0 / 10000.0;  // coverage midpoint
    CHECK(m.value(75.0, 100.0, lambda_mid, 10000.0) == Approx(70.0).epsilon(1e-9));
  }
  SUBCASE("extension above mu shares excess across the healthy population") {
    auto flat = [](double, double, double) { return 90.0; };
    PerfTable t = synth_table(default_xs(), {1.0, 50.0}, {10000.0}, flat);
    PerfModel m(t);
    double y = m.value(200.0, 100.0, 0.5, 10000.0);
    CHECK(y == Approx(90.0 + 100.0 / (0.5 * 10000.0 / 90.0)).epsilon(1e-9));
    CHECK(y == Approx(91.8).epsilon(1e-3));
  }
  SUBCASE("coverage clamps to the measured range") {
    auto f = [](double x, double cov, double) { return x * (cov == 1.0 ? 1.0 : 2.0); };
    PerfTable t = synth_table(default_xs(), {1.0, 50.0}, {10000.0}, f);
    PerfModel m(t);
    CHECK(m.value(50.0, 100.0, 1e-9, 10000.0) ==
          Approx(m.value(50.0, 100.0, 0.01, 10000.0)));
    CHECK(m.value(50.0, 100.0, 100.0, 10000.0) ==
          Approx(m.value(50.0, 100.0, 0.5, 10000.0)));
  }
  SUBCASE("mu mismatch is rejected") {
    auto f = [](double x, double, double) { return x; };
    PerfTable t = synth_table(default_xs(), {1.0, 50.0}, {10000.0}, f);
    PerfModel m(t);
    CHECK_THROWS_AS(m.value(50.0, 120.0, 0.1, 10000.0), ModelMismatchError);
  }
}

TEST_CASE("derivative") {
  SUBCASE("identity line slopes to one, chord included") {
    auto f = [](double x, double, double) { return x; };
    PerfModel m(synth_table(default_xs(), {1.0, 50.0}, {10000.0}, f));
    for (double x : {5.0, 30.0, 95.0})
      CHECK(m.slope(x, 100.0, 0.1, 10000.0) == Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("quadratic slope at x=100") {
    auto f = [](double x, double, double) { return -0.005 * x * x + 1.5 * x; };
    PerfModel m(synth_table(default_xs(), {1.0, 50.0}, {10000.0}, f));
    CHECK(m.slope(100.0, 100.0, 0.1, 10000.0) == Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("matches a central finite difference") {
    auto f = [](double x, double cov, double) {
      return -0.003 * x * x + (1.0 + 0.005 * cov) * x + cov;
    };
    PerfModel m(synth_table(default_xs(), {1.0, 25.0, 50.0}, {5000.0, 20000.0}, f));
    RngStream rng(4);
    const double h = 1e-3;
    for (int i = 0; i < 300; ++i) {
      // stay clear of the below-grid chord junction at x = 10
      double x = 10.5 + 85.0 * rng.uniform01();
      double cov = 1.0 + 49.0 * rng.uniform01();
      double S = 5000.0 + 15000.0 * rng.uniform01();
      double lambda = cov * 100.0 / S;
      double analytic = m.slope(x, 100.0, lambda, S);
      double fd = (m.value(x + h, 100.0, lambda, S) -
                   m.value(x - h, 100.0, lambda, S)) / (2.0 * h);
      CHECK(analytic == Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("inverse") {
  SUBCASE("identity line") {
    auto f = [](double x, double, double) { return x; };
    PerfModel m(synth_table(default_xs(), {1.0, 50.0}, {10000.0}, f));
    auto inv = m.bandwidth_for_rate(50.0, 100.0, 0.1, 10000.0);
    CHECK_FALSE(inv.saturated);
    CHECK(inv.x_kbps == Approx(50.0).epsilon(1e-9));
  }
  SUBCASE("round trip within 1e-3 mu") {
    auto f = [](double x, double cov, double) {
      return -0.004 * x * x + (1.1 + 0.004 * cov) * x + 0.4 * cov;
    };
    PerfModel m(synth_table(default_xs(), {1.0, 25.0, 50.0}, {10000.0}, f));
    RngStream rng(6);
    for (int i = 0; i < 300; ++i) {
      double x = 10.0 + 90.0 * rng.uniform01();
      double cov = 1.0 + 49.0 * rng.uniform01();
      double lambda = cov * 100.0 / 10000.0;
      double y = m.value(x, 100.0, lambda, 10000.0);
      auto inv = m.bandwidth_for_rate(y, 100.0, lambda, 10000.0);
      REQUIRE_FALSE(inv.saturated);
      CHECK(std::abs(inv.x_kbps - x) <= 1e-3 * 100.0);
    }
  }
  SUBCASE("saturation above the reachable range") {
    auto f = [](double x, double, double) { return x; };
    PerfModel m(synth_table(default_xs(), {1.0, 50.0}, {10000.0}, f));
    auto inv = m.bandwidth_for_rate(5000.0, 100.0, 0.5, 10000.0);
    CHECK(inv.saturated);
    CHECK(inv.x_kbps == Approx(m.bandwidth_cap_kbps()));
  }
  SUBCASE("targets below the measured range walk the origin chord") {
    auto f = [](double x, double, double) { return 40.0 + 0.5 * x; };
    PerfModel m(synth_table(default_xs(), {1.0, 50.0}, {10000.0}, f));
    // first measured point is (10, 45); below it the curve is the chord
    auto inv = m.bandwidth_for_rate(10.0, 100.0, 0.1, 10000.0);
    CHECK(inv.x_kbps == Approx(10.0 * 10.0 / 45.0));
    CHECK(m.value(inv.x_kbps, 100.0, 0.1, 10000.0) == Approx(10.0));
  }
  SUBCASE("rejects non-positive targets") {
    auto f = [](double x, double, double) { return x; };
    PerfModel m(synth_table(default_xs(), {1.0, 50.0}, {10000.0}, f));
    CHECK_THROWS_AS(m.bandwidth_for_rate(0.0, 100.0, 0.1, 10000.0),
                    std::invalid_argument);
  }
}

TEST_CASE("lookup never decreases in bandwidth") {
  // the fit constraints make every blended curve non-decreasing; scan it
  auto f = [](double x, double cov, double) {
    return -0.0035 * x * x + (0.8 + 0.006 * cov) * x + 0.5 * cov;
  };
  PerfModel m(synth_table(default_xs(), {1.0, 25.0, 50.0}, {10000.0}, f));
  RngStream rng(77);
  for (int line = 0; line < 40; ++line) {
    double cov = 1.0 + 49.0 * rng.uniform01();
    double lambda = cov * 100.0 / 10000.0;
    double prev = 0.0;
    for (double x = 0.0; x <= 180.0; x += 2.5) {
      double y = m.value(x, 100.0, lambda, 10000.0);
      CHECK(y >= prev - 1e-9);
      prev = y;
    }
  }
}

TEST_CASE("continuity across cell boundaries") {
  auto f = [](double x, double cov, double S) {
    return -0.002 * x * x + x + 0.3 * cov + 1e-4 * S;
  };
  PerfModel m(synth_table(default_xs(), {1.0, 25.0, 50.0}, {5000.0, 10000.0, 20000.0}, f));
  // approach interior grid lines from both sides in coverage and size
  for (double cov_edge : {25.0}) {
    for (double S_edge : {10000.0}) {
      double eps = 1e-9;
      double lam_lo = (cov_edge - eps) * 100.0 / S_edge;
      double lam_hi = (cov_edge + eps) * 100.0 / S_edge;
      CHECK(m.value(55.0, 100.0, lam_lo, S_edge) ==
            Approx(m.value(55.0, 100.0, lam_hi, S_edge)).epsilon(1e-9));
      double lam = cov_edge * 100.0 / S_edge;
      CHECK(m.value(55.0, 100.0, lam, S_edge - 1e-6) ==
            Approx(m.value(55.0, 100.0, lam, S_edge + 1e-6)).epsilon(1e-9));
    }
  }
  // continuity at x = mu between the quadratic and the analytic tail
  double lam = 20.0 * 100.0 / 10000.0;
  CHECK(m.value(100.0 - 1e-9, 100.0, lam, 10000.0) ==
        Approx(m.value(100.0 + 1e-9, 100.0, lam, 10000.0)).epsilon(1e-9));
}

TEST_CASE("table save and load") {
  GridSpec g;
  g.mu_kbps = 100.0;
  g.x_values_kbps = {20.0, 60.0, 100.0};
  g.coverage_values = {1.0, 50.0};
  g.file_sizes_kb = {10000.0};
  g.reps = 2;
  g.run_policy.min_completions = 30;
  g.run_policy.min_duration_s = 5000.0;
  g.seed = 13;
  PerfTable t = build_table(g, 2);

  std::string p1 = tmp_path("swarmctl_table_a.csv");
  std::string p2 = tmp_path("swarmctl_table_b.csv");
  save_table(t, p1);

  SUBCASE("round trip is bit-exact on the text form") {
    PerfTable back = load_table(p1);
    REQUIRE(back.cells.size() == t.cells.size());
    save_table(back, p2);
    std::ifstream a(p1), b(p2);
    std::string sa((std::istreambuf_iterator<char>(a)), {});
    std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK(back.grid.mu_kbps == t.grid.mu_kbps);
    CHECK(back.grid.supply.e_max == t.grid.supply.e_max);
    CHECK(back.built == t.built);
  }
  SUBCASE("queries agree after a reload to the file's decimal precision") {
    PerfModel m1(t), m2(load_table(p1));
    CHECK(m1.value(45.0, 100.0, 0.2, 10000.0) ==
          Approx(m2.value(45.0, 100.0, 0.2, 10000.0)).epsilon(1e-5));
  }
  SUBCASE("truncated files name the failure position") {
    std::ifstream in(p1);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::string cut = all.substr(0, all.size() - 18);  // chop mid-row
    std::string p3 = tmp_path("swarmctl_table_trunc.csv");
    std::ofstream(p3) << cut;
    try {
      load_table(p3);
      FAIL("expected TableFormatError");
    } catch (const TableFormatError& e) {
      std::string msg = e.what();
      CHECK(msg.find("byte") != std::string::npos);
    }
  }
  SUBCASE("mu mismatch guard survives the round trip") {
    PerfModel m(load_table(p1));
    CHECK_THROWS_AS(m.value(50.0, 200.0, 0.1, 10000.0), ModelMismatchError);
  }
  SUBCASE("missing schema header is rejected") {
    std::string p4 = tmp_path("swarmctl_table_noschema.csv");
    std::ofstream(p4) << "10000,20,1,25.0,0.1,2\n";
    CHECK_THROWS_AS(load_table(p4), TableFormatError);
  }
}
