#include "varmech/oracles.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace varmech;
using std::numbers::pi;

static const double kSpan = 30.0 * pi;

TEST_CASE("cycloid for h=60 is the half arch") {
  auto sol = oracle::solve_cycloid(kSpan, 60.0, 1.0);
  CHECK(sol.radius == doctest::Approx(30.0).epsilon(1e-10));
  CHECK(sol.phi_b == doctest::Approx(pi).epsilon(1e-10));
  CHECK(sol.travel_time == doctest::Approx(pi * std::sqrt(30.0)).epsilon(1e-10));
}

TEST_CASE("cycloid nearly-level limit approaches the full arch") {
  // as h -> 0 at fixed span the fastest curve dips a full arch deep below
  auto sol = oracle::solve_cycloid(kSpan, 1e-3, 1.0);
  CHECK(sol.phi_b == doctest::Approx(2.0 * pi).epsilon(1e-2));
  CHECK(sol.radius == doctest::Approx(kSpan / (2.0 * pi)).epsilon(1e-2));
  CHECK(sol.y_at(kSpan / 2.0) < -25.0);
}

TEST_CASE("cycloid residuals below 1e-10 for h=30") {
  auto sol = oracle::solve_cycloid(kSpan, 30.0, 1.0);
  const double rx = sol.radius * (sol.phi_b - std::sin(sol.phi_b)) - kSpan;
  const double ry = -sol.radius * (1.0 - std::cos(sol.phi_b)) + 30.0;
  CHECK(std::abs(rx) < 1e-10);
  CHECK(std::abs(ry) < 1e-10);
}

TEST_CASE("cycloid rejects non-descending targets") {
  CHECK_THROWS_AS(oracle::solve_cycloid(kSpan, -1.0, 1.0), oracle::NoRoot);
}

TEST_CASE("cycloid beats the straight incline for every h in [5, 120]") {
  for (int h = 5; h <= 120; ++h) {
    auto sol = oracle::solve_cycloid(kSpan, h, 1.0);
    const double chord = std::sqrt(kSpan * kSpan + double(h) * h);
    const double t_line = chord * std::sqrt(2.0 / double(h));
    CHECK(sol.travel_time < t_line);
  }
  // spot values from the closed forms
  auto s60 = oracle::solve_cycloid(kSpan, 60.0, 1.0);
  CHECK(s60.travel_time == doctest::Approx(17.2070).epsilon(1e-4));
  const double chord60 = std::sqrt(kSpan * kSpan + 3600.0);
  CHECK(chord60 * std::sqrt(2.0 / 60.0) == doctest::Approx(20.398).epsilon(1e-3));
}

TEST_CASE("cycloid inversion hits the quarter-arch point") {
  auto sol = oracle::solve_cycloid(kSpan, 60.0, 1.0);
  const double x_quarter = 30.0 * (pi / 2.0 - 1.0); // phi = pi/2
  CHECK(sol.y_at(x_quarter) == doctest::Approx(-30.0).epsilon(1e-9));
}

TEST_CASE("catenary h=0 l=140 is symmetric with a near 29.4") {
  auto sol = oracle::solve_catenary(kSpan, 0.0, 140.0);
  CHECK(sol.x0 == doctest::Approx(kSpan / 2.0).epsilon(1e-12));
  CHECK(sol.a == doctest::Approx(29.4).epsilon(0.01)); // recomputed to full precision
  CHECK(sol.max_residual() < 1e-10);
  // lowest point at midspan
  CHECK(sol.y_at(kSpan / 2.0) == doctest::Approx(sol.a + sol.c).epsilon(1e-12));
}

TEST_CASE("taut catenary stays within 2 percent of the chord") {
  const double h = 50.0;
  const double chord = std::sqrt(kSpan * kSpan + h * h);
  auto sol = oracle::solve_catenary(kSpan, h, 1.0001 * chord);
  CHECK(sol.max_residual() < 1e-10);
  double max_sag = 0.0;
  for (int i = 0; i <= 200; ++i) {
    const double x = kSpan * i / 200.0;
    const double line = -h * x / kSpan;
    max_sag = std::max(max_sag, line - sol.y_at(x));
  }
  CHECK(max_sag < 0.02 * kSpan);
}

TEST_CASE("catenary arc length agrees with a 1e5-panel quadrature") {
  auto sol = oracle::solve_catenary(kSpan, 50.0, 160.0);
  const int n = 100001;
  std::vector<double> x = prob::uniform_grid(0.0, kSpan, n), y(n);
  for (int i = 0; i < n; ++i) y[i] = sol.y_at(x[i]);
  CHECK(std::abs(prob::polyline_length(x, y) - 160.0) < 1e-8 * 160.0);
}

TEST_CASE("infeasible chains are rejected") {
  CHECK_THROWS_AS(oracle::solve_catenary(kSpan, 50.0, 90.0), oracle::InfeasibleChain);
}

TEST_CASE("oracle curves reproduce the endpoints exactly") {
  auto xg = prob::uniform_grid(0.0, kSpan, 101);
  prob::SampleFeatures s;
  s.h = 60.0;
  auto yb = oracle::oracle_curve(prob::ProblemKind::brachistochrone, s, xg);
  CHECK(yb.front() == 0.0);
  CHECK(yb.back() == -60.0);

  s.h = 50.0;
  s.l = 150.0;
  auto yc = oracle::oracle_curve(prob::ProblemKind::catenary, s, xg);
  CHECK(yc.front() == 0.0);
  CHECK(yc.back() == -50.0);
}

TEST_CASE("catenary potential beats 1000 same-length perturbed shapes") {
  auto sol = oracle::solve_catenary(kSpan, 50.0, 140.0);
  const int n = 1001;
  std::vector<double> x = prob::uniform_grid(0.0, kSpan, n), y0(n);
  for (int i = 0; i < n; ++i) y0[i] = sol.y_at(x[i]);
  const double v0 = prob::polyline_potential(x, y0, 1.0);

  Rng rng(314159);
  int accepted = 0;
  while (accepted < 1000) {
    auto pert = testsupport::perturb_same_length(x, y0, rng);
    if (!pert) continue;
    pert->y.front() = 0.0;
    pert->y.back() = -50.0;
    ++accepted;
    CHECK(prob::polyline_potential(x, pert->y, 1.0) > v0);
  }
}
