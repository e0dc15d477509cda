#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "thinlayer/macro_darcy.hpp"

using namespace thinlayer;
using thinlayer::testing::error_code_of;

namespace {

MacroGrid grid_2d(int columns, int vertical) {
  MacroGrid g;
  g.dim = 2;
  g.columns = {columns, 1};
  g.vertical_cells = vertical;
  return g;
}

Eigen::MatrixXd anisotropic_k() {
  Eigen::MatrixXd K(2, 2);
  K << 0.03, 0.004, 0.004, 0.02;
  return K;
}

DarcyProblem constant_ends(double bottom, double top) {
  DarcyProblem P;
  P.K = anisotropic_k();
  P.grid = grid_2d(8, 40);
  P.force = [](const Point&) { return Point{0.0, 0.0, 0.0}; };
  P.boundary_pressure = [=](const Point& x) { return x[1] < 0.0 ? bottom : top; };
  return P;
}

}  // namespace

TEST_SUITE("macro_darcy") {

TEST_CASE("constant end pressures give a linear profile and a uniform flux") {
  const double lo = 0.4;
  const double hi = 1.3;
  const DarcyProblem P = constant_ends(lo, hi);
  const DarcySolution s = solve_darcy(P);
  const double knn = P.K(1, 1);
  for (int col = 0; col < P.grid.num_columns(); ++col) {
    for (int j = 0; j <= P.grid.vertical_cells; ++j) {
      const double z = P.grid.z(j);
      REQUIRE(std::abs(s.pressure.at(col, j) - (0.5 * (hi + lo) + 0.5 * z * (hi - lo))) <= 1e-12);
      REQUIRE(std::abs(s.velocity[1].at(col, j) + knn * 0.5 * (hi - lo)) <= 1e-12);
      REQUIRE(std::abs(s.velocity[0].at(col, j) + P.K(0, 1) * 0.5 * (hi - lo)) <= 1e-12);
    }
    CHECK(std::abs(s.column_flux[col] + knn * 0.5 * (hi - lo)) <= 1e-12);
  }
  const DarcyDiagnostics d = verify_darcy(P, s);
  CHECK_FALSE(d.violation);
  CHECK(d.max_flux_variation <= 1e-10);
  CHECK(d.boundary_mismatch <= 1e-14);
}

TEST_CASE("linear vertical force gives the quadratic pressure") {
  DarcyProblem P;
  P.K = anisotropic_k();
  P.grid = grid_2d(4, 32);
  P.force = [](const Point& x) { return Point{0.0, x[1], 0.0}; };
  P.boundary_pressure = [](const Point&) { return 0.0; };
  const DarcySolution s = solve_darcy(P);
  for (int col = 0; col < 4; ++col) {
    for (int j = 0; j <= 32; ++j) {
      const double z = P.grid.z(j);
      REQUIRE(std::abs(s.pressure.at(col, j) - 0.5 * (z * z - 1.0)) <= 1e-12);
      REQUIRE(std::abs(s.velocity[1].at(col, j)) <= 1e-12);
    }
  }
  CHECK(s.interval_flux.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(verify_darcy(P, s).max_flux_variation <= 1e-10);
}

TEST_CASE("variable force keeps the vertical flux constant per column") {
  DarcyProblem P;
  P.K = anisotropic_k();
  P.grid = grid_2d(16, 64);
  P.force = [](const Point& x) { return Point{std::sin(3.0 * x[0]), std::exp(x[1]) + x[0], 0.0}; };
  P.boundary_pressure = [](const Point& x) { return 1.0 + 0.5 * x[1] + 0.2 * std::cos(3.14159 * x[0]); };
  const DarcySolution s = solve_darcy(P);
  const DarcyDiagnostics d = verify_darcy(P, s);
  CHECK(d.max_flux_variation <= 1e-10);
  CHECK_FALSE(d.violation);
}

TEST_CASE("perturbed pressure is flagged") {
  const DarcyProblem P = constant_ends(0.0, 1.0);
  DarcySolution s = solve_darcy(P);
  std::mt19937 rng(1);
  std::normal_distribution<double> noise(0.0, 1e-3);
  for (Index k = 0; k < s.pressure.values.size(); ++k) s.pressure.values[k] += noise(rng);
  const DarcyDiagnostics d = verify_darcy(P, s);
  CHECK(d.violation);
  CHECK(d.max_flux_variation > 1e-10);
}

TEST_CASE("Darcy map is linear in force and boundary pressure") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a1 = u(rng), a2 = u(rng), b1 = u(rng), b2 = u(rng);
  const double sa = 0.7;
  const double sb = -1.9;
  auto force = [](double a, double b) {
    return [=](const Point& x) { return Point{a * std::cos(x[0]), b * x[1] * x[1] + a, 0.0}; };
  };
  auto pressure = [](double a, double b) { return [=](const Point& x) { return a + b * x[1] * std::sin(x[0]); }; };
  DarcyProblem P = constant_ends(0.0, 0.0);
  DarcyProblem P1 = P, P2 = P, Pm = P;
  P1.force = force(a1, b1);
  P1.boundary_pressure = pressure(a1, b1);
  P2.force = force(a2, b2);
  P2.boundary_pressure = pressure(a2, b2);
  Pm.force = force(sa * a1 + sb * a2, sa * b1 + sb * b2);
  Pm.boundary_pressure = pressure(sa * a1 + sb * a2, sa * b1 + sb * b2);
  const DarcySolution s1 = solve_darcy(P1), s2 = solve_darcy(P2), sm = solve_darcy(Pm);
  CHECK((sm.pressure.values - sa * s1.pressure.values - sb * s2.pressure.values).cwiseAbs().maxCoeff() <= 1e-12);
  for (int c = 0; c < 2; ++c) {
    const Eigen::VectorXd diff = sm.velocity[c].values - sa * s1.velocity[c].values - sb * s2.velocity[c].values;
    CHECK(diff.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("pressure without force obeys the maximum principle") {
  DarcyProblem P = constant_ends(0.0, 0.0);
  P.boundary_pressure = [](const Point& x) { return x[1] < 0.0 ? std::sin(5.0 * x[0]) : 2.0 * std::cos(3.0 * x[0]); };
  const DarcySolution s = solve_darcy(P);
  for (int col = 0; col < P.grid.num_columns(); ++col) {
    const double lo = std::min(s.pressure.at(col, 0), s.pressure.at(col, P.grid.vertical_cells));
    const double hi = std::max(s.pressure.at(col, 0), s.pressure.at(col, P.grid.vertical_cells));
    for (int j = 0; j <= P.grid.vertical_cells; ++j) {
      REQUIRE(s.pressure.at(col, j) >= lo - 1e-14);
      REQUIRE(s.pressure.at(col, j) <= hi + 1e-14);
    }
  }
}

TEST_CASE("block-diagonal permeability decouples the horizontal velocity from the pressure") {
  MacroGrid g;
  g.dim = 3;
  g.columns = {4, 3};
  g.vertical_cells = 16;
  DarcyProblem P;
  P.K = Eigen::MatrixXd::Zero(3, 3);
  P.K << 0.02, 0.001, 0.0, 0.001, 0.015, 0.0, 0.0, 0.0, 0.05;
  P.grid = g;
  P.force = [](const Point& x) { return Point{1.0 + x[0], -0.5, x[2]}; };
  P.boundary_pressure = [](const Point& x) { return x[2] + x[1]; };
  const DarcySolution s1 = solve_darcy(P);
  P.boundary_pressure = [](const Point& x) { return 5.0 * x[2] * x[2] - x[0]; };
  const DarcySolution s2 = solve_darcy(P);
  for (int col = 0; col < g.num_columns(); ++col) {
    for (int j = 0; j <= 16; ++j) {
      const Point x = g.point(col, j);
      REQUIRE(s1.velocity[0].at(col, j) == doctest::Approx(0.02 * (1.0 + x[0]) - 0.0005).epsilon(1e-13));
      REQUIRE(s1.velocity[0].at(col, j) == s2.velocity[0].at(col, j));
      REQUIRE(s1.velocity[1].at(col, j) == s2.velocity[1].at(col, j));
    }
  }
  CHECK(verify_darcy(P, s2).max_flux_variation <= 1e-10);
}

TEST_CASE("nonpositive vertical permeability is rejected") {
  DarcyProblem P = constant_ends(0.0, 1.0);
  P.K(1, 1) = 0.0;
  CHECK(error_code_of([&] { solve_darcy(P); }) == ErrorCode::SingularK);
  P.K = Eigen::MatrixXd::Identity(3, 3);
  CHECK(error_code_of([&] { solve_darcy(P); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("nodal interpolation reproduces bilinear data and wraps periodically") {
  const MacroGrid g = grid_2d(8, 16);
  NodalField f(g);
  for (int col = 0; col < 8; ++col)
    for (int j = 0; j <= 16; ++j) {
      const Point x = g.point(col, j);
      f.at(col, j) = 2.0 * x[0] - 3.0 * x[1] + x[0] * x[1];
    }
  for (const Point x : {Point{0.3, -0.41, 0.0}, Point{0.5, 0.77, 0.0}, Point{0.8, 0.0, 0.0}}) {
    CHECK(f.sample(x) == doctest::Approx(2.0 * x[0] - 3.0 * x[1] + x[0] * x[1]).epsilon(1e-13));
    CHECK(f.derivative(x, 1) == doctest::Approx(-3.0 + x[0]).epsilon(1e-12));
  }
  NodalField p(g, true);
  for (int col = 0; col < 8; ++col)
    for (int j = 0; j <= 16; ++j) p.at(col, j) = col;
  CHECK(p.sample({0.0, 0.0, 0.0}) == doctest::Approx(3.5));
  CHECK(p.sample({1.0, 0.0, 0.0}) == doctest::Approx(3.5));
}

}  // TEST_SUITE
