#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "support.hpp"
#include "thinlayer/cell_stokes.hpp"

using namespace thinlayer;
using thinlayer::testing::error_code_of;

namespace {

PermeabilityTensor disk_permeability(double r, int m) {
  return permeability(solve_all_cell_stokes(build_unit_cell(InclusionSpec::ball(r), 2, m)));
}

}  // namespace

TEST_SUITE("cell_stokes") {

TEST_CASE("cell without solid has no periodic balance") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::full_fluid(), 2, 16);
  CHECK(error_code_of([&] { solve_stokes_cell(cell, 0); }) == ErrorCode::EmptyInclusion);
  CHECK(error_code_of([&] { solve_all_cell_stokes(cell); }) == ErrorCode::EmptyInclusion);
}

TEST_CASE("centred disk flow is mirror symmetric across the horizontal midline") {
  const int m = 32;
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.25), 2, m);
  const CellStokesSolution s = solve_stokes_cell(cell, 0);
  const VectorField w = s.w();
  const StructuredGrid& g = cell.grid;
  const double scale = w.comp[0].cwiseAbs().maxCoeff();
  REQUIRE(scale > 0.0);
  double worst = 0.0;
  for (Index f = 0; f < g.num_faces(0); ++f) {
    const Coord c = g.face_coords(0, f);
    const Coord mirror{c[0], m - 1 - c[1], 0};
    worst = std::max(worst, std::abs(w.comp[0][f] - w.comp[0][g.face_index(0, mirror)]));
  }
  CHECK(worst <= 1e-9 * scale);
}

TEST_CASE("cell velocity is solenoidal, vanishes at the solid and has mean-zero pressure") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.3), 2, 32);
  for (int axis = 0; axis < 2; ++axis) {
    const CellStokesSolution s = solve_stokes_cell(cell, axis);
    CHECK(s.report.converged);
    CHECK(s.report.divergence_residual <= 1e-9);
    const ScalarField div = divergence(s.w());
    for (Index i = 0; i < div.values.size(); ++i)
      if (cell.fluid[std::size_t(i)]) REQUIRE(std::abs(div.values[i]) <= 1e-8);
    const VectorField w = s.w();
    for (int c = 0; c < 2; ++c)
      for (Index f = 0; f < cell.grid.num_faces(c); ++f)
        if (!w.active[c][std::size_t(f)]) REQUIRE(w.comp[c][f] == 0.0);
    CHECK(std::abs(s.pressure.mean()) <= 1e-12 * (1.0 + s.pressure.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("disk permeability is isotropic, symmetric and positive definite") {
  const PermeabilityTensor K = disk_permeability(0.25, 64);
  const double k11 = K.K(0, 0);
  CHECK(std::abs(K.K(1, 1) - k11) <= 1e-8 * k11);
  CHECK(std::abs(K.K(0, 1)) <= 1e-8 * k11);
  CHECK(K.symmetry_error <= 1e-8);
  CHECK(K.formula_discrepancy <= 1e-5);
  CHECK(K.eigenvalues.minCoeff() > 0.0);
}

TEST_CASE("permeability grows as the inclusion shrinks") {
  const PermeabilityTensor small = disk_permeability(0.2, 48);
  const PermeabilityTensor large = disk_permeability(0.3, 48);
  CHECK(small.K(0, 0) > large.K(0, 0));
  CHECK(small.K(1, 1) > large.K(1, 1));
}

TEST_CASE("disk permeability at m = 128 against the extrapolated fine-grid value") {
  // Reference from m = 64, 128, 256 by Aitken extrapolation (observed order 1.2,
  // staircase boundary): K11 -> 0.0199215. The m = 128 value sits 0.72% above.
  const PermeabilityTensor K = disk_permeability(0.25, 128);
  CHECK(K.K(0, 0) == doctest::Approx(0.020064446787).epsilon(1e-7));
  CHECK(std::abs(K.K(0, 0) - 0.0199215) <= 1e-2 * 0.0199215);
}

TEST_CASE("cylinder permeability decouples the vertical direction") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::cylinder_ball(0.25), 3, 16);
  const PermeabilityTensor K = permeability(solve_all_cell_stokes(cell));
  const double knn = K.K(2, 2);
  CHECK(std::abs(K.K(0, 2)) <= 1e-6 * knn);
  CHECK(std::abs(K.K(1, 2)) <= 1e-6 * knn);
  CHECK(std::abs(K.K(2, 0)) <= 1e-6 * knn);
  CHECK(knn > K.K(0, 0));
  CHECK(K.eigenvalues.minCoeff() > 0.0);
}

TEST_CASE("two-scale velocity with zero data vanishes") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.25), 2, 16);
  const TwoScaleFlow flow(solve_all_cell_stokes(cell), [](const Point&) { return Point{0.0, 0.0, 0.0}; },
                          [](const Point&) { return 0.0; });
  for (double y : {0.1, 0.4, 0.9}) {
    CHECK(flow.velocity(0, {0.3, 0.2, 0.0}, {y, 0.7, 0.0}) == 0.0);
    CHECK(flow.velocity(1, {0.3, 0.2, 0.0}, {0.2, y, 0.0}) == 0.0);
    CHECK(flow.corrector({0.3, 0.2, 0.0}, {0.2, y, 0.0}) == 0.0);
  }
}

TEST_CASE("vertical unit force reproduces the vertical cell velocity") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.25), 2, 16);
  const auto sols = solve_all_cell_stokes(cell);
  const TwoScaleFlow flow(sols, [](const Point&) { return Point{0.0, 1.0, 0.0}; }, [](const Point&) { return 0.0; });
  const VectorField w = sols[1].w();
  const StructuredGrid& g = cell.grid;
  for (int c = 0; c < 2; ++c) {
    for (Index f = 0; f < g.num_faces(c); ++f) {
      const Point y = g.face_center(c, g.face_coords(c, f));
      REQUIRE(flow.velocity(c, {0.5, 0.0, 0.0}, y) == w.comp[c][f]);
    }
  }
}

TEST_CASE("cell average of the two-scale velocity is the Darcy velocity") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.25), 2, 32);
  const auto sols = solve_all_cell_stokes(cell);
  const PermeabilityTensor K = permeability(sols);
  const TwoScaleFlow flow(
      sols, [](const Point& x) { return Point{0.5 + x[0], 1.0 - x[1], 0.0}; }, [](const Point& x) { return 0.3 * x[1]; });
  for (const Point x : {Point{0.2, -0.5, 0.0}, Point{0.7, 0.4, 0.0}}) {
    Eigen::VectorXd drive(2);
    drive << 0.5 + x[0], 1.0 - x[1] - 0.3 * x[1];
    const Eigen::VectorXd expected = K.K * drive;
    const Eigen::VectorXd got = flow.darcy_velocity(x);
    CHECK((got - expected).norm() <= 1e-6 * expected.norm());
  }
}

}  // TEST_SUITE
