#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "thinlayer/cell_diffusion.hpp"

using namespace thinlayer;
using thinlayer::testing::error_code_of;

namespace {

EffectiveDiffusion effective(const UnitCellGeometry& cell, DiffusionCase dcase, double D) {
  return effective_diffusion(solve_cell_diffusion(cell, dcase, D));
}

}  // namespace

TEST_SUITE("cell_diffusion") {

TEST_CASE("full fluid cell has vanishing correctors and D* = D I") {
  for (int dim : {2, 3}) {
    const UnitCellGeometry cell = build_unit_cell(InclusionSpec::full_fluid(), dim, 8);
    const CellDiffusionSolutions d2 = solve_cell_diffusion(cell, DiffusionCase::D2, 1.7);
    for (const auto& chi : d2.horizontal) CHECK(chi.field.values.cwiseAbs().maxCoeff() == 0.0);
    const EffectiveDiffusion e2 = effective_diffusion(d2);
    CHECK(e2.Dstar == 1.7 * Eigen::MatrixXd::Identity(dim, dim));
    const CellDiffusionSolutions d1 = solve_cell_diffusion(cell, DiffusionCase::D1, 1.7);
    CHECK(d1.vertical_full->field.values.cwiseAbs().maxCoeff() == 0.0);
    CHECK(effective_diffusion(d1).Dstar(dim - 1, dim - 1) == 1.7);
  }
}

TEST_CASE("cylinder correctors do not depend on the vertical coordinate") {
  const int m = 12;
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::cylinder_box({0.2, 0.3, 0.0}), 3, m);
  const CellDiffusionSolutions d2 = solve_cell_diffusion(cell, DiffusionCase::D2, 1.0);
  const StructuredGrid& g = cell.grid;
  for (const auto& chi : d2.horizontal) {
    CHECK(chi.field.values.cwiseAbs().maxCoeff() > 0.0);
    for (Index i = 0; i < g.num_cells(); ++i) {
      Coord c = g.cell_coords(i);
      const double v = chi.field.values[i];
      c[2] = 0;
      REQUIRE(std::abs(v - chi.field.values[g.cell_index(c)]) <= 1e-9);
    }
  }
  const CellDiffusionSolutions d1 = solve_cell_diffusion(cell, DiffusionCase::D1, 1.0);
  CHECK(d1.vertical_full->field.values.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(effective_diffusion(d1).Dstar(2, 2) == doctest::Approx(cell.fluid_fraction).epsilon(1e-12));
}

TEST_CASE("constant area profile gives zero corrector") {
  const AreaProfile A = AreaProfile::from_values(Eigen::VectorXd::Constant(20, 0.6));
  const VerticalProfile v = solve_vertical_cell_1d(A, 2.0);
  CHECK(v.chi.cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(v.chi_fd.cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(v.effective() == doctest::Approx(1.2).epsilon(1e-14));
}

TEST_CASE("two-slab profile gives the harmonic mean 2/3") {
  Eigen::VectorXd values(16);
  values.head(8).setConstant(1.0);
  values.tail(8).setConstant(0.5);
  const VerticalProfile v = solve_vertical_cell_1d(AreaProfile::from_values(values), 1.0);
  CHECK(std::abs(v.flux - 2.0 / 3.0) <= 1e-14);
  CHECK(std::abs(v.effective() - 2.0 / 3.0) <= 1e-10);
  CHECK(std::abs(v.fd_flux - 2.0 / 3.0) <= 1e-10);
  CHECK(v.fd_discrepancy <= 1e-10);
}

TEST_CASE("disk profile corrector agrees with its closed form") {
  for (int m : {32, 64, 128}) {
    const AreaProfile A = area_profile(build_unit_cell(InclusionSpec::ball(0.25), 2, m));
    const VerticalProfile v = solve_vertical_cell_1d(A, 1.3);
    const double closed = 1.3 / A.values.cwiseInverse().mean();
    CHECK(std::abs(v.effective() - closed) <= 1e-10);
    CHECK(v.fd_discrepancy <= 1e-10);
    CHECK(std::abs(v.chi.mean()) <= 1e-14);
  }
}

TEST_CASE("nonpositive area profile is rejected") {
  Eigen::VectorXd values = Eigen::VectorXd::Constant(8, 0.5);
  values[3] = 0.0;
  CHECK(error_code_of([&] { solve_vertical_cell_1d(AreaProfile::from_values(values)); }) ==
        ErrorCode::NonpositiveProfile);
}

TEST_CASE("fast horizontal diffusion of a disk sees only the uncut slabs") {
  // Slab-wise problems: a slab crossing the disk carries no horizontal flux,
  // an uncut slab carries the full one, so D*_11 is the uncut fraction.
  const int m = 64;
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.25), 2, m);
  int uncut = 0;
  for (int j = 0; j < m; ++j) {
    bool solid = false;
    for (int i = 0; i < m; ++i) solid |= !cell.fluid[std::size_t(cell.grid.cell_index({i, j, 0}))];
    uncut += solid ? 0 : 1;
  }
  const EffectiveDiffusion e = effective(cell, DiffusionCase::D2, 1.0);
  CHECK(e.Dstar(0, 0) == doctest::Approx(double(uncut) / m).epsilon(1e-9));
  CHECK(e.Dstar(0, 1) == 0.0);
  CHECK(e.Dstar(1, 0) == 0.0);
  CHECK(e.Dstar(0, 0) <= cell.fluid_fraction);
  CHECK(e.Dstar(1, 1) <= cell.fluid_fraction);
  CHECK(e.Dstar(1, 1) == doctest::Approx(1.0 / area_profile(cell).values.cwiseInverse().mean()).epsilon(1e-10));
}

TEST_CASE("box inclusion in 3-D gives a symmetric positive horizontal block") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::box({0.3, 0.15, 0.2}), 3, 12);
  const EffectiveDiffusion e = effective(cell, DiffusionCase::D2, 1.0);
  const Eigen::Matrix2d h = e.Dstar.topLeftCorner(2, 2);
  CHECK(std::abs(h(0, 1) - h(1, 0)) <= 1e-10);
  CHECK(h.determinant() > 0.0);
  CHECK(h(0, 0) > 0.0);
  CHECK(h(0, 0) <= cell.fluid_fraction + 1e-12);
  CHECK(h(1, 1) <= cell.fluid_fraction + 1e-12);
  CHECK(e.Dstar(0, 2) == 0.0);
  CHECK(e.Dstar(2, 1) == 0.0);
  CHECK(e.formula_discrepancy <= 1e-5);
}

TEST_CASE("slow horizontal diffusion: energy and flux forms agree and obey the bound") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.25), 2, 64);
  const EffectiveDiffusion e = effective(cell, DiffusionCase::D1, 2.0);
  CHECK(e.formula_discrepancy <= 1e-5);
  CHECK(e.Dstar(1, 1) > 0.0);
  CHECK(e.Dstar(1, 1) <= 2.0 * cell.fluid_fraction);
  CHECK(std::abs(e.Dstar(1, 1) - e.Dstar_dual(1, 1)) <= 1e-5 * e.Dstar(1, 1));
}

TEST_CASE("disk effective diffusion at m = 128 against extrapolated fine-grid values") {
  // References from m = 64, 128, 256 by Aitken extrapolation:
  // vertical (1-D profile) 0.7417052, full-cell vertical 0.671328.
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.25), 2, 128);
  const EffectiveDiffusion d2 = effective(cell, DiffusionCase::D2, 1.0);
  const EffectiveDiffusion d1 = effective(cell, DiffusionCase::D1, 1.0);
  CHECK(d2.Dstar(1, 1) == doctest::Approx(0.741109260391).epsilon(1e-9));
  CHECK(d1.Dstar(1, 1) == doctest::Approx(0.666191986983).epsilon(1e-7));
  CHECK(std::abs(d2.Dstar(1, 1) - 0.7417052) <= 2e-3 * 0.7417052);
  CHECK(std::abs(d1.Dstar(1, 1) - 0.671328) <= 1e-2 * 0.671328);
}

TEST_CASE("effective diffusion scales linearly with D") {
  const UnitCellGeometry cell = build_unit_cell(InclusionSpec::ball(0.2), 2, 32);
  const EffectiveDiffusion a = effective(cell, DiffusionCase::D2, 1.0);
  const EffectiveDiffusion b = effective(cell, DiffusionCase::D2, 3.0);
  CHECK((b.Dstar - 3.0 * a.Dstar).cwiseAbs().maxCoeff() <= 1e-10);
}

}  // TEST_SUITE
