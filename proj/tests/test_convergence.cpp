#include <doctest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "thinlayer/convergence.hpp"

using namespace thinlayer;
using thinlayer::testing::error_code_of;

namespace {

SweepPlan coarse_plan() {
  SweepPlan p;
  p.cell_resolution = 8;
  p.eps = {Rational(1, 4), Rational(1, 16), Rational(1, 64)};
  p.T = 0.2;
  p.dt = 0.05;
  p.macro_columns = {32, 1};
  p.macro_vertical_cells = 64;
  p.stokes.tol = 1e-9;
  return p;
}

LayerGeometry disk_layer(Rational eps) {
  return build_layer(build_unit_cell(InclusionSpec::ball(0.25), 2, 8), eps, Rational(1, 2), Base{});
}

}  // namespace

TEST_SUITE("convergence") {

TEST_CASE("slope fit recovers exact power laws") {
  for (double rate : {2.0, 0.75, 2.25}) {
    std::vector<std::pair<double, double>> pts;
    for (double e : {0.25, 1.0 / 16.0, 1.0 / 64.0}) pts.emplace_back(e, 3.0 * std::pow(e, rate));
    const SlopeFit f = fit_slope(pts);
    CHECK(f.slope == doctest::Approx(rate).epsilon(1e-12));
    CHECK(f.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(f.r2 == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("slope fit is invariant under scaling of the values") {
  const std::vector<std::pair<double, double>> pts{{0.5, 0.9}, {0.25, 0.31}, {0.125, 0.12}, {0.0625, 0.035}};
  auto scaled = pts;
  for (auto& [e, v] : scaled) v *= 17.0;
  const SlopeFit a = fit_slope(pts), b = fit_slope(scaled);
  CHECK(b.slope == doctest::Approx(a.slope).epsilon(1e-12));
  CHECK(b.r2 == doctest::Approx(a.r2).epsilon(1e-12));
  CHECK(b.intercept - a.intercept == doctest::Approx(std::log(17.0)).epsilon(1e-12));
  CHECK(a.r2 < 1.0);
  CHECK(a.r2 > 0.9);
}

TEST_CASE("slope fit rejects short and nonpositive data") {
  CHECK(error_code_of([] { fit_slope({{0.5, 1.0}}); }) == ErrorCode::InsufficientPoints);
  CHECK(error_code_of([] { fit_slope({{0.5, 1.0}, {0.25, 0.5}}); }) == ErrorCode::InsufficientPoints);
  CHECK(error_code_of([] { fit_slope({{0.5, 1.0}, {0.5, 0.5}, {0.5, 0.2}}); }) == ErrorCode::InsufficientPoints);
  CHECK(error_code_of([] { fit_slope({{0.5, 1.0}, {0.25, 0.0}, {0.125, 0.2}}); }) == ErrorCode::NonpositiveValue);
  CHECK(error_code_of([] { fit_slope({{0.5, 1.0}, {-0.25, 0.5}, {0.125, 0.2}}); }) == ErrorCode::NonpositiveValue);
}

TEST_CASE("macro and cell coordinates of layer points") {
  const LayerGeometry layer = disk_layer(Rational(1, 16));
  const double ea = layer.thickness_half();
  const Point top = macro_point(layer, {0.3, ea, 0.0});
  CHECK(top[0] == doctest::Approx(0.3));
  CHECK(top[1] == doctest::Approx(1.0));
  const Point y = cell_point(layer, {0.3, -ea, 0.0});
  CHECK(y[0] == doctest::Approx(0.3 * 16.0));
  CHECK(y[1] == doctest::Approx(-4.0));
}

TEST_CASE("two-scale error of a sampled limit") {
  const LayerGeometry layer = disk_layer(Rational(1, 16));
  const TwoScaleLimit limit = [](const Point& X, const Point& y) {
    return 1.0 + X[0] * X[1] + 0.1 * std::cos(2.0 * std::numbers::pi * y[0]);
  };
  ScalarField f(layer.grid, layer.fluid);
  for (Index i = 0; i < layer.grid.num_cells(); ++i) {
    if (!f.active[std::size_t(i)]) continue;
    const Point x = layer.grid.cell_center(layer.grid.cell_coords(i));
    f.values[i] = 0.5 * limit(macro_point(layer, x), cell_point(layer, x));
  }
  CHECK(two_scale_error(f, 2.0, layer, limit) <= 1e-14);
  CHECK(two_scale_error(f, 1.0, layer, limit) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(two_scale_error(f, 0.0, layer, limit) == doctest::Approx(1.0).epsilon(1e-12));

  const TwoScaleLimit zero = [](const Point&, const Point&) { return 0.0; };
  ScalarField z(layer.grid, layer.fluid);
  CHECK(two_scale_error(z, 1.0, layer, zero) == 0.0);
  CHECK(std::isinf(two_scale_error(f, 1.0, layer, zero)));

  const TwoScaleLimit bad = [](const Point&, const Point&) { return std::nan(""); };
  CHECK(error_code_of([&] { two_scale_error(f, 1.0, layer, bad); }) == ErrorCode::SamplerRangeError);
  const LayerGeometry other = disk_layer(Rational(1, 4));
  CHECK(error_code_of([&] { two_scale_error(f, 1.0, other, limit); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("sweep plans are validated as a whole") {
  SweepPlan ok = coarse_plan();
  CHECK_NOTHROW(ok.validate());

  SweepPlan p = coarse_plan();
  p.eps = {Rational(1, 4), Rational(1, 16)};
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::ValidationError);
  p.eps = {Rational(1, 16), Rational(1, 4), Rational(1, 64)};
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::ValidationError);
  p.eps = {Rational(1, 3), Rational(1, 9), Rational(1, 27)};
  CHECK(error_code_of([&] { p.validate(); }) == ErrorCode::ValidationError);

  SweepPlan q = coarse_plan();
  q.cell_resolution = 4;
  q.D = -1.0;
  q.dt = 0.0;
  try {
    q.validate();
    FAIL("expected a validation error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("resolution") != std::string::npos);
    CHECK(msg.find("D must be positive") != std::string::npos);
    CHECK(msg.find("dt") != std::string::npos);
  }
}

TEST_CASE("equilibrium recipe gives a still fluid at constant pressure") {
  SweepPlan p = coarse_plan();
  p.flow.kind = FlowRecipeKind::equilibrium;
  p.flow.pressure = 0.6;
  p.run_transport = false;
  const SweepContext ctx = build_sweep_context(p);
  for (Rational eps : p.eps) {
    MemberFields fields;
    const MemberReport m = run_member(ctx, eps, &fields);
    CHECK(fields.stokes.velocity.cwiseAbs().maxCoeff() <= 1e-12);
    const double ea = std::sqrt(eps.to_double());
    CHECK((fields.stokes.pressure.array() - ea * 0.6).abs().maxCoeff() <= 1e-12);
    CHECK_FALSE(m.has_transport);
  }
}

TEST_CASE("zero data sweep is degenerate and reports zero fields") {
  SweepPlan p = coarse_plan();
  p.flow.kind = FlowRecipeKind::zero;
  p.transport.kind = TransportRecipeKind::zero;
  const ConvergenceReport rep = scaling_study(p);
  REQUIRE(rep.members.size() == 3);
  for (const auto& m : rep.members) {
    CHECK(m.velocity.l2 == 0.0);
    CHECK(m.pressure.l2 == 0.0);
    CHECK(m.concentration.l2 == 0.0);
    CHECK(m.concentration_sup == 0.0);
  }
  for (const auto& s : rep.slopes) CHECK(s.degenerate);
  CHECK_FALSE(rep.pass);
}

TEST_CASE("coarse generic sweep follows the expected scaling") {
  SweepPlan p = coarse_plan();
  p.threads = 2;
  const ConvergenceReport rep = scaling_study(p);
  REQUIRE(rep.members.size() == 3);
  CHECK(rep.porosity == doctest::Approx(build_unit_cell(InclusionSpec::ball(0.25), 2, 8).fluid_fraction));
  double sup_max = 0.0, sup_min = INFINITY;
  for (const auto& m : rep.members) {
    CHECK(m.divergence_residual <= 1e-8);
    CHECK(m.transport_ledger <= 1e-8);
    sup_max = std::max(sup_max, m.concentration_sup);
    sup_min = std::min(sup_min, m.concentration_sup);
  }
  // The concentration stays bounded uniformly in eps.
  CHECK(sup_min > 0.0);
  CHECK(sup_max <= 2.0 * sup_min);
  for (const auto& s : rep.slopes) {
    INFO(s.quantity, " slope ", s.fit.slope, " r2 ", s.fit.r2);
    CHECK_FALSE(s.degenerate);
    CHECK(s.fit.slope >= s.expected - 0.3);
    CHECK(s.fit.r2 >= 0.95);
  }
  for (const auto& c : rep.errors) {
    INFO(c.quantity);
    CHECK(c.strictly_decreasing);
  }

  // Sequential and threaded runs agree exactly.
  SweepPlan serial = p;
  serial.threads = 1;
  const ConvergenceReport again = scaling_study(serial);
  for (std::size_t i = 0; i < rep.members.size(); ++i) {
    CHECK(again.members[i].velocity.l2 == rep.members[i].velocity.l2);
    CHECK(again.members[i].concentration_error == rep.members[i].concentration_error);
  }
}

}  // TEST_SUITE
