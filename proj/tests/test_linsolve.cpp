#include <doctest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "thinlayer/discrete.hpp"
#include "thinlayer/linsolve.hpp"

using namespace thinlayer;
using thinlayer::testing::error_code_of;

namespace {

SparseMatrix periodic_laplacian_1d(int m) {
  const double h = 1.0 / m;
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < m; ++i) {
    t.emplace_back(i, i, 2.0 / (h * h));
    t.emplace_back(i, (i + 1) % m, -1.0 / (h * h));
    t.emplace_back(i, (i + m - 1) % m, -1.0 / (h * h));
  }
  SparseMatrix A(m, m);
  A.setFromTriplets(t.begin(), t.end());
  return A;
}

constexpr double pi = std::numbers::pi;

struct ManufacturedStokes {
  double velocity_error = 0.0;
  double divergence = 0.0;
  double energy_gap = 0.0;
};

// Periodic Taylor-Green flow: u = (sin 2pi x cos 2pi y, -cos 2pi x sin 2pi y),
// p = cos 2pi x cos 2pi y, forced by f = u - lap u + grad p. The mass shift
// removes the constant velocities from the kernel of A on a cell without solid.
ManufacturedStokes manufactured_stokes(int m) {
  const StructuredGrid g = StructuredGrid::uniform(2, {m, m, 1}, {1.0, 1.0, 1.0},
                                                   {AxisBoundary::periodic, AxisBoundary::periodic, AxisBoundary::periodic});
  const MacLayout L(g, Mask(std::size_t(g.num_cells()), 1));
  StokesOperators ops = assemble_stokes(L);
  SparseMatrix mass(L.num_velocity(), L.num_velocity());
  mass.setIdentity();
  mass = mass * L.velocity_mass.asDiagonal();
  ops.A += mass;
  const double k = 2.0 * pi;
  auto exact = [&](int c, const Point& x) {
    return c == 0 ? std::sin(k * x[0]) * std::cos(k * x[1]) : -std::cos(k * x[0]) * std::sin(k * x[1]);
  };
  auto force = [&](int c, const Point& x) {
    const double grad_p = c == 0 ? -k * std::sin(k * x[0]) * std::cos(k * x[1]) : -k * std::cos(k * x[0]) * std::sin(k * x[1]);
    return (1.0 + 2.0 * k * k) * exact(c, x) + grad_p;
  };
  Eigen::VectorXd f(L.num_velocity()), ue(L.num_velocity());
  for (Index i = 0; i < L.num_velocity(); ++i) {
    const int c = L.dof_component[std::size_t(i)];
    const Point x = g.face_center(c, g.face_coords(c, L.dof_face[std::size_t(i)]));
    f[i] = L.velocity_mass[i] * force(c, x);
    ue[i] = exact(c, x);
  }
  Eigen::VectorXd u, p;
  SaddleOptions opts;
  opts.tol = 1e-11;
  opts.pressure_nullspace = true;
  const SaddleReport rep = solve_saddle(ops.A, ops.B, f, Eigen::VectorXd::Zero(L.num_pressure()), L.pressure_mass, u, p, opts);
  ManufacturedStokes out;
  out.velocity_error = (u - ue).cwiseAbs().maxCoeff();
  out.divergence = rep.divergence_residual;
  const double au = u.dot(ops.A * u);
  out.energy_gap = std::abs(au - f.dot(u) - p.dot(ops.B * u)) / std::abs(au);
  return out;
}

}  // namespace

TEST_SUITE("linsolve") {

TEST_CASE("identity system returns the right-hand side") {
  SparseMatrix I(5, 5);
  I.setIdentity();
  Eigen::VectorXd b(5);
  b << 1, -2, 3, 0.5, 7;
  Eigen::VectorXd x;
  const SolveReport rep = solve_spd(I, b, x);
  CHECK(rep.converged);
  CHECK((x - b).norm() <= 1e-14);
}

TEST_CASE("periodic Laplacian inverts a sine mode by its eigenvalue") {
  const int m = 64;
  const double h = 1.0 / m;
  const SparseMatrix A = periodic_laplacian_1d(m);
  const NullSpace null = NullSpace::constants(m);
  for (int mode : {1, 3, 10}) {
    Eigen::VectorXd b(m);
    for (int i = 0; i < m; ++i) b[i] = std::sin(2.0 * pi * mode * (i + 0.5) * h);
    const double lambda = 2.0 * (1.0 - std::cos(2.0 * pi * mode * h)) / (h * h);
    Eigen::VectorXd x;
    const SolveReport rep = solve_spd(A, b, x, {1e-13, 1000}, &null);
    CHECK(rep.converged);
    CHECK((x - b / lambda).cwiseAbs().maxCoeff() <= 1e-11 * (b / lambda).cwiseAbs().maxCoeff());
    CHECK(rep.residual <= rep.initial_residual);
  }
}

TEST_CASE("constant load on a singular system projects to zero") {
  const SparseMatrix A = periodic_laplacian_1d(16);
  const NullSpace null = NullSpace::constants(16);
  Eigen::VectorXd x;
  const SolveReport rep = solve_spd(A, Eigen::VectorXd::Constant(16, 4.0), x, {}, &null);
  CHECK(rep.converged);
  CHECK(x.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mean of the singular solution is zero") {
  const int m = 32;
  const SparseMatrix A = periodic_laplacian_1d(m);
  const NullSpace null = NullSpace::constants(m);
  Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(m, -1.0, 3.0);
  Eigen::VectorXd x;
  solve_spd_or_throw(A, b, x, {1e-12, 1000}, &null);
  CHECK(std::abs(x.mean()) <= 1e-14);
  Eigen::VectorXd bp = b.array() - b.mean();
  CHECK((A * x - bp).norm() <= 1e-10 * bp.norm());
}

TEST_CASE("iteration cap reports failure and keeps the best iterate") {
  const SparseMatrix A = periodic_laplacian_1d(64);
  const NullSpace null = NullSpace::constants(64);
  Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(64, 0.0, 1.0);
  Eigen::VectorXd x;
  const SolveReport rep = solve_spd(A, b, x, {1e-12, 2}, &null);
  CHECK_FALSE(rep.converged);
  CHECK(rep.iterations == 2);
  CHECK(rep.residual <= rep.initial_residual);
  CHECK(error_code_of([&] {
          Eigen::VectorXd y;
          solve_spd_or_throw(A, b, y, {1e-12, 2}, &null);
        }) == ErrorCode::NoConvergence);
}

TEST_CASE("size mismatch is rejected") {
  SparseMatrix I(4, 4);
  I.setIdentity();
  CHECK(error_code_of([&] {
          Eigen::VectorXd x;
          solve_spd(I, Eigen::VectorXd::Ones(3), x);
        }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("sparse validation detects asymmetry") {
  SparseMatrix A(3, 3);
  std::vector<Eigen::Triplet<double>> t{{0, 0, 2.0}, {0, 1, 1.0}, {1, 1, 2.0}, {2, 2, 1.0}};
  A.setFromTriplets(t.begin(), t.end());
  CHECK_NOTHROW(validate_sparse(A, false));
  CHECK(error_code_of([&] { validate_sparse(A, true); }).has_value());
}

TEST_CASE("BiCGSTAB solves a nonsymmetric advection system") {
  const int m = 50;
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < m; ++i) {
    t.emplace_back(i, i, 3.0);
    if (i > 0) t.emplace_back(i, i - 1, -2.0);
    if (i + 1 < m) t.emplace_back(i, i + 1, -0.5);
  }
  SparseMatrix A(m, m);
  A.setFromTriplets(t.begin(), t.end());
  const Eigen::VectorXd xe = Eigen::VectorXd::LinSpaced(m, 1.0, 2.0);
  Eigen::VectorXd x;
  const SolveReport rep = solve_general(A, A * xe, x, {1e-13, 500});
  CHECK(rep.converged);
  CHECK((x - xe).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("saddle system with zero data returns zero") {
  const StructuredGrid g = StructuredGrid::uniform(2, {8, 8, 1}, {1.0, 1.0, 1.0},
                                                   {AxisBoundary::periodic, AxisBoundary::periodic, AxisBoundary::periodic});
  Mask fluid(std::size_t(g.num_cells()), 1);
  fluid[std::size_t(g.cell_index({3, 3, 0}))] = 0;
  const MacLayout L(g, fluid);
  const StokesOperators ops = assemble_stokes(L);
  Eigen::VectorXd u, p;
  SaddleOptions opts;
  opts.pressure_nullspace = true;
  const SaddleReport rep = solve_saddle(ops.A, ops.B, Eigen::VectorXd::Zero(L.num_velocity()),
                                        Eigen::VectorXd::Zero(L.num_pressure()), L.pressure_mass, u, p, opts);
  CHECK(rep.converged);
  CHECK(u.cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("manufactured periodic Stokes flow converges at second order") {
  const ManufacturedStokes coarse = manufactured_stokes(16);
  const ManufacturedStokes fine = manufactured_stokes(32);
  const double order = std::log2(coarse.velocity_error / fine.velocity_error);
  CHECK(order >= 1.8);
  CHECK(fine.velocity_error <= 2e-2);
  CHECK(fine.divergence <= 1e-10);
  CHECK(fine.energy_gap <= 1e-8);
}

TEST_CASE("Jacobi-CG inner solver agrees with the factorisation") {
  const StructuredGrid g = StructuredGrid::uniform(2, {12, 12, 1}, {1.0, 1.0, 1.0},
                                                   {AxisBoundary::periodic, AxisBoundary::periodic, AxisBoundary::periodic});
  Mask fluid(std::size_t(g.num_cells()), 1);
  for (int i = 4; i < 8; ++i)
    for (int j = 4; j < 8; ++j) fluid[std::size_t(g.cell_index({i, j, 0}))] = 0;
  const MacLayout L(g, fluid);
  const StokesOperators ops = assemble_stokes(L);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(L.num_velocity());
  for (Index i = 0; i < f.size(); ++i)
    if (L.dof_component[std::size_t(i)] == 0) f[i] = L.velocity_mass[i];
  SaddleOptions direct;
  direct.pressure_nullspace = true;
  SaddleOptions cg = direct;
  cg.inner = InnerSolver::cg;
  Eigen::VectorXd u1, p1, u2, p2;
  const Eigen::VectorXd g0 = Eigen::VectorXd::Zero(L.num_pressure());
  solve_saddle(ops.A, ops.B, f, g0, L.pressure_mass, u1, p1, direct);
  solve_saddle(ops.A, ops.B, f, g0, L.pressure_mass, u2, p2, cg);
  CHECK((u1 - u2).cwiseAbs().maxCoeff() <= 1e-8 * u1.cwiseAbs().maxCoeff());
  CHECK((ops.B * u1).norm() <= 1e-9 * (ops.B.transpose() * p1).norm());
}

}  // TEST_SUITE
