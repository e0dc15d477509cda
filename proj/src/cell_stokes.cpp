#include "thinlayer/cell_stokes.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <future>

#include "thinlayer/error.hpp"

namespace thinlayer {

CellStokesSystem assemble_cell_stokes(const UnitCellGeometry& cell) {
  if (!cell.has_solid()) {
    throw Error(ErrorCode::EmptyInclusion, "cell without solid: the constant force has no periodic balance");
  }
  CellStokesSystem sys;
  sys.layout = std::make_shared<const MacLayout>(cell.grid, cell.fluid);
  sys.ops = assemble_stokes(*sys.layout);
  return sys;
}

namespace {

CellStokesSolution solve_axis(const CellStokesSystem& sys, const VelocitySolver& velocity, int axis, const SaddleOptions& opts) {
  const MacLayout& L = *sys.layout;
  Eigen::VectorXd force = Eigen::VectorXd::Zero(L.num_velocity());
  for (Index k = 0; k < L.num_velocity(); ++k)
    if (L.dof_component[std::size_t(k)] == axis) force[k] = L.velocity_mass[k];
  SaddleOptions o = opts;
  o.pressure_nullspace = true;
  CellStokesSolution sol;
  sol.axis = axis;
  sol.layout = sys.layout;
  sol.report = solve_saddle(velocity, sys.ops.A, sys.ops.B, force, Eigen::VectorXd::Zero(L.num_pressure()),
                            L.pressure_mass, sol.velocity, sol.pressure, o);
  return sol;
}

}  // namespace

CellStokesSolution solve_stokes_cell(const CellStokesSystem& sys, int axis, const SaddleOptions& opts) {
  if (axis < 0 || axis >= sys.layout->grid.dim) throw Error(ErrorCode::DimensionMismatch, "cell problem axis out of range");
  return solve_axis(sys, VelocitySolver(sys.ops.A, opts), axis, opts);
}

CellStokesSolution solve_stokes_cell(const UnitCellGeometry& cell, int axis, const SaddleOptions& opts) {
  return solve_stokes_cell(assemble_cell_stokes(cell), axis, opts);
}

std::vector<CellStokesSolution> solve_all_cell_stokes(const UnitCellGeometry& cell, const SaddleOptions& opts,
                                                      int threads) {
  const CellStokesSystem sys = assemble_cell_stokes(cell);
  // The n problems share the velocity block: factor it once.
  const VelocitySolver velocity(sys.ops.A, opts);
  std::vector<CellStokesSolution> out(std::size_t(cell.dim));
  if (threads <= 1) {
    for (int i = 0; i < cell.dim; ++i) out[std::size_t(i)] = solve_axis(sys, velocity, i, opts);
    return out;
  }
  std::vector<std::future<CellStokesSolution>> jobs;
  for (int i = 0; i < cell.dim; ++i) {
    jobs.push_back(std::async(std::launch::async, [&sys, &velocity, &opts, i] { return solve_axis(sys, velocity, i, opts); }));
    if (int(jobs.size()) == threads || i + 1 == cell.dim) {
      for (auto& j : jobs) {
        CellStokesSolution s = j.get();
        out[std::size_t(s.axis)] = std::move(s);
      }
      jobs.clear();
    }
  }
  return out;
}

PermeabilityTensor permeability(const std::vector<CellStokesSolution>& solutions, double mismatch_tol) {
  const int n = int(solutions.size());
  if (n == 0) throw Error(ErrorCode::DimensionMismatch, "no cell solutions");
  const auto& layout = solutions.front().layout;
  for (const auto& s : solutions) {
    if (s.layout != layout) throw Error(ErrorCode::DimensionMismatch, "cell solutions live on different cells");
  }
  const StokesOperators ops = assemble_stokes(*layout);
  PermeabilityTensor T;
  T.K.resize(n, n);
  T.K_flux.resize(n, n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd Aw = ops.A * solutions[std::size_t(i)].velocity;
    for (int j = 0; j < n; ++j) {
      const Eigen::VectorXd& wj = solutions[std::size_t(j)].velocity;
      T.K(i, j) = Aw.dot(wj);
      double load = 0.0;
      for (Index k = 0; k < layout->num_velocity(); ++k)
        if (layout->dof_component[std::size_t(k)] == i) load += layout->velocity_mass[k] * wj[k];
      T.K_flux(i, j) = load;
    }
  }
  const double scale = T.K.cwiseAbs().maxCoeff();
  T.formula_discrepancy = (T.K - T.K_flux).cwiseAbs().maxCoeff() / scale;
  T.symmetry_error = (T.K - T.K.transpose()).cwiseAbs().maxCoeff() / scale;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (T.K + T.K.transpose()));
  T.eigenvalues = es.eigenvalues();
  if (T.formula_discrepancy > mismatch_tol) {
    throw Error(ErrorCode::FormulaMismatch, "energy and load forms of K differ by " +
                                                std::to_string(T.formula_discrepancy) + " (relative)");
  }
  return T;
}

namespace {

int wrap_index(double t, int m) {
  const int k = int(std::floor(t));
  return ((k % m) + m) % m;
}

}  // namespace

double sample_face(const VectorField& v, int comp, const Point& y) {
  const StructuredGrid& g = v.grid;
  Coord c{0, 0, 0};
  for (int a = 0; a < g.dim; ++a) {
    const double t = (y[a] - g.origin[a]) / g.spacing[a];
    c[a] = a == comp ? wrap_index(std::floor(t + 0.5), g.cells[a]) : wrap_index(t, g.cells[a]);
  }
  return v.comp[comp][g.face_index(comp, c)];
}

double sample_cell(const ScalarField& s, const Point& y) {
  const StructuredGrid& g = s.grid;
  Coord c{0, 0, 0};
  for (int a = 0; a < g.dim; ++a) c[a] = wrap_index((y[a] - g.origin[a]) / g.spacing[a], g.cells[a]);
  return s.values[g.cell_index(c)];
}

TwoScaleFlow::TwoScaleFlow(const std::vector<CellStokesSolution>& solutions, MacroVector force,
                           MacroScalar dn_pressure)
    : dim_(int(solutions.size())), force_(std::move(force)), dn_pressure_(std::move(dn_pressure)) {
  for (const auto& s : solutions) {
    w_.push_back(s.w());
    q_.push_back(s.q());
  }
}

Eigen::VectorXd TwoScaleFlow::coefficients(const Point& x) const {
  const Point f = force_(x);
  Eigen::VectorXd c(dim_);
  for (int i = 0; i < dim_; ++i) c[i] = f[std::size_t(i)];
  c[dim_ - 1] -= dn_pressure_(x);
  return c;
}

double TwoScaleFlow::velocity(int comp, const Point& x, const Point& y) const {
  const Eigen::VectorXd c = coefficients(x);
  double u = 0.0;
  for (int i = 0; i < dim_; ++i)
    if (c[i] != 0.0) u += c[i] * sample_face(w_[std::size_t(i)], comp, y);
  return u;
}

double TwoScaleFlow::corrector(const Point& x, const Point& y) const {
  const Eigen::VectorXd c = coefficients(x);
  double p = 0.0;
  for (int i = 0; i < dim_; ++i)
    if (c[i] != 0.0) p += c[i] * sample_cell(q_[std::size_t(i)], y);
  return p;
}

Eigen::VectorXd TwoScaleFlow::darcy_velocity(const Point& x) const {
  const Eigen::VectorXd c = coefficients(x);
  Eigen::VectorXd ubar = Eigen::VectorXd::Zero(dim_);
  const double vol = w_.front().grid.cell_volume();
  for (int comp = 0; comp < dim_; ++comp)
    for (int i = 0; i < dim_; ++i) ubar[comp] += c[i] * vol * w_[std::size_t(i)].comp[comp].sum();
  return ubar;
}

}  // namespace thinlayer
