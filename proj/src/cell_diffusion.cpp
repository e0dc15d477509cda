#include "thinlayer/cell_diffusion.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <future>

#include "thinlayer/error.hpp"

namespace thinlayer {

std::string to_string(DiffusionCase c) { return c == DiffusionCase::D1 ? "D1" : "D2"; }

DiffusionCase parse_diffusion_case(const std::string& text) {
  if (text == "D1" || text == "d1") return DiffusionCase::D1;
  if (text == "D2" || text == "d2") return DiffusionCase::D2;
  throw Error(ErrorCode::ParseError, "unknown diffusion case '" + text + "'");
}

namespace {

// Neumann/periodic Laplacian on the fluid cells of the unit cell using the
// listed axes, plus the load of the unit gradient along `forcing_axis`.
struct CellSystem {
  SparseMatrix L;
  Eigen::VectorXd load;
  std::vector<Index> dof;   // cell -> unknown
  std::vector<Index> cell;  // unknown -> cell
};

CellSystem assemble_cell_diffusion(const UnitCellGeometry& uc, double D, const std::vector<int>& axes,
                                   int forcing_axis) {
  const StructuredGrid& g = uc.grid;
  CellSystem s;
  s.dof.assign(std::size_t(g.num_cells()), -1);
  for (Index i = 0; i < g.num_cells(); ++i) {
    if (uc.fluid[std::size_t(i)]) {
      s.dof[std::size_t(i)] = Index(s.cell.size());
      s.cell.push_back(i);
    }
  }
  const Index n = Index(s.cell.size());
  s.load = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> t;
  const double vol = g.cell_volume();
  for (Index k = 0; k < n; ++k) {
    const Coord x = g.cell_coords(s.cell[std::size_t(k)]);
    for (int a : axes) {
      Coord y = x;
      y[a] = (y[a] + 1) % g.cells[a];
      const Index j = s.dof[std::size_t(g.cell_index(y))];
      if (j < 0) continue;
      const double h = g.spacing[a];
      const double c = D * vol / (h * h);
      t.emplace_back(k, k, c);
      t.emplace_back(j, j, c);
      t.emplace_back(k, j, -c);
      t.emplace_back(j, k, -c);
      if (a == forcing_axis) {
        s.load[k] += D * vol / h;
        s.load[j] -= D * vol / h;
      }
    }
  }
  s.L.resize(n, n);
  s.L.setFromTriplets(t.begin(), t.end());
  return s;
}

ScalarCorrector solve_corrector(const UnitCellGeometry& uc, double D, int axis, int skip_axis,
                                const SolverOptions& opts) {
  std::vector<int> axes;
  for (int a = 0; a < uc.dim; ++a)
    if (a != skip_axis) axes.push_back(a);
  const CellSystem s = assemble_cell_diffusion(uc, D, axes, axis);

  std::vector<int> label;
  const int groups = count_components(uc.grid, uc.fluid, &label, skip_axis);
  NullSpace null;
  null.num_groups = groups;
  null.group.resize(s.cell.size());
  for (std::size_t k = 0; k < s.cell.size(); ++k) null.group[k] = label[std::size_t(s.cell[k])];

  ScalarCorrector out(uc.grid);
  out.axis = axis;
  out.groups = groups;
  if (skip_axis >= 0) {
    const int slabs = uc.grid.cells[std::size_t(skip_axis)];
    std::vector<int> first(std::size_t(slabs), -1);
    for (std::size_t k = 0; k < s.cell.size(); ++k) {
      const int slab = uc.grid.cell_coords(s.cell[k])[std::size_t(skip_axis)];
      if (first[std::size_t(slab)] < 0) first[std::size_t(slab)] = null.group[k];
      if (first[std::size_t(slab)] != null.group[k]) out.disconnected_slab = true;
    }
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(Index(s.cell.size()));
  out.report = solve_spd_or_throw(s.L, s.load, x, opts, &null);
  out.field = ScalarField(uc.grid, uc.fluid);
  for (std::size_t k = 0; k < s.cell.size(); ++k) out.field.values[s.cell[k]] = x[Index(k)];
  return out;
}

}  // namespace

ScalarCorrector solve_horizontal_cell(const UnitCellGeometry& cell, double D, int axis, const SolverOptions& opts) {
  if (axis < 0 || axis >= cell.dim - 1) throw Error(ErrorCode::DimensionMismatch, "horizontal corrector axis out of range");
  if (!(D > 0.0)) throw Error(ErrorCode::OutOfRange, "diffusion coefficient must be positive");
  return solve_corrector(cell, D, axis, cell.dim - 1, opts);
}

ScalarCorrector solve_vertical_cell_full(const UnitCellGeometry& cell, double D, const SolverOptions& opts) {
  if (!(D > 0.0)) throw Error(ErrorCode::OutOfRange, "diffusion coefficient must be positive");
  return solve_corrector(cell, D, cell.dim - 1, -1, opts);
}

VerticalProfile solve_vertical_cell_1d(const AreaProfile& area, double D) {
  if (!(D > 0.0)) throw Error(ErrorCode::OutOfRange, "diffusion coefficient must be positive");
  const Eigen::VectorXd& A = area.values;
  const Index m = A.size();
  if (m < 2 || A.minCoeff() <= 0.0) throw Error(ErrorCode::NonpositiveProfile, "area profile must be positive");
  const double h = 1.0 / double(m);
  VerticalProfile out;
  out.flux = area.harmonic_mean();

  // Closed form: chi' = flux / A - 1 is piecewise constant per slab; integrate
  // from the first midpoint to each following one.
  out.chi.resize(m);
  out.chi[0] = 0.0;
  for (Index k = 1; k < m; ++k) {
    out.chi[k] = out.chi[k - 1] + 0.5 * h * (out.flux / A[k - 1] - 1.0) + 0.5 * h * (out.flux / A[k] - 1.0);
  }
  out.chi.array() -= out.chi.mean();

  // Finite differences with harmonic face averages on the periodic slab chain.
  auto face = [&](Index k) {
    const Index j = (k + 1) % m;
    return 2.0 * A[k] * A[j] / (A[k] + A[j]);
  };
  std::vector<Eigen::Triplet<double>> t;
  Eigen::VectorXd load = Eigen::VectorXd::Zero(m);
  for (Index k = 0; k < m; ++k) {
    const Index j = (k + 1) % m;
    const double c = face(k) / h;
    t.emplace_back(k, k, c);
    t.emplace_back(j, j, c);
    t.emplace_back(k, j, -c);
    t.emplace_back(j, k, -c);
    load[k] += face(k);
    load[j] -= face(k);
  }
  // The load sums to zero, so the singular system is consistent: fix the
  // first value, factor the reduced SPD block and restore the zero mean.
  Eigen::SparseMatrix<double> L(m, m);
  L.setFromTriplets(t.begin(), t.end());
  const Eigen::SparseMatrix<double> reduced = L.bottomRightCorner(m - 1, m - 1);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(reduced);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorCode::NonpositiveProfile, "vertical profile operator not definite");
  out.chi_fd = Eigen::VectorXd::Zero(m);
  out.chi_fd.tail(m - 1) = ldlt.solve(load.tail(m - 1));
  out.chi_fd.array() -= out.chi_fd.mean();
  out.fd_discrepancy = (out.chi - out.chi_fd).cwiseAbs().maxCoeff();

  double flux_sum = 0.0;
  double energy = 0.0;
  for (Index k = 0; k < m; ++k) {
    const double grad = 1.0 + (out.chi_fd[(k + 1) % m] - out.chi_fd[k]) / h;
    flux_sum += face(k) * grad;
    energy += face(k) * grad * grad;
  }
  out.fd_flux = flux_sum / double(m);
  out.energy = energy / double(m);
  out.D = D;
  return out;
}

CellDiffusionSolutions solve_cell_diffusion(const UnitCellGeometry& cell, DiffusionCase dcase, double D,
                                            const SolverOptions& opts, int threads) {
  CellDiffusionSolutions out;
  out.dcase = dcase;
  out.D = D;
  out.fluid_fraction = cell.fluid_fraction;
  if (dcase == DiffusionCase::D1) {
    out.vertical_full = solve_vertical_cell_full(cell, D, opts);
    return out;
  }
  const int nh = cell.dim - 1;
  if (threads > 1 && nh > 1) {
    std::vector<std::future<ScalarCorrector>> jobs;
    for (int i = 0; i < nh; ++i)
      jobs.push_back(std::async(std::launch::async, [&, i] { return solve_horizontal_cell(cell, D, i, opts); }));
    for (auto& j : jobs) out.horizontal.push_back(j.get());
  } else {
    for (int i = 0; i < nh; ++i) out.horizontal.push_back(solve_horizontal_cell(cell, D, i, opts));
  }
  out.vertical_1d = solve_vertical_cell_1d(area_profile(cell), D);
  return out;
}

namespace {

// Face-based quadrature of D (delta_{ia} + d_a chi_i)(delta_{ja} + d_a chi_j)
// over fluid-fluid faces of the listed axes (energy form), or of
// D (delta_{ij} + d_j chi_i) over j-faces (flux form). Null correctors are zero.
struct FaceQuadrature {
  const StructuredGrid& g;
  const Mask& fluid;
  double D;

  template <typename Visitor>
  void faces(int a, Visitor&& visit) const {
    for (Index i = 0; i < g.num_cells(); ++i) {
      if (!fluid[std::size_t(i)]) continue;
      Coord y = g.cell_coords(i);
      y[a] = (y[a] + 1) % g.cells[a];
      const Index j = g.cell_index(y);
      if (fluid[std::size_t(j)]) visit(i, j);
    }
  }

  double grad(const ScalarField* chi, int a, Index i, Index j) const {
    return chi ? (chi->values[j] - chi->values[i]) / g.spacing[a] : 0.0;
  }

  // The unit-gradient part is counted separately so that zero correctors
  // give D times an exact face fraction (D I on the full fluid cell).
  double energy(const ScalarField* ci, int i, const ScalarField* cj, int j, const std::vector<int>& axes) const {
    Index count = 0;
    double correction = 0.0;
    for (int a : axes) {
      faces(a, [&](Index p, Index q) {
        const double gi = grad(ci, a, p, q);
        const double gj = grad(cj, a, p, q);
        count += (i == a && j == a) ? 1 : 0;
        correction += (i == a ? gj : 0.0) + (j == a ? gi : 0.0) + gi * gj;
      });
    }
    return D * (double(count) / double(g.num_cells()) + g.cell_volume() * correction);
  }

  double flux(const ScalarField* ci, int i, int j) const {
    Index count = 0;
    double correction = 0.0;
    faces(j, [&](Index p, Index q) {
      count += i == j ? 1 : 0;
      correction += grad(ci, j, p, q);
    });
    return D * (double(count) / double(g.num_cells()) + g.cell_volume() * correction);
  }
};

}  // namespace

EffectiveDiffusion effective_diffusion(const CellDiffusionSolutions& sol, double tol) {
  EffectiveDiffusion out;
  out.dcase = sol.dcase;
  out.D = sol.D;
  if (sol.dcase == DiffusionCase::D1) {
    if (!sol.vertical_full) throw Error(ErrorCode::DimensionMismatch, "case D1 needs the full-cell vertical corrector");
    const ScalarCorrector& c = *sol.vertical_full;
    const StructuredGrid& g = c.field.grid;
    const int n = g.dim;
    const int v = n - 1;
    std::vector<int> all;
    for (int a = 0; a < n; ++a) all.push_back(a);
    FaceQuadrature q{g, c.field.active, sol.D};
    out.Dstar = Eigen::MatrixXd::Zero(n, n);
    out.Dstar_dual = Eigen::MatrixXd::Zero(n, n);
    out.Dstar(v, v) = q.flux(&c.field, v, v);
    out.Dstar_dual(v, v) = q.energy(&c.field, v, &c.field, v, all);
    out.residuals.push_back(c.report.relative());
  } else {
    if (!sol.vertical_1d) throw Error(ErrorCode::DimensionMismatch, "case D2 needs the vertical profile corrector");
    const int nh = int(sol.horizontal.size());
    const int n = nh + 1;
    out.Dstar = Eigen::MatrixXd::Zero(n, n);
    out.Dstar_dual = Eigen::MatrixXd::Zero(n, n);
    if (nh > 0) {
      const StructuredGrid& g = sol.horizontal.front().field.grid;
      std::vector<int> hor;
      for (int a = 0; a < nh; ++a) hor.push_back(a);
      FaceQuadrature q{g, sol.horizontal.front().field.active, sol.D};
      for (int i = 0; i < nh; ++i) {
        for (int j = 0; j < nh; ++j) {
          out.Dstar(i, j) = q.energy(&sol.horizontal[std::size_t(i)].field, i, &sol.horizontal[std::size_t(j)].field, j, hor);
          out.Dstar_dual(i, j) = q.flux(&sol.horizontal[std::size_t(i)].field, i, j);
        }
        out.residuals.push_back(sol.horizontal[std::size_t(i)].report.relative());
      }
    }
    out.Dstar(nh, nh) = sol.vertical_1d->D * sol.vertical_1d->energy;
    out.Dstar_dual(nh, nh) = sol.vertical_1d->D * sol.vertical_1d->fd_flux;
  }
  const double scale = out.Dstar.cwiseAbs().maxCoeff();
  out.formula_discrepancy = scale > 0.0 ? (out.Dstar - out.Dstar_dual).cwiseAbs().maxCoeff() / scale : 0.0;

  const int n = int(out.Dstar.rows());
  const double dnn = out.Dstar(n - 1, n - 1);
  if (!(dnn > 0.0) || dnn > sol.D * sol.fluid_fraction * (1.0 + tol)) {
    throw Error(ErrorCode::StructureViolation, "vertical effective diffusion " + std::to_string(dnn) +
                                                   " outside (0, D |Y_f|]");
  }
  if (sol.dcase == DiffusionCase::D2 && n > 1) {
    const Eigen::MatrixXd H = out.Dstar.topLeftCorner(n - 1, n - 1);
    if ((H - H.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
      throw Error(ErrorCode::StructureViolation, "horizontal effective diffusion block is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    if (es.eigenvalues().minCoeff() <= 0.0) {
      throw Error(ErrorCode::StructureViolation, "horizontal effective diffusion block is not positive definite");
    }
  }
  return out;
}

}  // namespace thinlayer
