#include "thinlayer/micro_reference.hpp"

#include <algorithm>
#include <cmath>
#include <Eigen/SparseLU>
#include <set>

#include "thinlayer/error.hpp"

namespace thinlayer {

MicroStokesSolution solve_micro_stokes(const LayerGeometry& layer, const VectorFn& force, const FieldFn& boundary_pressure,
                                       const SaddleOptions& opts) {
  const StructuredGrid& g = layer.grid;
  const int v = layer.vertical_axis();
  if (g.boundary[v] != AxisBoundary::open) throw Error(ErrorCode::GeometryError, "layer top and bottom must be open");
  MicroStokesSolution sol;
  sol.layout = std::make_shared<const MacLayout>(g, layer.fluid);
  const MacLayout& L = *sol.layout;
  if (L.num_pressure() == 0) throw Error(ErrorCode::GeometryError, "layer has no fluid cells");
  const StokesOperators ops = assemble_stokes(L);

  Eigen::VectorXd rhs(L.num_velocity());
  const double area = g.cell_volume() / g.spacing[v];
  for (Index k = 0; k < L.num_velocity(); ++k) {
    const int c = L.dof_component[std::size_t(k)];
    const Coord fc = g.face_coords(c, L.dof_face[std::size_t(k)]);
    const Point x = g.face_center(c, fc);
    rhs[k] = L.velocity_mass[k] * force(x)[std::size_t(c)];
    if (c == v && fc[v] == g.cells[v]) rhs[k] -= area * boundary_pressure(x);
    if (c == v && fc[v] == 0) rhs[k] += area * boundary_pressure(x);
  }
  SaddleOptions o = opts;
  o.pressure_nullspace = false;
  // Warm start from the boundary pressure: exact for constant data without force.
  sol.pressure.resize(L.num_pressure());
  for (Index k = 0; k < L.num_pressure(); ++k)
    sol.pressure[k] = boundary_pressure(g.cell_center(g.cell_coords(L.pressure_cell[std::size_t(k)])));
  sol.report = solve_saddle(ops.A, ops.B, rhs, Eigen::VectorXd::Zero(L.num_pressure()), L.pressure_mass, sol.velocity,
                            sol.pressure, o);
  return sol;
}

Eigen::VectorXd vertical_plane_flux(const MicroStokesSolution& sol) {
  const MacLayout& L = *sol.layout;
  const StructuredGrid& g = L.grid;
  const int v = g.dim - 1;
  const double area = g.cell_volume() / g.spacing[v];
  Eigen::VectorXd flux = Eigen::VectorXd::Zero(g.face_positions(v));
  for (Index k = 0; k < L.num_velocity(); ++k) {
    if (L.dof_component[std::size_t(k)] != v) continue;
    const Coord fc = g.face_coords(v, L.dof_face[std::size_t(k)]);
    flux[fc[v]] += area * sol.velocity[k];
  }
  return flux;
}

namespace {

struct BoundaryFace {
  Index dof;
  Point x;
  double conductance;  // D area / (h/2)
  double outflow;      // area * outward velocity
};

}  // namespace

MicroTransportResult solve_micro_transport(const MicroTransportProblem& P) {
  if (!P.layer || !P.velocity) throw Error(ErrorCode::ValidationError, "transport problem needs a layer and a velocity");
  if (!(P.dt > 0.0) || !(P.T > 0.0)) throw Error(ErrorCode::ValidationError, "time step and horizon must be positive");
  if (!(P.D > 0.0)) throw Error(ErrorCode::ValidationError, "diffusion coefficient must be positive");
  const LayerGeometry& layer = *P.layer;
  const StructuredGrid& g = layer.grid;
  const VectorField& u = *P.velocity;
  if (!u.grid.same_shape(g)) throw Error(ErrorCode::DimensionMismatch, "velocity field is not on the layer grid");
  const int dim = g.dim;
  const int v = dim - 1;
  const double eps = layer.eps();
  const double ea = layer.thickness_half();  // eps^alpha
  const double inv_eps2 = 1.0 / (eps * eps);

  // Input check: the advecting field must be discretely divergence-free.
  {
    const ScalarField div = divergence(u);
    double umax = 0.0;
    for (int c = 0; c < dim; ++c)
      if (u.comp[c].size()) umax = std::max(umax, u.comp[c].cwiseAbs().maxCoeff());
    double dmax = 0.0;
    for (Index i = 0; i < g.num_cells(); ++i)
      if (layer.fluid[std::size_t(i)]) dmax = std::max(dmax, std::abs(div.values[i]));
    if (umax > 0.0 && dmax * g.spacing[0] / umax > P.divergence_tol) {
      throw Error(ErrorCode::ValidationError, "advecting velocity is not divergence-free (relative defect " +
                                                  std::to_string(dmax * g.spacing[0] / umax) + ")");
    }
  }

  std::array<double, 3> diff{};
  for (int a = 0; a < dim; ++a) {
    if (P.dcase == DiffusionCase::D1)
      diff[a] = ea * P.D;
    else
      diff[a] = (a == v ? ea : 1.0 / ea) * P.D;
  }
  const bool periodic_lateral = P.dcase == DiffusionCase::D2;

  std::vector<Index> dof(std::size_t(g.num_cells()), -1);
  std::vector<Index> cells;
  for (Index i = 0; i < g.num_cells(); ++i) {
    if (layer.fluid[std::size_t(i)]) {
      dof[std::size_t(i)] = Index(cells.size());
      cells.push_back(i);
    }
  }
  const Index n = Index(cells.size());
  const double vol = g.cell_volume();
  const double mass = vol / (ea * P.dt);

  MicroTransportResult res;
  std::vector<Eigen::Triplet<double>> t;
  std::vector<BoundaryFace> bfaces;
  for (Index k = 0; k < n; ++k) {
    const Coord x = g.cell_coords(cells[std::size_t(k)]);
    t.emplace_back(k, k, mass);
    for (int a = 0; a < dim; ++a) {
      const double h = g.spacing[a];
      const double area = vol / h;
      Coord up = x;
      up[a] += 1;
      const double w_up = u.comp[a][g.face_index(a, up)] * inv_eps2;
      if (a == v) {
        const double w_lo = u.comp[a][g.face_index(a, x)] * inv_eps2;
        if (x[a] == 0) {
          Coord f = x;
          bfaces.push_back({k, g.face_center(a, f), diff[a] * area / (0.5 * h), -area * w_lo});
        }
        if (up[a] == g.cells[a]) {
          bfaces.push_back({k, g.face_center(a, up), diff[a] * area / (0.5 * h), area * w_up});
          continue;
        }
      }
      double w = w_up;
      if (up[a] == g.cells[a]) {
        if (!periodic_lateral) continue;
        up[a] = 0;
        w = u.comp[a][g.face_index(a, up)] * inv_eps2;
      }
      const Index j = dof[std::size_t(g.cell_index(up))];
      if (j < 0) continue;
      const double kd = diff[a] * area / h;
      t.emplace_back(k, k, kd);
      t.emplace_back(j, j, kd);
      t.emplace_back(k, j, -kd);
      t.emplace_back(j, k, -kd);
      const double fa = area * w;
      res.max_cell_peclet = std::max(res.max_cell_peclet, std::abs(w) * h / diff[a]);
      if (P.advection == Advection::upwind) {
        if (fa > 0.0) {
          t.emplace_back(k, k, fa);
          t.emplace_back(j, k, -fa);
        } else {
          t.emplace_back(k, j, fa);
          t.emplace_back(j, j, -fa);
        }
      } else {
        t.emplace_back(k, k, 0.5 * fa);
        t.emplace_back(k, j, 0.5 * fa);
        t.emplace_back(j, k, -0.5 * fa);
        t.emplace_back(j, j, -0.5 * fa);
      }
    }
  }
  for (const BoundaryFace& b : bfaces) {
    t.emplace_back(b.dof, b.dof, b.conductance);
    if (P.advection == Advection::upwind && b.outflow > 0.0) t.emplace_back(b.dof, b.dof, b.outflow);
  }
  res.cfl_warning = P.advection == Advection::central && res.max_cell_peclet > 2.0;
  SparseMatrix M(n, n);
  M.setFromTriplets(t.begin(), t.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  if (P.direct) {
    const Eigen::SparseMatrix<double> Mc(M);
    lu.compute(Mc);
    if (lu.info() != Eigen::Success) throw Error(ErrorCode::NoConvergence, "transport matrix factorisation failed");
  }

  const int steps = std::max(1, int(std::llround(P.T / P.dt)));
  std::set<int> snap_steps{steps};
  for (double ts : P.snapshot_times) snap_steps.insert(std::clamp(int(std::llround(ts / P.dt)), 0, steps));
  if (snap_steps.count(0)) {
    res.times.push_back(0.0);
    res.snapshots.emplace_back(g, layer.fluid);
  }

  std::vector<Point> centers(cells.size());
  for (std::size_t k = 0; k < cells.size(); ++k) centers[k] = g.cell_center(g.cell_coords(cells[k]));

  Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd rhs(n);
  Eigen::VectorXd src(n);
  std::vector<double> cb(bfaces.size());
  for (int s = 1; s <= steps; ++s) {
    const double time = s * P.dt;
    for (Index k = 0; k < n; ++k) src[k] = P.source ? vol / ea * P.source(time, centers[std::size_t(k)]) : 0.0;
    rhs = mass * c + src;
    for (std::size_t b = 0; b < bfaces.size(); ++b) {
      cb[b] = P.boundary ? P.boundary(time, bfaces[b].x) : 0.0;
      const BoundaryFace& f = bfaces[b];
      rhs[f.dof] += f.conductance * cb[b];
      if (P.advection == Advection::central || f.outflow <= 0.0) rhs[f.dof] -= f.outflow * cb[b];
    }
    Eigen::VectorXd next = c;
    if (P.direct) {
      next = lu.solve(rhs);
    } else {
      const SolveReport rep = solve_general(M, rhs, next, P.solver);
      if (!rep.converged) {
        throw Error(ErrorCode::NoConvergence, "transport step " + std::to_string(s) + " did not converge");
      }
      res.iterations += rep.iterations;
    }

    // Mass ledger: storage + boundary outflow - source = 0.
    const double storage = mass * (next.sum() - c.sum());
    double outflow = 0.0;
    double scale = std::abs(storage) + std::abs(src.sum());
    for (std::size_t b = 0; b < bfaces.size(); ++b) {
      const BoundaryFace& f = bfaces[b];
      const double ci = next[f.dof];
      double adv = 0.0;
      if (P.advection == Advection::upwind)
        adv = f.outflow * (f.outflow > 0.0 ? ci : cb[b]);
      else
        adv = f.outflow * cb[b];
      const double flux = f.conductance * (ci - cb[b]) + adv;
      outflow += flux;
      scale += std::abs(flux);
    }
    if (scale > 0.0) res.max_ledger_residual = std::max(res.max_ledger_residual, std::abs(storage + outflow - src.sum()) / scale);
    c = std::move(next);
    res.sup_abs = std::max(res.sup_abs, c.cwiseAbs().maxCoeff());
    res.min_value = std::min(res.min_value, c.minCoeff());
    res.max_value = std::max(res.max_value, c.maxCoeff());
    if (snap_steps.count(s)) {
      ScalarField f(g, layer.fluid);
      for (Index k = 0; k < n; ++k) f.values[cells[std::size_t(k)]] = c[k];
      res.times.push_back(time);
      res.snapshots.push_back(std::move(f));
    }
  }
  res.steps = steps;
  return res;
}

}  // namespace thinlayer
