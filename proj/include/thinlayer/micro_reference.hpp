#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <vector>

#include "thinlayer/cell_diffusion.hpp"
#include "thinlayer/discrete.hpp"
#include "thinlayer/geometry.hpp"
#include "thinlayer/linsolve.hpp"

namespace thinlayer {

using FieldFn = std::function<double(const Point&)>;
using VectorFn = std::function<Point(const Point&)>;
using TimeFieldFn = std::function<double(double, const Point&)>;

struct MicroStokesSolution {
  std::shared_ptr<const MacLayout> layout;
  Eigen::VectorXd velocity;
  Eigen::VectorXd pressure;
  SaddleReport report;

  VectorField u() const { return layout->scatter(velocity); }
  ScalarField p() const { return layout->scatter_pressure(pressure); }
};

/// Stokes flow in the fluid part of the layer: no-slip on the solid and the
/// lateral walls, traction (-grad u + p I) nu = pb nu on top and bottom as the
/// natural condition of the weak form. The pressure is not normalised.
MicroStokesSolution solve_micro_stokes(const LayerGeometry& layer, const VectorFn& force, const FieldFn& boundary_pressure,
                                       const SaddleOptions& opts = {});

/// Net vertical flux through each horizontal grid plane (positions 0..N).
Eigen::VectorXd vertical_plane_flux(const MicroStokesSolution& sol);

enum class Advection { upwind, central };

struct MicroTransportProblem {
  const LayerGeometry* layer = nullptr;
  DiffusionCase dcase = DiffusionCase::D2;
  double D = 1.0;
  const VectorField* velocity = nullptr;  // u_eps on the layer MAC grid (not yet divided by eps^2)
  TimeFieldFn source;                     // g_eps(t, x)
  TimeFieldFn boundary;                   // c_eps^b(t, x) on top and bottom
  double T = 1.0;
  double dt = 0.02;
  std::vector<double> snapshot_times;  // rounded to the nearest step; the final time is always stored
  Advection advection = Advection::upwind;
  double divergence_tol = 1e-6;  // max |div u| h / max |u| accepted on input
  bool direct = true;             // sparse LU factored once; BiCGSTAB per step otherwise
  SolverOptions solver{1e-12, 20000};
};

struct MicroTransportResult {
  std::vector<double> times;
  std::vector<ScalarField> snapshots;
  int steps = 0;
  long iterations = 0;
  double max_ledger_residual = 0.0;  // relative mass-balance defect per step
  double sup_abs = 0.0;              // max |c| over all steps
  double min_value = 0.0;            // extremes over all steps, including c(0) = 0
  double max_value = 0.0;
  double max_cell_peclet = 0.0;
  bool cfl_warning = false;  // central differencing with cell Peclet above 2
};

/// Implicit Euler for eps^-alpha d_t c - div(D_eps grad c - u c / eps^2) = eps^-alpha g
/// with c(0) = 0, Dirichlet data on top and bottom, zero flux on the solid,
/// lateral zero flux (D1) or periodic wrap (D2).
MicroTransportResult solve_micro_transport(const MicroTransportProblem& problem);

}  // namespace thinlayer
