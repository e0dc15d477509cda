#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "thinlayer/cell_diffusion.hpp"
#include "thinlayer/macro_darcy.hpp"
#include "thinlayer/micro_reference.hpp"

namespace thinlayer {

struct MacroTransportProblem {
  DiffusionCase dcase = DiffusionCase::D2;
  Eigen::MatrixXd Dstar;       // n x n; only D*_nn is used in case D1
  Eigen::VectorXd ubar_n;      // vertical Darcy velocity per column
  TimeFieldFn source;          // gbar0(t, x) = integral of g0 over Y_f
  TimeFieldFn boundary;        // c0^b(t, x) at z = -1 and z = +1
  double porosity = 1.0;       // |Y_f|
  double T = 1.0;
  double dt = 0.02;
  double theta = 1.0;          // 1 implicit Euler, 0.5 Crank-Nicolson
  Advection advection = Advection::upwind;
  std::vector<double> snapshot_times;
  MacroGrid grid;
  double negativity_tol = 1e-12;
};

struct MacroTransportSolution {
  std::vector<double> times;
  std::vector<NodalField> snapshots;  // nodal c0 including the Dirichlet ends
  int steps = 0;
  double max_ledger_residual = 0.0;   // relative mass-balance defect per step
  double inflow_bottom = 0.0;         // time-integrated flux into Omega through z = -1
  double outflow_top = 0.0;           // time-integrated flux out of Omega through z = +1
  double source_integral = 0.0;       // time-integrated source
  double min_value = 0.0;
  double max_value = 0.0;
  double hull_lo = 0.0;               // min(0, boundary data)
  double hull_hi = 0.0;               // max(0, boundary data)
  double hull_violation = 0.0;        // largest excursion outside [hull_lo, hull_hi]
  bool nonphysical_negativity = false;  // upwinding on and min below -negativity_tol
};

/// Node-centred finite volumes on the interior nodes of each column:
/// porosity d_t c0 - div(D* grad c0 - c0 ubar^n e_n) = gbar0, c0(0) = 0,
/// Dirichlet at z = -1, +1. Case D1 keeps only the vertical terms and solves
/// column-wise tridiagonal systems; case D2 adds the horizontal block of D*
/// with a periodic wrap and uses a sparse LU factored once.
MacroTransportSolution solve_macro_transport(const MacroTransportProblem& problem);

/// Corrector samplers cbar1(x, y) = sum_i d_i c0(x) chibar_i(y) (D2 horizontal)
/// and c1(x, y) = d_n c0(x) chi_n(y) (vertical, 1-D profile in D2, full cell in D1).
struct CorrectorSampler {
  DiffusionCase dcase = DiffusionCase::D2;
  const NodalField* c0 = nullptr;
  const CellDiffusionSolutions* cells = nullptr;

  double horizontal(const Point& x, const Point& y) const;
  double vertical(const Point& x, const Point& y) const;
};

CorrectorSampler reconstruct_correctors(DiffusionCase dcase, const NodalField& c0, const CellDiffusionSolutions& cells);

}  // namespace thinlayer
