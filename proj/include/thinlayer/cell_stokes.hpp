#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "thinlayer/discrete.hpp"
#include "thinlayer/geometry.hpp"
#include "thinlayer/linsolve.hpp"

namespace thinlayer {

/// Periodic MAC system of the unit cell, shared by the n cell problems.
struct CellStokesSystem {
  std::shared_ptr<const MacLayout> layout;
  StokesOperators ops;
};
CellStokesSystem assemble_cell_stokes(const UnitCellGeometry& cell);

/// Velocity w and mean-zero pressure q driven by the unit force along `axis`.
struct CellStokesSolution {
  int axis = 0;
  std::shared_ptr<const MacLayout> layout;
  Eigen::VectorXd velocity;  // active face unknowns
  Eigen::VectorXd pressure;  // fluid cell unknowns
  SaddleReport report;

  VectorField w() const { return layout->scatter(velocity); }
  ScalarField q() const { return layout->scatter_pressure(pressure); }
};

/// Throws EmptyInclusion for a cell without solid (no periodic balance of
/// the constant force exists) and NoConvergence from the saddle solver.
CellStokesSolution solve_stokes_cell(const UnitCellGeometry& cell, int axis, const SaddleOptions& opts = {});
CellStokesSolution solve_stokes_cell(const CellStokesSystem& sys, int axis, const SaddleOptions& opts = {});

/// All `dim` cell problems, run on up to `threads` workers.
std::vector<CellStokesSolution> solve_all_cell_stokes(const UnitCellGeometry& cell, const SaddleOptions& opts = {},
                                                      int threads = 1);

struct PermeabilityTensor {
  Eigen::MatrixXd K;       // energy form, stored value
  Eigen::MatrixXd K_flux;  // load form
  double formula_discrepancy = 0.0;  // max |K - K_flux| / max |K|
  double symmetry_error = 0.0;       // max |K - K^T| / max |K|
  Eigen::VectorXd eigenvalues;
};

/// Throws FormulaMismatch when the energy and load forms disagree by more
/// than `mismatch_tol` (relative).
PermeabilityTensor permeability(const std::vector<CellStokesSolution>& solutions, double mismatch_tol = 1e-5);

using MacroScalar = std::function<double(const Point&)>;
using MacroVector = std::function<Point(const Point&)>;

/// Samples a face-centred cell field at a periodic cell point y (nearest
/// face of the component, exact at face centres).
double sample_face(const VectorField& v, int comp, const Point& y);
/// Cell value containing the periodic point y.
double sample_cell(const ScalarField& s, const Point& y);

/// Two-scale velocity limit u0(x, y) and pressure corrector p1(x, y) built
/// from the cell solutions, the limit force and the vertical derivative of
/// the Darcy pressure.
class TwoScaleFlow {
 public:
  TwoScaleFlow(const std::vector<CellStokesSolution>& solutions, MacroVector force, MacroScalar dn_pressure);

  int dim() const { return dim_; }
  /// Weight of cell solution i at the macro point x.
  Eigen::VectorXd coefficients(const Point& x) const;
  double velocity(int comp, const Point& x, const Point& y) const;
  double corrector(const Point& x, const Point& y) const;
  /// Midpoint quadrature of u0(x, .) over the fluid part of the cell.
  Eigen::VectorXd darcy_velocity(const Point& x) const;

  const VectorField& cell_velocity(int i) const { return w_[std::size_t(i)]; }
  const ScalarField& cell_pressure(int i) const { return q_[std::size_t(i)]; }

 private:
  int dim_;
  std::vector<VectorField> w_;
  std::vector<ScalarField> q_;
  MacroVector force_;
  MacroScalar dn_pressure_;
};

}  // namespace thinlayer
