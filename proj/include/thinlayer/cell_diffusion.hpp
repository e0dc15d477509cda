#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "thinlayer/discrete.hpp"
#include "thinlayer/geometry.hpp"
#include "thinlayer/linsolve.hpp"

namespace thinlayer {

/// D1: slow horizontal diffusion eps^alpha D I.
/// D2: fast horizontal diffusion D diag(eps^-alpha, ..., eps^-alpha, eps^alpha).
enum class DiffusionCase { D1, D2 };

std::string to_string(DiffusionCase c);
DiffusionCase parse_diffusion_case(const std::string& text);

/// Cell-centred corrector on the fluid cells of the unit cell.
struct ScalarCorrector {
  int axis = 0;
  ScalarField field;
  SolveReport report;
  int groups = 1;                  // normalisation groups (slab components for horizontal problems)
  bool disconnected_slab = false;  // some slab has more than one fluid component

  explicit ScalarCorrector(const StructuredGrid& g) : field(g) {}
};

/// Horizontal corrector: only in-slab differences, Neumann at the solid,
/// periodic in the horizontal axes; mean-zero per slab component.
ScalarCorrector solve_horizontal_cell(const UnitCellGeometry& cell, double D, int axis, const SolverOptions& opts = {});

/// Full-cell corrector for the vertical direction (all differences), mean-zero.
ScalarCorrector solve_vertical_cell_full(const UnitCellGeometry& cell, double D, const SolverOptions& opts = {});

/// One-dimensional vertical corrector from the area profile.
struct VerticalProfile {
  double D = 1.0;
  Eigen::VectorXd chi;     // closed form at slab midpoints, mean-zero
  Eigen::VectorXd chi_fd;  // finite-difference solve, mean-zero
  double flux = 0.0;       // A (1 + chi') = flux, the harmonic mean of A
  double fd_flux = 0.0;
  double fd_discrepancy = 0.0;  // max |chi - chi_fd|
  double energy = 0.0;          // sum over faces h A_face (1 + chi')^2
  /// D (int A^{-1})^{-1}, the vertical effective diffusion of case D2.
  double effective() const { return D * energy; }
};
VerticalProfile solve_vertical_cell_1d(const AreaProfile& area, double D = 1.0);

struct CellDiffusionSolutions {
  DiffusionCase dcase = DiffusionCase::D2;
  double D = 1.0;
  double fluid_fraction = 1.0;
  std::vector<ScalarCorrector> horizontal;  // D2 only
  std::optional<ScalarCorrector> vertical_full;  // D1 only
  std::optional<VerticalProfile> vertical_1d;    // D2 only
};

CellDiffusionSolutions solve_cell_diffusion(const UnitCellGeometry& cell, DiffusionCase dcase, double D,
                                            const SolverOptions& opts = {}, int threads = 1);

struct EffectiveDiffusion {
  DiffusionCase dcase = DiffusionCase::D2;
  double D = 1.0;
  Eigen::MatrixXd Dstar;       // stored tensor
  Eigen::MatrixXd Dstar_dual;  // the other assembly (flux form for D2, energy form for D1)
  double formula_discrepancy = 0.0;
  std::vector<double> residuals;  // per corrector solve
};

/// Assembles D*. Throws StructureViolation when the horizontal block is not
/// symmetric positive definite, or D*_nn lies outside (0, D |Y_f|].
EffectiveDiffusion effective_diffusion(const CellDiffusionSolutions& sol, double tol = 1e-8);

}  // namespace thinlayer
