#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "thinlayer/discrete.hpp"
#include "thinlayer/geometry.hpp"

namespace thinlayer {

/// Macroscopic grid on Omega = base x (-1, 1): horizontal cell-centred
/// columns and vertical nodes z_j = -1 + j h, j = 0..N.
struct MacroGrid {
  int dim = 2;
  Base base;
  std::array<int, 2> columns{16, 1};
  int vertical_cells = 64;

  int horizontal_axes() const { return dim - 1; }
  int num_columns() const;
  int num_nodes() const { return vertical_cells + 1; }
  Index size() const { return Index(num_columns()) * num_nodes(); }
  double hz() const { return 2.0 / vertical_cells; }
  double hx(int axis) const { return base.length(axis) / columns[std::size_t(axis)]; }
  double column_area() const;
  std::array<int, 2> column_coords(int col) const;
  int column_index(const std::array<int, 2>& c) const;
  Index index(int col, int node) const { return Index(col) * num_nodes() + node; }
  /// Macro point: horizontal column centre, vertical node; the vertical
  /// coordinate sits in slot dim-1.
  Point point(int col, int node) const;
  double z(int node) const { return -1.0 + node * hz(); }
};

/// Node values on a MacroGrid with multilinear interpolation (horizontal
/// clamped, or periodic when requested).
struct NodalField {
  MacroGrid grid;
  Eigen::VectorXd values;
  bool periodic = false;

  NodalField() = default;
  explicit NodalField(const MacroGrid& g, bool periodic_base = false)
      : grid(g), values(Eigen::VectorXd::Zero(g.size())), periodic(periodic_base) {}

  double at(int col, int node) const { return values[grid.index(col, node)]; }
  double& at(int col, int node) { return values[grid.index(col, node)]; }
  double sample(const Point& x) const;
  /// Central difference of the interpolant along `axis` with half-cell step.
  double derivative(const Point& x, int axis) const;
};

struct DarcyProblem {
  Eigen::MatrixXd K;
  std::function<Point(const Point&)> force;              // f0(x), x = (xbar, z)
  std::function<double(const Point&)> boundary_pressure;  // p0^b, sampled at z = -1 and z = +1
  MacroGrid grid;
};

struct DarcySolution {
  MacroGrid grid;
  NodalField pressure;                 // p0
  NodalField dn_pressure;              // d_n p0 at nodes
  std::array<NodalField, 3> velocity;  // ubar at nodes
  Eigen::MatrixXd interval_flux;       // ubar^n per column (rows) and vertical interval (cols)
  Eigen::VectorXd column_flux;         // mean ubar^n per column
};

/// Column-wise two-point problems K_nn d_n^2 p0 = d_n (K f0)_n with the
/// boundary pressure at both ends; throws SingularK if K_nn <= 0.
DarcySolution solve_darcy(const DarcyProblem& problem);

struct DarcyDiagnostics {
  double max_flux_variation = 0.0;  // max over columns of (max - min) ubar^n
  double boundary_mismatch = 0.0;   // max |p0 - p0^b| at the ends
  bool violation = false;
  double threshold = 1e-10;
};

/// Recomputes the vertical flux from the stored pressure and checks that it
/// is constant in each column and that p0 meets the boundary data.
DarcyDiagnostics verify_darcy(const DarcyProblem& problem, const DarcySolution& sol, double threshold = 1e-10);

}  // namespace thinlayer
