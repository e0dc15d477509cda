#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <array>
#include <cstdint>
#include <vector>

namespace thinlayer {

using Index = Eigen::Index;
using Coord = std::array<int, 3>;
using Point = std::array<double, 3>;
using Mask = std::vector<std::uint8_t>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Boundary treatment along one axis of a structured grid.
///  - periodic: the last cell couples to the first one;
///  - wall: no-slip for velocities, zero flux for scalars;
///  - open: natural (traction) condition for velocities, Dirichlet for scalars.
enum class AxisBoundary { periodic, wall, open };

/// Uniform tensor-product grid in 2 or 3 dimensions. Cells are ordered with
/// axis 0 fastest: index = i0 + N0 * (i1 + N1 * i2).
struct StructuredGrid {
  int dim = 2;
  Coord cells{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::array<AxisBoundary, 3> boundary{AxisBoundary::periodic, AxisBoundary::periodic, AxisBoundary::periodic};

  static StructuredGrid uniform(int dim, const Coord& cells, const std::array<double, 3>& extent,
                                const std::array<AxisBoundary, 3>& boundary,
                                const std::array<double, 3>& origin = {0.0, 0.0, 0.0});

  Index num_cells() const { return Index(cells[0]) * cells[1] * cells[2]; }
  double cell_volume() const;
  double extent(int axis) const { return spacing[axis] * cells[axis]; }
  bool periodic(int axis) const { return boundary[axis] == AxisBoundary::periodic; }

  Index cell_index(const Coord& c) const { return c[0] + Index(cells[0]) * (c[1] + Index(cells[1]) * c[2]); }
  Coord cell_coords(Index idx) const;
  std::array<double, 3> cell_center(const Coord& c) const;

  /// Number of face positions along `axis` for the velocity component `axis`.
  int face_positions(int axis) const { return periodic(axis) ? cells[axis] : cells[axis] + 1; }
  Coord face_extent(int comp) const;
  Index num_faces(int comp) const;
  Index face_index(int comp, const Coord& c) const;
  Coord face_coords(int comp, Index idx) const;
  std::array<double, 3> face_center(int comp, const Coord& c) const;

  bool same_shape(const StructuredGrid& other) const;
};

/// Cell-centred scalar (pressure, concentration, corrector).
struct ScalarField {
  StructuredGrid grid;
  Eigen::VectorXd values;
  Mask active;

  explicit ScalarField(const StructuredGrid& g);
  ScalarField(const StructuredGrid& g, const Mask& mask);
  /// Zeroes the inactive entries.
  void clean();
};

/// Face-centred (MAC) vector field, one array per component.
struct VectorField {
  StructuredGrid grid;
  std::array<Eigen::VectorXd, 3> comp;
  std::array<Mask, 3> active;

  explicit VectorField(const StructuredGrid& g);
  void clean();
};

/// Active unknowns of a masked MAC grid. A face carries a velocity unknown if
/// both neighbouring cells are fluid; faces on an open boundary carry one if
/// their single neighbour is fluid; faces on a wall never do.
struct MacLayout {
  StructuredGrid grid;
  Mask fluid;
  std::array<std::vector<Index>, 3> face_dof;  // -1 for inactive faces
  std::vector<Index> cell_dof;                 // -1 for solid cells
  std::vector<int> dof_component;
  std::vector<Index> dof_face;
  std::vector<Index> pressure_cell;
  Eigen::VectorXd velocity_mass;  // quadrature weight per velocity unknown
  Eigen::VectorXd pressure_mass;  // cell volume per pressure unknown

  MacLayout(const StructuredGrid& g, const Mask& fluid_mask);

  Index num_velocity() const { return Index(dof_component.size()); }
  Index num_pressure() const { return Index(pressure_cell.size()); }

  /// Quadrature factor of a face position along its own axis (1/2 on open boundaries).
  double face_factor(int comp, int position) const;

  Eigen::VectorXd gather(const VectorField& v) const;
  VectorField scatter(const Eigen::VectorXd& x) const;
  Eigen::VectorXd gather(const ScalarField& s) const;
  ScalarField scatter_pressure(const Eigen::VectorXd& p) const;
};

/// Stokes operators of the discrete weak form: a(u,v) = <A u, v>,
/// (p, div v) = <p, B v> with B row = cell volume * discrete divergence.
struct StokesOperators {
  SparseMatrix A;
  SparseMatrix B;
};
StokesOperators assemble_stokes(const MacLayout& layout);

/// Squared gradient energy of a velocity unknown vector split by derivative
/// direction: result[d] = sum over components of || d_d u_c ||^2.
std::array<double, 3> gradient_energy_by_axis(const MacLayout& layout, const Eigen::VectorXd& u);

/// Conservative face-difference divergence per cell (periodic wrap where flagged).
ScalarField divergence(const VectorField& v);
/// Face-centred differences; zero on faces of non-periodic boundaries. Negative adjoint of divergence.
VectorField gradient(const ScalarField& p);

double inner(const ScalarField& a, const ScalarField& b);
double inner(const VectorField& a, const VectorField& b);

/// Norms of a field on its active set, each multiplied by `scale`.
struct NormRecord {
  double l2 = 0.0;
  double grad_horizontal = 0.0;  // || grad_xbar . ||
  double grad_vertical = 0.0;    // || d_n . ||
  double grad = 0.0;
  double linf = 0.0;
};
/// Scalar field: gradients from fluid-fluid face differences (last axis is vertical).
NormRecord weighted_norms(const ScalarField& field, double scale = 1.0);
/// Velocity field on a MAC layout: gradients from the Stokes energy split.
NormRecord weighted_norms(const MacLayout& layout, const Eigen::VectorXd& u, double scale = 1.0);

}  // namespace thinlayer
