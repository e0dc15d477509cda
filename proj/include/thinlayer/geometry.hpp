#pragma once

#include <array>
#include <string>
#include <vector>

#include "thinlayer/discrete.hpp"
#include "thinlayer/rational.hpp"

namespace thinlayer {

enum class InclusionShape { none, ball, box, cylinder };
enum class CrossSection { ball, box };

/// Solid inclusion inside the unit cell. `size` holds the radius (ball, or
/// cylinder with a ball section) in size[0], or per-axis half-widths (box).
/// Cylinders extend through the whole vertical axis; their centre and size
/// only use the horizontal axes.
struct InclusionSpec {
  InclusionShape shape = InclusionShape::none;
  CrossSection section = CrossSection::ball;
  std::array<double, 3> center{0.5, 0.5, 0.5};
  std::array<double, 3> size{0.25, 0.25, 0.25};

  static InclusionSpec full_fluid() { return {}; }
  static InclusionSpec ball(double radius, std::array<double, 3> c = {0.5, 0.5, 0.5});
  static InclusionSpec box(std::array<double, 3> half, std::array<double, 3> c = {0.5, 0.5, 0.5});
  static InclusionSpec cylinder_ball(double radius, std::array<double, 3> c = {0.5, 0.5, 0.5});
  static InclusionSpec cylinder_box(std::array<double, 3> half, std::array<double, 3> c = {0.5, 0.5, 0.5});

  /// Throws InvalidInclusion unless the solid lies strictly inside the cell
  /// (horizontally strictly inside for cylinders, which need dim = 3).
  void validate(int dim) const;
  bool solid_at(const std::array<double, 3>& y, int dim) const;
  /// Exact solid volume of the continuous shape.
  double solid_volume(int dim) const;
  std::string describe() const;
};

struct UnitCellGeometry {
  int dim = 2;
  int resolution = 0;
  InclusionSpec inclusion;
  StructuredGrid grid;  // (0,1)^dim, periodic, resolution^dim cells
  Mask fluid;
  double fluid_fraction = 1.0;

  bool has_solid() const { return fluid_fraction < 1.0; }
  Index fluid_cells() const;
};

/// Rasterises Y_f by cell-centre membership; checks periodic connectivity.
UnitCellGeometry build_unit_cell(const InclusionSpec& spec, int dim, int resolution);

/// Number of face-connected components of the masked cells, honouring the
/// grid's periodic axes. Connections along `skip_axis` are ignored, which
/// splits the cells into per-slab components.
int count_components(const StructuredGrid& grid, const Mask& mask, std::vector<int>* label = nullptr,
                     int skip_axis = -1);

/// Horizontal base Σ = product of integer intervals [lo, hi).
struct Base {
  std::array<int, 2> lo{0, 0};
  std::array<int, 2> hi{1, 1};
  double length(int axis) const { return double(hi[axis] - lo[axis]); }
  double measure(int horizontal_axes) const;
};

enum class FaceTag { interior, top, bottom, lateral, interface };

/// Thin layer Σ × (−ε^α, ε^α) tiled by ε-cells. The grid uses the unit cell
/// resolution per micro cell; lateral axes are walls, the vertical axis open.
struct LayerGeometry {
  UnitCellGeometry cell;
  ScalePair scales;
  Base base;
  StructuredGrid grid;
  Mask fluid;

  double eps() const { return scales.eps.to_double(); }
  double thickness_half() const { return scales.eps_pow_alpha.to_double(); }
  int vertical_axis() const { return grid.dim - 1; }
  Index fluid_cells() const;
  /// Unit-cell coordinates of a layer cell (translation by whole micro cells).
  Coord local_coords(const Coord& c) const;
  FaceTag classify_face(int comp, const Coord& face) const;
};

LayerGeometry build_layer(const UnitCellGeometry& cell, const Rational& eps, const Rational& alpha, const Base& base);

/// Horizontal fluid fraction per vertical slab of the unit cell.
struct AreaProfile {
  Eigen::VectorXd values;
  double min_value = 0.0;
  int argmin = 0;

  static AreaProfile from_values(const Eigen::VectorXd& values);
  double mean() const { return values.mean(); }
  double harmonic_mean() const;
};

AreaProfile area_profile(const UnitCellGeometry& cell);

}  // namespace thinlayer
