#include "thinlayer/geometry.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "thinlayer/error.hpp"

namespace thinlayer {

InclusionSpec InclusionSpec::ball(double radius, std::array<double, 3> c) {
  InclusionSpec s;
  s.shape = InclusionShape::ball;
  s.center = c;
  s.size = {radius, radius, radius};
  return s;
}

InclusionSpec InclusionSpec::box(std::array<double, 3> half, std::array<double, 3> c) {
  InclusionSpec s;
  s.shape = InclusionShape::box;
  s.center = c;
  s.size = half;
  return s;
}

InclusionSpec InclusionSpec::cylinder_ball(double radius, std::array<double, 3> c) {
  InclusionSpec s = ball(radius, c);
  s.shape = InclusionShape::cylinder;
  s.section = CrossSection::ball;
  return s;
}

InclusionSpec InclusionSpec::cylinder_box(std::array<double, 3> half, std::array<double, 3> c) {
  InclusionSpec s = box(half, c);
  s.shape = InclusionShape::cylinder;
  s.section = CrossSection::box;
  return s;
}

namespace {

bool inside_interval(double c, double half) { return half > 0.0 && c - half > 0.0 && c + half < 1.0; }

}  // namespace

void InclusionSpec::validate(int dim) const {
  if (dim < 2 || dim > 3) throw Error(ErrorCode::DimensionMismatch, "cell dimension must be 2 or 3");
  if (shape == InclusionShape::none) return;
  int axes = dim;
  bool round = shape == InclusionShape::ball;
  if (shape == InclusionShape::cylinder) {
    if (dim != 3) {
      throw Error(ErrorCode::InvalidInclusion,
                  "cylinder inclusions need dim = 3 (in 2-D the solid stripe blocks horizontal flow)");
    }
    axes = dim - 1;
    round = section == CrossSection::ball;
  }
  for (int a = 0; a < axes; ++a) {
    const double half = round ? size[0] : size[a];
    if (!inside_interval(center[a], half)) {
      throw Error(ErrorCode::InvalidInclusion, describe() + " is not strictly inside the cell");
    }
  }
}

bool InclusionSpec::solid_at(const std::array<double, 3>& y, int dim) const {
  auto in_ball = [&](int axes) {
    double r2 = 0.0;
    for (int a = 0; a < axes; ++a) r2 += (y[a] - center[a]) * (y[a] - center[a]);
    return r2 < size[0] * size[0];
  };
  auto in_box = [&](int axes) {
    for (int a = 0; a < axes; ++a)
      if (std::abs(y[a] - center[a]) >= size[a]) return false;
    return true;
  };
  switch (shape) {
    case InclusionShape::none: return false;
    case InclusionShape::ball: return in_ball(dim);
    case InclusionShape::box: return in_box(dim);
    case InclusionShape::cylinder: return section == CrossSection::ball ? in_ball(dim - 1) : in_box(dim - 1);
  }
  return false;
}

double InclusionSpec::solid_volume(int dim) const {
  const double pi = std::numbers::pi;
  const double r = size[0];
  auto ball_volume = [&](int axes) { return axes == 2 ? pi * r * r : 4.0 / 3.0 * pi * r * r * r; };
  auto box_volume = [&](int axes) {
    double v = 1.0;
    for (int a = 0; a < axes; ++a) v *= 2.0 * size[a];
    return v;
  };
  switch (shape) {
    case InclusionShape::none: return 0.0;
    case InclusionShape::ball: return ball_volume(dim);
    case InclusionShape::box: return box_volume(dim);
    case InclusionShape::cylinder: return section == CrossSection::ball ? ball_volume(dim - 1) : box_volume(dim - 1);
  }
  return 0.0;
}

std::string InclusionSpec::describe() const {
  std::ostringstream os;
  switch (shape) {
    case InclusionShape::none: return "none";
    case InclusionShape::ball: os << "ball(r=" << size[0]; break;
    case InclusionShape::box: os << "box(half=" << size[0] << "," << size[1] << "," << size[2]; break;
    case InclusionShape::cylinder:
      if (section == CrossSection::ball)
        os << "cylinder(r=" << size[0];
      else
        os << "cylinder(half=" << size[0] << "," << size[1];
      break;
  }
  os << ", center=" << center[0] << "," << center[1] << "," << center[2] << ")";
  return os.str();
}

Index UnitCellGeometry::fluid_cells() const {
  Index n = 0;
  for (auto f : fluid) n += f;
  return n;
}

int count_components(const StructuredGrid& grid, const Mask& mask, std::vector<int>* label, int skip_axis) {
  std::vector<int> comp(mask.size(), -1);
  std::vector<Index> stack;
  int count = 0;
  for (Index seed = 0; seed < grid.num_cells(); ++seed) {
    if (!mask[std::size_t(seed)] || comp[std::size_t(seed)] >= 0) continue;
    comp[std::size_t(seed)] = count;
    stack.push_back(seed);
    while (!stack.empty()) {
      const Index cur = stack.back();
      stack.pop_back();
      const Coord x = grid.cell_coords(cur);
      for (int a = 0; a < grid.dim; ++a) {
        if (a == skip_axis) continue;
        for (int step : {-1, 1}) {
          Coord y = x;
          y[a] += step;
          if (y[a] < 0 || y[a] >= grid.cells[a]) {
            if (!grid.periodic(a)) continue;
            y[a] = (y[a] + grid.cells[a]) % grid.cells[a];
          }
          const Index nb = grid.cell_index(y);
          if (mask[std::size_t(nb)] && comp[std::size_t(nb)] < 0) {
            comp[std::size_t(nb)] = count;
            stack.push_back(nb);
          }
        }
      }
    }
    ++count;
  }
  if (label) *label = std::move(comp);
  return count;
}

UnitCellGeometry build_unit_cell(const InclusionSpec& spec, int dim, int resolution) {
  if (resolution < 8) throw Error(ErrorCode::OutOfRange, "unit cell resolution must be at least 8");
  spec.validate(dim);
  UnitCellGeometry cell;
  cell.dim = dim;
  cell.resolution = resolution;
  cell.inclusion = spec;
  cell.grid = StructuredGrid::uniform(dim, {resolution, resolution, resolution}, {1.0, 1.0, 1.0},
                                      {AxisBoundary::periodic, AxisBoundary::periodic, AxisBoundary::periodic});
  cell.fluid.assign(std::size_t(cell.grid.num_cells()), 0);
  Index fluid = 0;
  for (Index i = 0; i < cell.grid.num_cells(); ++i) {
    const bool f = !spec.solid_at(cell.grid.cell_center(cell.grid.cell_coords(i)), dim);
    cell.fluid[std::size_t(i)] = f;
    fluid += f;
  }
  if (fluid == 0) throw Error(ErrorCode::EmptyFluid, "inclusion " + spec.describe() + " fills the cell");
  cell.fluid_fraction = double(fluid) / double(cell.grid.num_cells());
  const int parts = count_components(cell.grid, cell.fluid);
  if (parts != 1) {
    throw Error(ErrorCode::DisconnectedFluid,
                "fluid part has " + std::to_string(parts) + " periodic components for " + spec.describe());
  }
  return cell;
}

double Base::measure(int horizontal_axes) const {
  double m = 1.0;
  for (int a = 0; a < horizontal_axes; ++a) m *= length(a);
  return m;
}

Index LayerGeometry::fluid_cells() const {
  Index n = 0;
  for (auto f : fluid) n += f;
  return n;
}

Coord LayerGeometry::local_coords(const Coord& c) const {
  const int m = cell.resolution;
  Coord y{0, 0, 0};
  for (int a = 0; a < grid.dim; ++a) y[a] = c[a] % m;
  return y;
}

FaceTag LayerGeometry::classify_face(int comp, const Coord& face) const {
  const int n = grid.cells[comp];
  const int k = face[comp];
  const bool vertical = comp == vertical_axis();
  if (k == 0 || k == n) {
    Coord c = face;
    c[comp] = k == 0 ? 0 : n - 1;
    if (!fluid[std::size_t(grid.cell_index(c))] && vertical) return FaceTag::interface;
    if (vertical) return k == 0 ? FaceTag::bottom : FaceTag::top;
    return FaceTag::lateral;
  }
  Coord lo = face;
  lo[comp] = k - 1;
  const bool a = fluid[std::size_t(grid.cell_index(lo))] != 0;
  const bool b = fluid[std::size_t(grid.cell_index(face))] != 0;
  return a == b ? FaceTag::interior : FaceTag::interface;
}

LayerGeometry build_layer(const UnitCellGeometry& cell, const Rational& eps, const Rational& alpha, const Base& base) {
  LayerGeometry layer;
  layer.scales = check_admissible_scales(eps, alpha);
  layer.cell = cell;
  layer.base = base;
  const int dim = cell.dim;
  const int m = cell.resolution;
  const auto inv_eps = layer.scales.inv_eps;
  Coord cells{1, 1, 1};
  std::array<double, 3> extent{1.0, 1.0, 1.0};
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::array<AxisBoundary, 3> bnd{AxisBoundary::wall, AxisBoundary::wall, AxisBoundary::wall};
  for (int a = 0; a < dim - 1; ++a) {
    if (base.hi[a] <= base.lo[a]) throw Error(ErrorCode::GeometryError, "empty base interval");
    const std::int64_t n = (base.hi[a] - base.lo[a]) * inv_eps * m;
    if (n > (1 << 24)) throw Error(ErrorCode::OutOfRange, "layer grid too large");
    cells[a] = int(n);
    extent[a] = base.length(a);
    origin[a] = base.lo[a];
  }
  const int v = dim - 1;
  const std::int64_t nv = 2 * layer.scales.cells_half * m;
  if (nv > (1 << 24)) throw Error(ErrorCode::OutOfRange, "layer grid too large");
  cells[v] = int(nv);
  extent[v] = 2.0 * layer.scales.eps_pow_alpha.to_double();
  origin[v] = -layer.scales.eps_pow_alpha.to_double();
  bnd[v] = AxisBoundary::open;
  layer.grid = StructuredGrid::uniform(dim, cells, extent, bnd, origin);
  // Cell spacing is eps/m on every axis; write it exactly.
  for (int a = 0; a < dim; ++a) layer.grid.spacing[a] = eps.to_double() / m;

  layer.fluid.assign(std::size_t(layer.grid.num_cells()), 0);
  for (Index i = 0; i < layer.grid.num_cells(); ++i) {
    const Coord y = layer.local_coords(layer.grid.cell_coords(i));
    layer.fluid[std::size_t(i)] = cell.fluid[std::size_t(cell.grid.cell_index(y))];
  }
  const int parts = count_components(layer.grid, layer.fluid);
  if (parts != 1) {
    throw Error(ErrorCode::DisconnectedFluid, "layer fluid has " + std::to_string(parts) + " components");
  }
  return layer;
}

AreaProfile AreaProfile::from_values(const Eigen::VectorXd& values) {
  AreaProfile p;
  p.values = values;
  if (values.size() == 0) throw Error(ErrorCode::NonpositiveProfile, "empty area profile");
  Eigen::Index k = 0;
  p.min_value = values.minCoeff(&k);
  p.argmin = int(k);
  return p;
}

double AreaProfile::harmonic_mean() const {
  if (min_value <= 0.0) throw Error(ErrorCode::NonpositiveProfile, "area profile has a nonpositive slab");
  return 1.0 / values.cwiseInverse().mean();
}

AreaProfile area_profile(const UnitCellGeometry& cell) {
  const int m = cell.resolution;
  const int v = cell.dim - 1;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(m);
  for (Index i = 0; i < cell.grid.num_cells(); ++i) {
    if (cell.fluid[std::size_t(i)]) a[cell.grid.cell_coords(i)[v]] += 1.0;
  }
  a /= std::pow(double(m), cell.dim - 1);
  return AreaProfile::from_values(a);
}

}  // namespace thinlayer
