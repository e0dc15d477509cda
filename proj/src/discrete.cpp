#include "thinlayer/discrete.hpp"

#include <algorithm>
#include <cmath>

#include "thinlayer/error.hpp"

namespace thinlayer {

StructuredGrid StructuredGrid::uniform(int dim, const Coord& cells, const std::array<double, 3>& extent,
                                       const std::array<AxisBoundary, 3>& boundary,
                                       const std::array<double, 3>& origin) {
  if (dim < 2 || dim > 3) throw Error(ErrorCode::DimensionMismatch, "grid dimension must be 2 or 3");
  StructuredGrid g;
  g.dim = dim;
  g.boundary = boundary;
  g.origin = origin;
  for (int a = 0; a < 3; ++a) {
    if (a < dim) {
      if (cells[a] < 1) throw Error(ErrorCode::DimensionMismatch, "grid needs at least one cell per axis");
      g.cells[a] = cells[a];
      g.spacing[a] = extent[a] / cells[a];
    } else {
      g.cells[a] = 1;
      g.spacing[a] = 1.0;
      g.boundary[a] = AxisBoundary::periodic;
      g.origin[a] = 0.0;
    }
  }
  return g;
}

double StructuredGrid::cell_volume() const {
  double v = 1.0;
  for (int a = 0; a < dim; ++a) v *= spacing[a];
  return v;
}

Coord StructuredGrid::cell_coords(Index idx) const {
  Coord c{0, 0, 0};
  c[0] = int(idx % cells[0]);
  idx /= cells[0];
  c[1] = int(idx % cells[1]);
  c[2] = int(idx / cells[1]);
  return c;
}

std::array<double, 3> StructuredGrid::cell_center(const Coord& c) const {
  std::array<double, 3> x{0.0, 0.0, 0.0};
  for (int a = 0; a < dim; ++a) x[a] = origin[a] + (c[a] + 0.5) * spacing[a];
  return x;
}

Coord StructuredGrid::face_extent(int comp) const {
  Coord e = cells;
  e[comp] = face_positions(comp);
  return e;
}

Index StructuredGrid::num_faces(int comp) const {
  const Coord e = face_extent(comp);
  return Index(e[0]) * e[1] * e[2];
}

Index StructuredGrid::face_index(int comp, const Coord& c) const {
  const Coord e = face_extent(comp);
  return c[0] + Index(e[0]) * (c[1] + Index(e[1]) * c[2]);
}

Coord StructuredGrid::face_coords(int comp, Index idx) const {
  const Coord e = face_extent(comp);
  Coord c{0, 0, 0};
  c[0] = int(idx % e[0]);
  idx /= e[0];
  c[1] = int(idx % e[1]);
  c[2] = int(idx / e[1]);
  return c;
}

std::array<double, 3> StructuredGrid::face_center(int comp, const Coord& c) const {
  std::array<double, 3> x = cell_center(c);
  x[comp] = origin[comp] + c[comp] * spacing[comp];
  return x;
}

bool StructuredGrid::same_shape(const StructuredGrid& other) const {
  return dim == other.dim && cells == other.cells && boundary == other.boundary;
}

ScalarField::ScalarField(const StructuredGrid& g)
    : grid(g), values(Eigen::VectorXd::Zero(g.num_cells())), active(std::size_t(g.num_cells()), 1) {}

ScalarField::ScalarField(const StructuredGrid& g, const Mask& mask)
    : grid(g), values(Eigen::VectorXd::Zero(g.num_cells())), active(mask) {
  if (Index(mask.size()) != g.num_cells()) throw Error(ErrorCode::DimensionMismatch, "mask size does not match grid");
}

void ScalarField::clean() {
  for (Index i = 0; i < values.size(); ++i)
    if (!active[std::size_t(i)]) values[i] = 0.0;
}

VectorField::VectorField(const StructuredGrid& g) : grid(g) {
  for (int c = 0; c < 3; ++c) {
    const Index nf = c < g.dim ? g.num_faces(c) : 0;
    comp[c] = Eigen::VectorXd::Zero(nf);
    active[c].assign(std::size_t(nf), 1);
  }
}

void VectorField::clean() {
  for (int c = 0; c < grid.dim; ++c)
    for (Index i = 0; i < comp[c].size(); ++i)
      if (!active[c][std::size_t(i)]) comp[c][i] = 0.0;
}

namespace {

// Cells on either side of a face; -1 beyond a non-periodic boundary.
std::pair<Index, Index> face_neighbours(const StructuredGrid& g, int comp, Coord f) {
  const int n = g.cells[comp];
  const int k = f[comp];
  Index lo = -1;
  Index hi = -1;
  if (k > 0) {
    f[comp] = k - 1;
    lo = g.cell_index(f);
  } else if (g.periodic(comp)) {
    f[comp] = n - 1;
    lo = g.cell_index(f);
  }
  if (k < n) {
    f[comp] = k;
    hi = g.cell_index(f);
  }
  return {lo, hi};
}

}  // namespace

MacLayout::MacLayout(const StructuredGrid& g, const Mask& fluid_mask) : grid(g), fluid(fluid_mask) {
  if (Index(fluid.size()) != g.num_cells()) throw Error(ErrorCode::DimensionMismatch, "fluid mask size does not match grid");
  const double vol = g.cell_volume();
  std::vector<double> mass;
  for (int c = 0; c < g.dim; ++c) {
    const Index nf = g.num_faces(c);
    face_dof[c].assign(std::size_t(nf), -1);
    for (Index f = 0; f < nf; ++f) {
      const Coord fc = g.face_coords(c, f);
      const auto [lo, hi] = face_neighbours(g, c, fc);
      bool on = false;
      if (lo >= 0 && hi >= 0) {
        on = fluid[std::size_t(lo)] && fluid[std::size_t(hi)];
      } else if (g.boundary[c] == AxisBoundary::open) {
        const Index cell = lo >= 0 ? lo : hi;
        on = fluid[std::size_t(cell)] != 0;
      }
      if (on) {
        face_dof[c][std::size_t(f)] = Index(dof_component.size());
        dof_component.push_back(c);
        dof_face.push_back(f);
        mass.push_back(vol * face_factor(c, fc[c]));
      }
    }
  }
  velocity_mass = Eigen::Map<Eigen::VectorXd>(mass.data(), Index(mass.size()));
  cell_dof.assign(fluid.size(), -1);
  for (Index i = 0; i < g.num_cells(); ++i) {
    if (fluid[std::size_t(i)]) {
      cell_dof[std::size_t(i)] = Index(pressure_cell.size());
      pressure_cell.push_back(i);
    }
  }
  pressure_mass = Eigen::VectorXd::Constant(num_pressure(), vol);
}

double MacLayout::face_factor(int comp, int position) const {
  if (grid.boundary[comp] != AxisBoundary::open) return 1.0;
  return (position == 0 || position == grid.cells[comp]) ? 0.5 : 1.0;
}

Eigen::VectorXd MacLayout::gather(const VectorField& v) const {
  Eigen::VectorXd x(num_velocity());
  for (Index k = 0; k < num_velocity(); ++k) x[k] = v.comp[dof_component[std::size_t(k)]][dof_face[std::size_t(k)]];
  return x;
}

VectorField MacLayout::scatter(const Eigen::VectorXd& x) const {
  VectorField v(grid);
  for (int c = 0; c < grid.dim; ++c)
    for (std::size_t f = 0; f < face_dof[c].size(); ++f) v.active[c][f] = face_dof[c][f] >= 0;
  for (Index k = 0; k < num_velocity(); ++k) v.comp[dof_component[std::size_t(k)]][dof_face[std::size_t(k)]] = x[k];
  return v;
}

Eigen::VectorXd MacLayout::gather(const ScalarField& s) const {
  Eigen::VectorXd x(num_pressure());
  for (Index k = 0; k < num_pressure(); ++k) x[k] = s.values[pressure_cell[std::size_t(k)]];
  return x;
}

ScalarField MacLayout::scatter_pressure(const Eigen::VectorXd& p) const {
  ScalarField s(grid, fluid);
  for (Index k = 0; k < num_pressure(); ++k) s.values[pressure_cell[std::size_t(k)]] = p[k];
  return s;
}

namespace {

// Visits every quadratic energy term of the discrete velocity gradient:
// visit(axis, weight, dof_a, dof_b) stands for weight * (u_b - u_a)^2 where
// -1 marks a zero (inactive or ghost) value.
template <typename Visitor>
void for_each_gradient_term(const MacLayout& layout, Visitor&& visit) {
  const StructuredGrid& g = layout.grid;
  const double vol = g.cell_volume();
  for (int c = 0; c < g.dim; ++c) {
    const auto& dof = layout.face_dof[c];
    // Normal derivative d_c u_c lives on fluid cells.
    const double kn = vol / (g.spacing[c] * g.spacing[c]);
    for (Index cell = 0; cell < g.num_cells(); ++cell) {
      if (!layout.fluid[std::size_t(cell)]) continue;
      Coord x = g.cell_coords(cell);
      const Index a = dof[std::size_t(g.face_index(c, x))];
      x[c] = (x[c] + 1 == g.face_positions(c)) ? 0 : x[c] + 1;
      const Index b = dof[std::size_t(g.face_index(c, x))];
      if (a >= 0 || b >= 0) visit(c, kn, a, b);
    }
    // Tangential derivatives d_d u_c live between neighbouring c-faces.
    const Coord ext = g.face_extent(c);
    const Index nf = g.num_faces(c);
    for (int d = 0; d < g.dim; ++d) {
      if (d == c) continue;
      const double kt0 = vol / (g.spacing[d] * g.spacing[d]);
      for (Index f = 0; f < nf; ++f) {
        Coord x = g.face_coords(c, f);
        const double kt = kt0 * layout.face_factor(c, x[c]);
        const Index a = dof[std::size_t(f)];
        if (x[d] == 0 && g.boundary[d] == AxisBoundary::wall && a >= 0) visit(d, kt, Index(-1), a);
        Index b = -1;
        if (x[d] + 1 < ext[d]) {
          x[d] += 1;
          b = dof[std::size_t(g.face_index(c, x))];
        } else if (g.periodic(d)) {
          x[d] = 0;
          b = dof[std::size_t(g.face_index(c, x))];
        } else if (g.boundary[d] == AxisBoundary::open) {
          continue;
        }
        if (a >= 0 || b >= 0) visit(d, kt, a, b);
      }
    }
  }
}

}  // namespace

StokesOperators assemble_stokes(const MacLayout& layout) {
  const StructuredGrid& g = layout.grid;
  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> ta;
  ta.reserve(std::size_t(layout.num_velocity()) * 2 * (1 + 2 * g.dim));
  for_each_gradient_term(layout, [&](int, double k, Index a, Index b) {
    if (a >= 0) ta.emplace_back(a, a, k);
    if (b >= 0) ta.emplace_back(b, b, k);
    if (a >= 0 && b >= 0) {
      ta.emplace_back(a, b, -k);
      ta.emplace_back(b, a, -k);
    }
  });
  StokesOperators ops;
  ops.A.resize(layout.num_velocity(), layout.num_velocity());
  ops.A.setFromTriplets(ta.begin(), ta.end());

  std::vector<Triplet> tb;
  tb.reserve(std::size_t(layout.num_pressure()) * 2 * g.dim);
  const double vol = g.cell_volume();
  for (Index k = 0; k < layout.num_pressure(); ++k) {
    Coord x = g.cell_coords(layout.pressure_cell[std::size_t(k)]);
    for (int c = 0; c < g.dim; ++c) {
      const double area = vol / g.spacing[c];
      const Coord base = x;
      const Index lo = layout.face_dof[c][std::size_t(g.face_index(c, base))];
      Coord up = base;
      up[c] = (up[c] + 1 == g.face_positions(c)) ? 0 : up[c] + 1;
      const Index hi = layout.face_dof[c][std::size_t(g.face_index(c, up))];
      if (lo >= 0) tb.emplace_back(k, lo, -area);
      if (hi >= 0) tb.emplace_back(k, hi, area);
    }
  }
  ops.B.resize(layout.num_pressure(), layout.num_velocity());
  ops.B.setFromTriplets(tb.begin(), tb.end());
  return ops;
}

std::array<double, 3> gradient_energy_by_axis(const MacLayout& layout, const Eigen::VectorXd& u) {
  std::array<double, 3> e{0.0, 0.0, 0.0};
  for_each_gradient_term(layout, [&](int axis, double k, Index a, Index b) {
    const double ua = a >= 0 ? u[a] : 0.0;
    const double ub = b >= 0 ? u[b] : 0.0;
    e[axis] += k * (ub - ua) * (ub - ua);
  });
  return e;
}

ScalarField divergence(const VectorField& v) {
  const StructuredGrid& g = v.grid;
  ScalarField out(g);
  for (Index cell = 0; cell < g.num_cells(); ++cell) {
    const Coord x = g.cell_coords(cell);
    double div = 0.0;
    for (int c = 0; c < g.dim; ++c) {
      Coord up = x;
      up[c] = (up[c] + 1 == g.face_positions(c)) ? 0 : up[c] + 1;
      div += (v.comp[c][g.face_index(c, up)] - v.comp[c][g.face_index(c, x)]) / g.spacing[c];
    }
    out.values[cell] = div;
  }
  return out;
}

VectorField gradient(const ScalarField& p) {
  const StructuredGrid& g = p.grid;
  VectorField out(g);
  for (int c = 0; c < g.dim; ++c) {
    for (Index f = 0; f < g.num_faces(c); ++f) {
      const auto [lo, hi] = face_neighbours(g, c, g.face_coords(c, f));
      out.comp[c][f] = (lo >= 0 && hi >= 0) ? (p.values[hi] - p.values[lo]) / g.spacing[c] : 0.0;
    }
  }
  return out;
}

double inner(const ScalarField& a, const ScalarField& b) {
  if (!a.grid.same_shape(b.grid)) throw Error(ErrorCode::DimensionMismatch, "inner product of fields on different grids");
  return a.grid.cell_volume() * a.values.dot(b.values);
}

double inner(const VectorField& a, const VectorField& b) {
  if (!a.grid.same_shape(b.grid)) throw Error(ErrorCode::DimensionMismatch, "inner product of fields on different grids");
  const StructuredGrid& g = a.grid;
  double s = 0.0;
  for (int c = 0; c < g.dim; ++c) {
    for (Index f = 0; f < g.num_faces(c); ++f) {
      const Coord x = g.face_coords(c, f);
      const bool edge = !g.periodic(c) && g.boundary[c] == AxisBoundary::open && (x[c] == 0 || x[c] == g.cells[c]);
      s += (edge ? 0.5 : 1.0) * a.comp[c][f] * b.comp[c][f];
    }
  }
  return g.cell_volume() * s;
}

NormRecord weighted_norms(const ScalarField& field, double scale) {
  const StructuredGrid& g = field.grid;
  const double vol = g.cell_volume();
  NormRecord r;
  double l2 = 0.0;
  for (Index i = 0; i < g.num_cells(); ++i) {
    if (!field.active[std::size_t(i)]) continue;
    l2 += vol * field.values[i] * field.values[i];
    r.linf = std::max(r.linf, std::abs(field.values[i]));
  }
  double gh = 0.0;
  double gv = 0.0;
  for (int c = 0; c < g.dim; ++c) {
    for (Index f = 0; f < g.num_faces(c); ++f) {
      const auto [lo, hi] = face_neighbours(g, c, g.face_coords(c, f));
      if (lo < 0 || hi < 0 || !field.active[std::size_t(lo)] || !field.active[std::size_t(hi)]) continue;
      const double d = (field.values[hi] - field.values[lo]) / g.spacing[c];
      (c == g.dim - 1 ? gv : gh) += vol * d * d;
    }
  }
  r.l2 = scale * std::sqrt(l2);
  r.grad_horizontal = scale * std::sqrt(gh);
  r.grad_vertical = scale * std::sqrt(gv);
  r.grad = scale * std::sqrt(gh + gv);
  r.linf *= scale;
  return r;
}

NormRecord weighted_norms(const MacLayout& layout, const Eigen::VectorXd& u, double scale) {
  if (u.size() != layout.num_velocity()) throw Error(ErrorCode::DimensionMismatch, "velocity vector size mismatch");
  NormRecord r;
  r.l2 = scale * std::sqrt(u.cwiseProduct(u).dot(layout.velocity_mass));
  const auto e = gradient_energy_by_axis(layout, u);
  const int vertical = layout.grid.dim - 1;
  double gh = 0.0;
  for (int d = 0; d < vertical; ++d) gh += e[d];
  r.grad_horizontal = scale * std::sqrt(gh);
  r.grad_vertical = scale * std::sqrt(e[vertical]);
  r.grad = scale * std::sqrt(gh + e[vertical]);
  r.linf = u.size() ? scale * u.cwiseAbs().maxCoeff() : 0.0;
  return r;
}

}  // namespace thinlayer
