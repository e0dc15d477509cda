#include "thinlayer/macro_darcy.hpp"

#include <algorithm>
#include <cmath>

#include "thinlayer/error.hpp"

namespace thinlayer {

int MacroGrid::num_columns() const {
  int n = 1;
  for (int a = 0; a < horizontal_axes(); ++a) n *= columns[std::size_t(a)];
  return n;
}

double MacroGrid::column_area() const {
  double s = 1.0;
  for (int a = 0; a < horizontal_axes(); ++a) s *= hx(a);
  return s;
}

std::array<int, 2> MacroGrid::column_coords(int col) const {
  if (horizontal_axes() == 1) return {col, 0};
  return {col % columns[0], col / columns[0]};
}

int MacroGrid::column_index(const std::array<int, 2>& c) const {
  return horizontal_axes() == 1 ? c[0] : c[0] + columns[0] * c[1];
}

Point MacroGrid::point(int col, int node) const {
  Point x{0.0, 0.0, 0.0};
  const auto c = column_coords(col);
  for (int a = 0; a < horizontal_axes(); ++a) x[std::size_t(a)] = base.lo[std::size_t(a)] + (c[std::size_t(a)] + 0.5) * hx(a);
  x[std::size_t(dim - 1)] = z(node);
  return x;
}

double NodalField::sample(const Point& x) const {
  const int nh = grid.horizontal_axes();
  std::array<int, 2> lo{0, 0};
  std::array<int, 2> hi{0, 0};
  std::array<double, 2> w{0.0, 0.0};
  for (int a = 0; a < nh; ++a) {
    const int n = grid.columns[std::size_t(a)];
    const double t = (x[std::size_t(a)] - grid.base.lo[std::size_t(a)]) / grid.hx(a) - 0.5;
    int i0 = int(std::floor(t));
    double s = t - i0;
    int i1 = i0 + 1;
    if (periodic) {
      i0 = ((i0 % n) + n) % n;
      i1 = ((i1 % n) + n) % n;
    } else if (i0 < 0) {
      i0 = i1 = 0;
      s = 0.0;
    } else if (i1 >= n) {
      i0 = i1 = n - 1;
      s = 0.0;
    }
    lo[std::size_t(a)] = i0;
    hi[std::size_t(a)] = i1;
    w[std::size_t(a)] = s;
  }
  const int N = grid.vertical_cells;
  const double tz = (x[std::size_t(grid.dim - 1)] + 1.0) / grid.hz();
  const int j0 = std::clamp(int(std::floor(tz)), 0, N - 1);
  const double sz = std::clamp(tz - j0, 0.0, 1.0);

  double result = 0.0;
  const int corners = 1 << nh;
  for (int k = 0; k < corners; ++k) {
    std::array<int, 2> c{0, 0};
    double weight = 1.0;
    for (int a = 0; a < nh; ++a) {
      const bool up = (k >> a) & 1;
      c[std::size_t(a)] = up ? hi[std::size_t(a)] : lo[std::size_t(a)];
      weight *= up ? w[std::size_t(a)] : 1.0 - w[std::size_t(a)];
    }
    if (weight == 0.0) continue;
    const int col = grid.column_index(c);
    result += weight * ((1.0 - sz) * at(col, j0) + sz * at(col, j0 + 1));
  }
  return result;
}

double NodalField::derivative(const Point& x, int axis) const {
  const double step = 0.5 * (axis == grid.dim - 1 ? grid.hz() : grid.hx(axis));
  Point a = x;
  Point b = x;
  a[std::size_t(axis)] -= step;
  b[std::size_t(axis)] += step;
  if (axis == grid.dim - 1) {
    a[std::size_t(axis)] = std::max(a[std::size_t(axis)], -1.0);
    b[std::size_t(axis)] = std::min(b[std::size_t(axis)], 1.0);
  }
  return (sample(b) - sample(a)) / (b[std::size_t(axis)] - a[std::size_t(axis)]);
}

namespace {

// Vertical load (K f0)_n at a macro point.
double vertical_load(const Eigen::MatrixXd& K, const Point& f) {
  const int n = int(K.rows());
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += K(n - 1, i) * f[std::size_t(i)];
  return s;
}

}  // namespace

DarcySolution solve_darcy(const DarcyProblem& P) {
  const MacroGrid& g = P.grid;
  const int n = g.dim;
  if (P.K.rows() != n || P.K.cols() != n) throw Error(ErrorCode::DimensionMismatch, "K does not match the macro dimension");
  const double knn = P.K(n - 1, n - 1);
  if (!(knn > 0.0)) throw Error(ErrorCode::SingularK, "K_nn must be positive");
  const int N = g.vertical_cells;
  if (N < 2) throw Error(ErrorCode::DimensionMismatch, "need at least two vertical cells");
  const double h = g.hz();

  DarcySolution sol;
  sol.grid = g;
  sol.pressure = NodalField(g);
  sol.dn_pressure = NodalField(g);
  for (auto& v : sol.velocity) v = NodalField(g);
  sol.interval_flux.resize(g.num_columns(), N);
  sol.column_flux.resize(g.num_columns());

  std::vector<double> load(static_cast<std::size_t>(N));
  std::vector<double> sub(std::size_t(N + 1)), diag(std::size_t(N + 1)), sup(std::size_t(N + 1)), rhs(std::size_t(N + 1));
  for (int col = 0; col < g.num_columns(); ++col) {
    for (int j = 0; j < N; ++j) {
      Point mid = g.point(col, j);
      mid[std::size_t(n - 1)] += 0.5 * h;
      load[std::size_t(j)] = vertical_load(P.K, P.force(mid));
    }
    // Flux continuity F_{j+1/2} - knn (p_{j+1} - p_j)/h = F_{j-1/2} - knn (p_j - p_{j-1})/h.
    const double c = knn / h;
    for (int j = 1; j < N; ++j) {
      sub[std::size_t(j)] = -c;
      diag[std::size_t(j)] = 2.0 * c;
      sup[std::size_t(j)] = -c;
      rhs[std::size_t(j)] = load[std::size_t(j - 1)] - load[std::size_t(j)];
    }
    const double pb_lo = P.boundary_pressure(g.point(col, 0));
    const double pb_hi = P.boundary_pressure(g.point(col, N));
    rhs[1] -= sub[1] * pb_lo;
    rhs[std::size_t(N - 1)] -= sup[std::size_t(N - 1)] * pb_hi;
    // Thomas elimination on nodes 1..N-1.
    for (int j = 2; j < N; ++j) {
      const double m = sub[std::size_t(j)] / diag[std::size_t(j - 1)];
      diag[std::size_t(j)] -= m * sup[std::size_t(j - 1)];
      rhs[std::size_t(j)] -= m * rhs[std::size_t(j - 1)];
    }
    std::vector<double> p(std::size_t(N + 1));
    p[0] = pb_lo;
    p[std::size_t(N)] = pb_hi;
    for (int j = N - 1; j >= 1; --j) {
      const double next = j + 1 < N ? sup[std::size_t(j)] * p[std::size_t(j + 1)] : 0.0;
      p[std::size_t(j)] = (rhs[std::size_t(j)] - next) / diag[std::size_t(j)];
    }
    double mean_flux = 0.0;
    for (int j = 0; j < N; ++j) {
      const double f = load[std::size_t(j)] - knn * (p[std::size_t(j + 1)] - p[std::size_t(j)]) / h;
      sol.interval_flux(col, j) = f;
      mean_flux += f / N;
    }
    sol.column_flux[col] = mean_flux;
    for (int j = 0; j <= N; ++j) {
      sol.pressure.at(col, j) = p[std::size_t(j)];
      const Point x = g.point(col, j);
      const Point f = P.force(x);
      const double dn = (vertical_load(P.K, f) - mean_flux) / knn;
      sol.dn_pressure.at(col, j) = dn;
      for (int a = 0; a < n; ++a) {
        double u = 0.0;
        for (int i = 0; i < n; ++i) u += P.K(a, i) * f[std::size_t(i)];
        u -= P.K(a, n - 1) * dn;
        sol.velocity[std::size_t(a)].at(col, j) = u;
      }
    }
  }
  return sol;
}

DarcyDiagnostics verify_darcy(const DarcyProblem& P, const DarcySolution& sol, double threshold) {
  const MacroGrid& g = sol.grid;
  const int n = g.dim;
  const double knn = P.K(n - 1, n - 1);
  const double h = g.hz();
  const int N = g.vertical_cells;
  DarcyDiagnostics d;
  d.threshold = threshold;
  for (int col = 0; col < g.num_columns(); ++col) {
    double lo = INFINITY;
    double hi = -INFINITY;
    for (int j = 0; j < N; ++j) {
      Point mid = g.point(col, j);
      mid[std::size_t(n - 1)] += 0.5 * h;
      const double f = vertical_load(P.K, P.force(mid)) - knn * (sol.pressure.at(col, j + 1) - sol.pressure.at(col, j)) / h;
      lo = std::min(lo, f);
      hi = std::max(hi, f);
    }
    d.max_flux_variation = std::max(d.max_flux_variation, hi - lo);
    d.boundary_mismatch = std::max(d.boundary_mismatch, std::abs(sol.pressure.at(col, 0) - P.boundary_pressure(g.point(col, 0))));
    d.boundary_mismatch = std::max(d.boundary_mismatch, std::abs(sol.pressure.at(col, N) - P.boundary_pressure(g.point(col, N))));
  }
  d.violation = d.max_flux_variation > threshold || d.boundary_mismatch > threshold;
  return d;
}

}  // namespace thinlayer
