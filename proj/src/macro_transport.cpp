#include "thinlayer/macro_transport.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <set>

#include "thinlayer/cell_stokes.hpp"
#include "thinlayer/error.hpp"

namespace thinlayer {

namespace {

// Vertical interval flux F = a c_lo + b c_hi (upward, per column area).
struct IntervalCoeffs {
  double a = 0.0;
  double b = 0.0;
};

IntervalCoeffs interval_coeffs(double dnn, double v, Advection adv) {
  IntervalCoeffs k{dnn, -dnn};
  if (adv == Advection::upwind) {
    k.a += std::max(v, 0.0);
    k.b += std::min(v, 0.0);
  } else {
    k.a += 0.5 * v;
    k.b += 0.5 * v;
  }
  return k;
}

}  // namespace

MacroTransportSolution solve_macro_transport(const MacroTransportProblem& P) {
  const MacroGrid& g = P.grid;
  const int n = g.dim;
  if (!(P.dt > 0.0) || !(P.T > 0.0)) throw Error(ErrorCode::ValidationError, "time step and horizon must be positive");
  if (!(P.theta >= 0.5 && P.theta <= 1.0)) throw Error(ErrorCode::ValidationError, "theta must lie in [1/2, 1]");
  if (P.Dstar.rows() != n || P.Dstar.cols() != n) throw Error(ErrorCode::DimensionMismatch, "D* does not match the macro dimension");
  if (P.ubar_n.size() != g.num_columns()) throw Error(ErrorCode::DimensionMismatch, "one vertical velocity per column required");
  if (g.vertical_cells < 2) throw Error(ErrorCode::DimensionMismatch, "need at least two vertical cells");
  const double dnn_coef = P.Dstar(n - 1, n - 1);
  if (!(dnn_coef > 0.0)) throw Error(ErrorCode::StructureViolation, "D*_nn must be positive");

  const int N = g.vertical_cells;
  const int ni = N - 1;
  const int nc = g.num_columns();
  const Index size = Index(nc) * ni;
  const double A = g.column_area();
  const double hz = g.hz();
  const double vol = A * hz;
  const double mass = P.porosity * vol / P.dt;
  auto idx = [&](int col, int j) { return Index(col) * ni + (j - 1); };

  // Vertical part: tridiagonal per column plus the Dirichlet coupling.
  Eigen::VectorXd sub = Eigen::VectorXd::Zero(size), diag = Eigen::VectorXd::Zero(size), sup = Eigen::VectorXd::Zero(size);
  Eigen::VectorXd coef_lo(nc), coef_hi(nc);  // multiply c0^b at the bottom (row j=1) and top (row j=N-1)
  std::vector<IntervalCoeffs> end_lo(static_cast<std::size_t>(nc)), end_hi(static_cast<std::size_t>(nc));
  for (int col = 0; col < nc; ++col) {
    const IntervalCoeffs k = interval_coeffs(dnn_coef * A / hz, P.ubar_n[col] * A, P.advection);
    end_lo[std::size_t(col)] = k;
    end_hi[std::size_t(col)] = k;
    for (int j = 0; j < N; ++j) {
      // Row j gains +F, row j+1 gains -F.
      if (j >= 1) {
        diag[idx(col, j)] += k.a;
        if (j + 1 <= N - 1) sup[idx(col, j)] += k.b;
      }
      if (j + 1 <= N - 1) {
        diag[idx(col, j + 1)] -= k.b;
        if (j >= 1) sub[idx(col, j + 1)] -= k.a;
      }
    }
    coef_lo[col] = -k.a;  // row 1 gets -F_0 = -(a c_0 + b c_1)
    coef_hi[col] = k.b;   // row N-1 gets +F_{N-1} = a c_{N-1} + b c_N
  }

  // Horizontal part (case D2): periodic wrap, full horizontal block of D*.
  std::vector<Eigen::Triplet<double>> ht;
  const bool horizontal = P.dcase == DiffusionCase::D2 && n > 1;
  if (horizontal) {
    const int nh = g.horizontal_axes();
    auto shift = [&](int col, int axis, int step) {
      auto c = g.column_coords(col);
      const int m = g.columns[std::size_t(axis)];
      c[std::size_t(axis)] = ((c[std::size_t(axis)] + step) % m + m) % m;
      return g.column_index(c);
    };
    for (int col = 0; col < nc; ++col) {
      for (int a = 0; a < nh; ++a) {
        if (g.columns[std::size_t(a)] < 2) continue;
        const int nb = shift(col, a, 1);
        const double area = vol / g.hx(a);
        const double kd = P.Dstar(a, a) * area / g.hx(a);
        for (int j = 1; j <= ni; ++j) {
          const Index p = idx(col, j), q = idx(nb, j);
          ht.emplace_back(p, p, kd);
          ht.emplace_back(p, q, -kd);
          ht.emplace_back(q, q, kd);
          ht.emplace_back(q, p, -kd);
        }
        for (int b = 0; b < nh; ++b) {
          if (b == a || P.Dstar(a, b) == 0.0 || g.columns[std::size_t(b)] < 2) continue;
          // Flux across the a-face from col to nb: -D_ab area d_b c, d_b c averaged over both columns.
          const double w = -P.Dstar(a, b) * area / (4.0 * g.hx(b));
          const int cols[4] = {shift(col, b, 1), shift(nb, b, 1), shift(col, b, -1), shift(nb, b, -1)};
          const double sgn[4] = {1.0, 1.0, -1.0, -1.0};
          for (int j = 1; j <= ni; ++j) {
            for (int s = 0; s < 4; ++s) {
              ht.emplace_back(idx(col, j), idx(cols[s], j), w * sgn[s]);
              ht.emplace_back(idx(nb, j), idx(cols[s], j), -w * sgn[s]);
            }
          }
        }
      }
    }
  }
  SparseMatrix H(size, size);
  H.setFromTriplets(ht.begin(), ht.end());

  auto apply_L = [&](const Eigen::VectorXd& c) {
    Eigen::VectorXd out = H * c;
    for (Index k = 0; k < size; ++k) {
      out[k] += diag[k] * c[k];
      if (k % ni != 0) out[k] += sub[k] * c[k - 1];
      if (k % ni != ni - 1) out[k] += sup[k] * c[k + 1];
    }
    return out;
  };

  struct Level {
    Eigen::VectorXd source;
    Eigen::VectorXd bterm;
    Eigen::VectorXd lo, hi;  // boundary values per column
  };
  std::vector<Point> centers(static_cast<std::size_t>(size));
  for (int col = 0; col < nc; ++col)
    for (int j = 1; j <= ni; ++j) centers[std::size_t(idx(col, j))] = g.point(col, j);
  auto level = [&](double t) {
    Level L;
    L.source = Eigen::VectorXd::Zero(size);
    if (P.source)
      for (Index k = 0; k < size; ++k) L.source[k] = vol * P.source(t, centers[std::size_t(k)]);
    L.lo = Eigen::VectorXd::Zero(nc);
    L.hi = Eigen::VectorXd::Zero(nc);
    L.bterm = Eigen::VectorXd::Zero(size);
    for (int col = 0; col < nc; ++col) {
      if (P.boundary) {
        L.lo[col] = P.boundary(t, g.point(col, 0));
        L.hi[col] = P.boundary(t, g.point(col, N));
      }
      L.bterm[idx(col, 1)] += coef_lo[col] * L.lo[col];
      L.bterm[idx(col, N - 1)] += coef_hi[col] * L.hi[col];
    }
    return L;
  };
  auto end_fluxes = [&](const Eigen::VectorXd& c, const Level& L, double& bottom, double& top) {
    bottom = 0.0;
    top = 0.0;
    for (int col = 0; col < nc; ++col) {
      bottom += end_lo[std::size_t(col)].a * L.lo[col] + end_lo[std::size_t(col)].b * c[idx(col, 1)];
      top += end_hi[std::size_t(col)].a * c[idx(col, N - 1)] + end_hi[std::size_t(col)].b * L.hi[col];
    }
  };

  // System matrix mass/dt + theta L.
  const double th = P.theta;
  Eigen::VectorXd sdiag = diag * th + Eigen::VectorXd::Constant(size, mass);
  Eigen::VectorXd ssub = sub * th, ssup = sup * th;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  if (horizontal) {
    std::vector<Eigen::Triplet<double>> t;
    for (int k = 0; k < H.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(H, k); it; ++it) t.emplace_back(int(it.row()), int(it.col()), th * it.value());
    for (Index k = 0; k < size; ++k) {
      t.emplace_back(k, k, sdiag[k]);
      if (k % ni != 0) t.emplace_back(k, k - 1, ssub[k]);
      if (k % ni != ni - 1) t.emplace_back(k, k + 1, ssup[k]);
    }
    Eigen::SparseMatrix<double> S(size, size);
    S.setFromTriplets(t.begin(), t.end());
    lu.compute(S);
    if (lu.info() != Eigen::Success) throw Error(ErrorCode::NoConvergence, "macro transport factorisation failed");
  }
  auto solve = [&](const Eigen::VectorXd& rhs) {
    if (horizontal) {
      Eigen::VectorXd x = lu.solve(rhs);
      if (lu.info() != Eigen::Success) throw Error(ErrorCode::NoConvergence, "macro transport solve failed");
      return x;
    }
    Eigen::VectorXd x(size);
    std::vector<double> d(static_cast<std::size_t>(ni)), r(static_cast<std::size_t>(ni));
    for (int col = 0; col < nc; ++col) {
      const Index o = Index(col) * ni;
      for (int j = 0; j < ni; ++j) {
        d[std::size_t(j)] = sdiag[o + j];
        r[std::size_t(j)] = rhs[o + j];
      }
      for (int j = 1; j < ni; ++j) {
        const double m = ssub[o + j] / d[std::size_t(j - 1)];
        d[std::size_t(j)] -= m * ssup[o + j - 1];
        r[std::size_t(j)] -= m * r[std::size_t(j - 1)];
      }
      for (int j = ni - 1; j >= 0; --j) {
        const double next = j + 1 < ni ? ssup[o + j] * x[o + j + 1] : 0.0;
        x[o + j] = (r[std::size_t(j)] - next) / d[std::size_t(j)];
      }
    }
    return x;
  };

  MacroTransportSolution res;
  auto snapshot = [&](const Eigen::VectorXd& c, const Level& L) {
    NodalField f(g, horizontal);
    for (int col = 0; col < nc; ++col) {
      f.at(col, 0) = L.lo[col];
      f.at(col, N) = L.hi[col];
      for (int j = 1; j <= ni; ++j) f.at(col, j) = c[idx(col, j)];
    }
    return f;
  };

  const int steps = std::max(1, int(std::llround(P.T / P.dt)));
  std::set<int> snap_steps{steps};
  for (double ts : P.snapshot_times) snap_steps.insert(std::clamp(int(std::llround(ts / P.dt)), 0, steps));

  Eigen::VectorXd c = Eigen::VectorXd::Zero(size);
  Level prev = level(0.0);
  res.hull_lo = std::min(0.0, std::min(prev.lo.minCoeff(), prev.hi.minCoeff()));
  res.hull_hi = std::max(0.0, std::max(prev.lo.maxCoeff(), prev.hi.maxCoeff()));
  if (snap_steps.count(0)) {
    res.times.push_back(0.0);
    res.snapshots.push_back(snapshot(c, prev));
  }
  for (int s = 1; s <= steps; ++s) {
    const double time = s * P.dt;
    Level cur = level(time);
    Eigen::VectorXd rhs = mass * c + th * (cur.source - cur.bterm) + (1.0 - th) * (prev.source - prev.bterm);
    if (th < 1.0) rhs -= (1.0 - th) * apply_L(c);
    Eigen::VectorXd next = solve(rhs);

    // Ledger: storage + top outflow - bottom inflow - source = 0 (theta-weighted).
    double b1, t1, b0, t0;
    end_fluxes(next, cur, b1, t1);
    end_fluxes(c, prev, b0, t0);
    const double bottom = th * b1 + (1.0 - th) * b0;
    const double top = th * t1 + (1.0 - th) * t0;
    const double src = th * cur.source.sum() + (1.0 - th) * prev.source.sum();
    const double storage = mass * (next.sum() - c.sum());
    const double scale = std::abs(storage) + std::abs(bottom) + std::abs(top) + std::abs(src);
    if (scale > 0.0) res.max_ledger_residual = std::max(res.max_ledger_residual, std::abs(storage + top - bottom - src) / scale);
    res.inflow_bottom += P.dt * bottom;
    res.outflow_top += P.dt * top;
    res.source_integral += P.dt * src;

    c = std::move(next);
    res.min_value = std::min(res.min_value, c.minCoeff());
    res.max_value = std::max(res.max_value, c.maxCoeff());
    res.hull_lo = std::min(res.hull_lo, std::min(cur.lo.minCoeff(), cur.hi.minCoeff()));
    res.hull_hi = std::max(res.hull_hi, std::max(cur.lo.maxCoeff(), cur.hi.maxCoeff()));
    if (snap_steps.count(s)) {
      res.times.push_back(time);
      res.snapshots.push_back(snapshot(c, cur));
    }
    prev = std::move(cur);
  }
  res.steps = steps;
  res.hull_violation = std::max({0.0, res.hull_lo - res.min_value, res.max_value - res.hull_hi});
  res.nonphysical_negativity = P.advection == Advection::upwind && res.min_value < -P.negativity_tol;
  return res;
}

double CorrectorSampler::horizontal(const Point& x, const Point& y) const {
  if (dcase != DiffusionCase::D2 || !c0 || !cells) return 0.0;
  double s = 0.0;
  for (const ScalarCorrector& h : cells->horizontal) s += c0->derivative(x, h.axis) * sample_cell(h.field, y);
  return s;
}

double CorrectorSampler::vertical(const Point& x, const Point& y) const {
  if (!c0 || !cells) return 0.0;
  const int v = c0->grid.dim - 1;
  const double dn = c0->derivative(x, v);
  if (cells->vertical_full) return dn * sample_cell(cells->vertical_full->field, y);
  if (cells->vertical_1d) {
    const Eigen::VectorXd& chi = cells->vertical_1d->chi;
    const int m = int(chi.size());
    const double yn = y[std::size_t(v)] - std::floor(y[std::size_t(v)]);
    const int k = std::clamp(int(yn * m), 0, m - 1);
    return dn * chi[k];
  }
  return 0.0;
}

CorrectorSampler reconstruct_correctors(DiffusionCase dcase, const NodalField& c0, const CellDiffusionSolutions& cells) {
  return CorrectorSampler{dcase, &c0, &cells};
}

}  // namespace thinlayer
