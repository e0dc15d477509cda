#include "thinlayer/convergence.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <numbers>
#include <thread>

#include "thinlayer/error.hpp"

namespace thinlayer {

namespace {

constexpr double kPi = std::numbers::pi;

}  // namespace

std::string to_string(FlowRecipeKind k) {
  switch (k) {
    case FlowRecipeKind::generic: return "generic";
    case FlowRecipeKind::zero: return "zero";
    case FlowRecipeKind::equilibrium: return "equilibrium";
  }
  return "generic";
}

std::string to_string(TransportRecipeKind k) { return k == TransportRecipeKind::zero ? "zero" : "generic"; }

FlowRecipeKind parse_flow_recipe(const std::string& text) {
  if (text == "generic") return FlowRecipeKind::generic;
  if (text == "zero") return FlowRecipeKind::zero;
  if (text == "equilibrium") return FlowRecipeKind::equilibrium;
  throw Error(ErrorCode::ValidationError, "unknown flow recipe '" + text + "' (generic, zero, equilibrium)");
}

TransportRecipeKind parse_transport_recipe(const std::string& text) {
  if (text == "generic") return TransportRecipeKind::generic;
  if (text == "zero") return TransportRecipeKind::zero;
  throw Error(ErrorCode::ValidationError, "unknown transport recipe '" + text + "' (generic, zero)");
}

Point FlowRecipe::force(const Point& X, int dim) const {
  Point f{0.0, 0.0, 0.0};
  if (kind != FlowRecipeKind::generic) return f;
  const double z = X[std::size_t(dim - 1)];
  f[0] = 0.5 * std::sin(kPi * X[0]);
  if (dim == 3) f[1] = 0.3 * std::cos(kPi * X[1]);
  f[std::size_t(dim - 1)] = 1.0 + 0.5 * z;
  return f;
}

double FlowRecipe::boundary_pressure(const Point& X, int dim) const {
  switch (kind) {
    case FlowRecipeKind::zero: return 0.0;
    case FlowRecipeKind::equilibrium: return pressure;
    case FlowRecipeKind::generic: break;
  }
  const double z = X[std::size_t(dim - 1)];
  return 1.0 + 0.5 * z + 0.2 * std::cos(kPi * X[0]);
}

double TransportRecipe::source(double, const Point& X, int) const {
  if (kind == TransportRecipeKind::zero) return 0.0;
  return 0.5 * (1.0 + 0.5 * std::cos(2.0 * kPi * X[0]));
}

double TransportRecipe::boundary(double t, const Point& X, int dim) const {
  if (kind == TransportRecipeKind::zero) return 0.0;
  const double z = X[std::size_t(dim - 1)];
  return (1.0 - std::exp(-5.0 * t)) * (1.0 + z) / 2.0;
}

Point macro_point(const LayerGeometry& layer, const Point& x) {
  Point X = x;
  const int v = layer.vertical_axis();
  X[std::size_t(v)] = x[std::size_t(v)] / layer.thickness_half();
  return X;
}

Point cell_point(const LayerGeometry& layer, const Point& x) {
  Point y{0.0, 0.0, 0.0};
  const double inv = 1.0 / layer.eps();
  for (int a = 0; a < layer.grid.dim; ++a) y[std::size_t(a)] = x[std::size_t(a)] * inv;
  return y;
}

VectorFn micro_force(const FlowRecipe& r, const LayerGeometry& layer) {
  const int dim = layer.grid.dim;
  return [r, &layer, dim](const Point& x) { return r.force(macro_point(layer, x), dim); };
}

FieldFn micro_boundary_pressure(const FlowRecipe& r, const LayerGeometry& layer) {
  const double ea = layer.thickness_half();
  const int dim = layer.grid.dim;
  return [r, &layer, ea, dim](const Point& x) { return ea * r.boundary_pressure(macro_point(layer, x), dim); };
}

TimeFieldFn micro_source(const TransportRecipe& r, const LayerGeometry& layer) {
  const int dim = layer.grid.dim;
  return [r, &layer, dim](double t, const Point& x) { return r.source(t, macro_point(layer, x), dim); };
}

TimeFieldFn micro_boundary(const TransportRecipe& r, const LayerGeometry& layer) {
  const int dim = layer.grid.dim;
  return [r, &layer, dim](double t, const Point& x) { return r.boundary(t, macro_point(layer, x), dim); };
}

SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw Error(ErrorCode::InsufficientPoints, "slope fit needs at least three points");
  const double n = double(points.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& [e, v] : points) {
    if (!(e > 0.0) || !(v > 0.0)) throw Error(ErrorCode::NonpositiveValue, "slope fit needs positive eps and values");
    sx += std::log(e);
    sy += std::log(v);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [e, v] : points) {
    const double dx = std::log(e) - mx, dy = std::log(v) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::InsufficientPoints, "slope fit needs distinct eps values");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return fit;
}

namespace {

void check_macro_range(const LayerGeometry& layer, const Point& X) {
  const int v = layer.vertical_axis();
  constexpr double slack = 1e-9;
  bool ok = std::abs(X[std::size_t(v)]) <= 1.0 + slack;
  for (int a = 0; a < v; ++a)
    ok = ok && X[std::size_t(a)] >= layer.base.lo[std::size_t(a)] - slack && X[std::size_t(a)] <= layer.base.hi[std::size_t(a)] + slack;
  if (!ok) throw Error(ErrorCode::SamplerRangeError, "layer point maps outside the macro domain");
}

double finite_or_throw(double v) {
  if (!std::isfinite(v)) throw Error(ErrorCode::SamplerRangeError, "limit sampler returned a non-finite value");
  return v;
}

double ratio(double num, double den) {
  if (den > 0.0) return std::sqrt(num / den);
  return num > 0.0 ? INFINITY : 0.0;
}

}  // namespace

double two_scale_error(const ScalarField& micro, double scale, const LayerGeometry& layer, const TwoScaleLimit& limit) {
  const StructuredGrid& g = micro.grid;
  if (!g.same_shape(layer.grid)) throw Error(ErrorCode::DimensionMismatch, "field is not on the layer grid");
  const double vol = g.cell_volume();
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < g.num_cells(); ++i) {
    if (!micro.active[std::size_t(i)]) continue;
    const Point x = g.cell_center(g.cell_coords(i));
    const Point X = macro_point(layer, x);
    check_macro_range(layer, X);
    const double v0 = finite_or_throw(limit(X, cell_point(layer, x)));
    const double d = scale * micro.values[i] - v0;
    num += vol * d * d;
    den += vol * v0 * v0;
  }
  return ratio(num, den);
}

double two_scale_error(const MacLayout& L, const Eigen::VectorXd& u, double scale, const LayerGeometry& layer,
                       const TwoScaleVectorLimit& limit) {
  const StructuredGrid& g = L.grid;
  if (!g.same_shape(layer.grid)) throw Error(ErrorCode::DimensionMismatch, "layout is not on the layer grid");
  if (u.size() != L.num_velocity()) throw Error(ErrorCode::DimensionMismatch, "velocity vector size mismatch");
  double num = 0.0, den = 0.0;
  for (Index k = 0; k < L.num_velocity(); ++k) {
    const int c = L.dof_component[std::size_t(k)];
    const Point x = g.face_center(c, g.face_coords(c, L.dof_face[std::size_t(k)]));
    const Point X = macro_point(layer, x);
    check_macro_range(layer, X);
    const double v0 = finite_or_throw(limit(c, X, cell_point(layer, x)));
    const double d = scale * u[k] - v0;
    num += L.velocity_mass[k] * d * d;
    den += L.velocity_mass[k] * v0 * v0;
  }
  return ratio(num, den);
}

void SweepPlan::validate() const {
  std::vector<std::string> issues;
  if (dim != 2 && dim != 3) issues.push_back("dimension must be 2 or 3");
  if (dim > 4) issues.push_back("transport requires n <= 4");
  if (cell_resolution < 8) issues.push_back("cell resolution must be at least 8");
  if (eps.size() < 3) issues.push_back("a sweep needs at least three eps values");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    try {
      check_admissible_scales(eps[i], alpha);
    } catch (const Error& e) {
      issues.push_back(std::string("eps = ") + eps[i].str() + ": " + e.what());
    }
    if (i > 0 && !(eps[i] < eps[i - 1])) issues.push_back("eps values must be strictly decreasing");
  }
  try {
    inclusion.validate(dim);
  } catch (const Error& e) {
    issues.push_back(e.what());
  }
  if (!(D > 0.0)) issues.push_back("D must be positive");
  if (!(T > 0.0) || !(dt > 0.0)) issues.push_back("T and dt must be positive");
  for (int a = 0; a < dim - 1; ++a)
    if (macro_columns[std::size_t(a)] < 1) issues.push_back("macro columns must be positive");
  if (macro_vertical_cells < 2) issues.push_back("macro vertical cells must be at least 2");
  if (threads < 1) issues.push_back("threads must be positive");
  if (!issues.empty()) {
    std::string msg;
    for (const auto& s : issues) msg += (msg.empty() ? "" : "; ") + s;
    throw Error(ErrorCode::ValidationError, msg);
  }
}

namespace {

MacroGrid macro_grid(const SweepPlan& p) {
  MacroGrid g;
  g.dim = p.dim;
  g.base = p.base;
  g.columns = {p.macro_columns[0], p.dim == 3 ? p.macro_columns[1] : 1};
  g.vertical_cells = p.macro_vertical_cells;
  return g;
}

}  // namespace

MacroTransportProblem macro_transport_problem(const SweepContext& ctx) {
  const SweepPlan& p = ctx.plan;
  MacroTransportProblem m;
  m.dcase = p.dcase;
  m.Dstar = ctx.Dstar.Dstar;
  m.ubar_n = ctx.darcy.column_flux;
  const double porosity = ctx.cell.fluid_fraction;
  const TransportRecipe r = p.transport;
  const int dim = p.dim;
  m.source = [r, porosity, dim](double t, const Point& X) { return porosity * r.source(t, X, dim); };
  m.boundary = [r, dim](double t, const Point& X) { return r.boundary(t, X, dim); };
  m.porosity = porosity;
  m.T = p.T;
  m.dt = p.dt;
  m.advection = p.advection;
  m.grid = ctx.darcy.grid;
  return m;
}

SweepContext build_sweep_context(const SweepPlan& plan) {
  plan.validate();
  SweepContext ctx;
  ctx.plan = plan;
  ctx.cell = build_unit_cell(plan.inclusion, plan.dim, plan.cell_resolution);
  ctx.cell_stokes = solve_all_cell_stokes(ctx.cell, plan.stokes, plan.threads);
  ctx.K = permeability(ctx.cell_stokes);
  ctx.cell_diffusion = solve_cell_diffusion(ctx.cell, plan.dcase, plan.D, plan.scalar, plan.threads);
  ctx.Dstar = effective_diffusion(ctx.cell_diffusion);

  const FlowRecipe flow = plan.flow;
  const int dim = plan.dim;
  ctx.darcy_problem.K = ctx.K.K;
  ctx.darcy_problem.force = [flow, dim](const Point& X) { return flow.force(X, dim); };
  ctx.darcy_problem.boundary_pressure = [flow, dim](const Point& X) { return flow.boundary_pressure(X, dim); };
  ctx.darcy_problem.grid = macro_grid(plan);
  ctx.darcy = solve_darcy(ctx.darcy_problem);
  if (plan.run_transport) ctx.macro_transport = solve_macro_transport(macro_transport_problem(ctx));
  return ctx;
}

MemberReport run_member(const SweepContext& ctx, const Rational& eps, MemberFields* fields) {
  const SweepPlan& p = ctx.plan;
  auto layer = std::make_shared<LayerGeometry>(build_layer(ctx.cell, eps, p.alpha, p.base));
  const LayerGeometry& L = *layer;
  const double e = L.eps();
  const double ea = L.thickness_half();

  MemberReport r;
  r.eps = eps;
  r.eps_value = e;
  for (int a = 0; a < L.grid.dim; ++a) r.grid[std::size_t(a)] = L.grid.cells[a];
  r.fluid_cells = L.fluid_cells();

  MicroStokesSolution st = solve_micro_stokes(L, micro_force(p.flow, L), micro_boundary_pressure(p.flow, L), p.stokes);
  r.stokes_iterations = st.report.outer_iterations;
  r.divergence_residual = st.report.divergence_residual;
  r.momentum_residual = st.report.momentum_residual;
  r.velocity = weighted_norms(*st.layout, st.velocity);
  const ScalarField pf = st.p();
  r.pressure = weighted_norms(pf);

  // Two-scale limits.
  const int dim = p.dim;
  const FlowRecipe flow = p.flow;
  const NodalField& dnp = ctx.darcy.dn_pressure;
  TwoScaleFlow limit(ctx.cell_stokes, [flow, dim](const Point& X) { return flow.force(X, dim); },
                     [&dnp](const Point& X) { return dnp.sample(X); });
  const double inv_e2 = 1.0 / (e * e);
  r.velocity_error = two_scale_error(*st.layout, st.velocity, inv_e2, L,
                                     [&limit](int c, const Point& X, const Point& y) { return limit.velocity(c, X, y); });
  const VectorField uf = st.u();
  r.velocity_self_error = two_scale_error(*st.layout, st.velocity, inv_e2, L, [&](int c, const Point& X, const Point&) {
    Point x = X;
    x[std::size_t(dim - 1)] *= ea;
    Coord fc{};
    for (int a = 0; a < dim; ++a) {
      const double t = (x[std::size_t(a)] - L.grid.origin[a]) / L.grid.spacing[a] + (a == c ? 0.0 : -0.5);
      const int top = a == c ? L.grid.face_positions(c) - 1 : L.grid.cells[a] - 1;
      fc[a] = std::clamp(int(std::lround(t)), 0, top);
    }
    return inv_e2 * uf.comp[c][L.grid.face_index(c, fc)];
  });
  const NodalField& p0 = ctx.darcy.pressure;
  r.pressure_error = two_scale_error(pf, 1.0 / ea, L, [&p0](const Point& X, const Point&) { return p0.sample(X); });

  const Eigen::VectorXd planes = vertical_plane_flux(st);
  r.micro_column_flux = planes.mean() * inv_e2;
  r.macro_column_flux = ctx.darcy.column_flux.sum() * ctx.darcy.grid.column_area();
  r.column_flux_error = std::abs(r.micro_column_flux - r.macro_column_flux) / std::max(std::abs(r.macro_column_flux), 1e-300);

  std::optional<MicroTransportResult> tr;
  if (p.run_transport && ctx.macro_transport) {
    MicroTransportProblem mp;
    mp.layer = &L;
    mp.dcase = p.dcase;
    mp.D = p.D;
    mp.velocity = &uf;
    mp.source = micro_source(p.transport, L);
    mp.boundary = micro_boundary(p.transport, L);
    mp.T = p.T;
    mp.dt = p.dt;
    mp.advection = p.advection;
    tr = solve_micro_transport(mp);
    const ScalarField& c = tr->snapshots.back();
    const NodalField& c0 = ctx.macro_transport->snapshots.back();
    r.has_transport = true;
    r.concentration = weighted_norms(c);
    r.concentration_error = two_scale_error(c, 1.0, L, [&c0](const Point& X, const Point&) { return c0.sample(X); });
    r.concentration_sup = tr->sup_abs;
    r.transport_ledger = tr->max_ledger_residual;
    r.transport_steps = tr->steps;
    r.cell_peclet = tr->max_cell_peclet;
  }
  if (fields) {
    fields->layer = layer;
    fields->stokes = std::move(st);
    fields->transport = std::move(tr);
  }
  return r;
}

ConvergenceReport scaling_study(const SweepPlan& plan, std::vector<MemberFields>* fields) {
  return scaling_study(build_sweep_context(plan), fields);
}

ConvergenceReport scaling_study(const SweepContext& ctx, std::vector<MemberFields>* fields) {
  const SweepPlan& p = ctx.plan;
  p.validate();
  const std::size_t n = p.eps.size();
  ConvergenceReport rep;
  rep.plan = p;
  rep.K = ctx.K.K;
  rep.Dstar = ctx.Dstar.Dstar;
  rep.porosity = ctx.cell.fluid_fraction;
  rep.members.resize(n);
  std::vector<MemberFields> local(fields ? n : 0);

  // Members are independent; results land in their fixed slot.
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        rep.members[i] = run_member(ctx, p.eps[i], fields ? &local[i] : nullptr);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(p.threads, int(n)));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
  if (fields) *fields = std::move(local);

  const double a = p.alpha.to_double();
  auto slope_check = [&](const std::string& name, double expected, auto value) {
    SlopeCheck s;
    s.quantity = name;
    s.expected = expected;
    std::vector<std::pair<double, double>> pts;
    for (const auto& m : rep.members) pts.emplace_back(m.eps_value, value(m));
    try {
      s.fit = fit_slope(pts);
      s.pass = s.fit.slope >= expected - p.slope_tolerance && s.fit.r2 >= p.min_r2;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonpositiveValue) throw;
      s.degenerate = true;
    }
    rep.slopes.push_back(s);
  };
  slope_check("velocity_l2", 2.0 + a / 2.0, [](const MemberReport& m) { return m.velocity.l2; });
  slope_check("velocity_grad", 1.0 + a / 2.0, [](const MemberReport& m) { return m.velocity.grad; });
  slope_check("pressure_l2", 1.5 * a, [](const MemberReport& m) { return m.pressure.l2; });
  if (p.run_transport) slope_check("concentration_l2", a / 2.0, [](const MemberReport& m) { return m.concentration.l2; });

  auto monotone = [&](const std::string& name, std::optional<double> threshold, auto value) {
    MonotoneCheck c;
    c.quantity = name;
    c.final_threshold = threshold;
    for (const auto& m : rep.members) c.values.push_back(value(m));
    c.strictly_decreasing = true;
    for (std::size_t i = 1; i < c.values.size(); ++i) c.strictly_decreasing = c.strictly_decreasing && c.values[i] < c.values[i - 1];
    c.pass = c.strictly_decreasing && (!threshold || c.values.back() <= *threshold);
    rep.errors.push_back(c);
  };
  monotone("velocity_two_scale", std::nullopt, [](const MemberReport& m) { return m.velocity_error; });
  monotone("pressure_two_scale", 0.25, [](const MemberReport& m) { return m.pressure_error; });
  monotone("column_flux", std::nullopt, [](const MemberReport& m) { return m.column_flux_error; });
  if (p.run_transport) monotone("concentration_two_scale", 0.25, [](const MemberReport& m) { return m.concentration_error; });

  rep.pass = true;
  for (const auto& s : rep.slopes) rep.pass = rep.pass && s.pass;
  for (const auto& c : rep.errors) rep.pass = rep.pass && c.pass;
  return rep;
}

}  // namespace thinlayer
