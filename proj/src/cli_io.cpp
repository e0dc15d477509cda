#include "thinlayer/cli_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "thinlayer/error.hpp"

namespace thinlayer {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "1.0.0";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::ValidationError, "cannot write " + p.string());
  out << bytes;
}

// Typed access to a TOML table that records every problem instead of
// stopping at the first one.
class TableReader {
 public:
  TableReader(const toml::table* t, std::string name, std::vector<std::string>& issues)
      : t_(t), name_(std::move(name)), issues_(issues) {}

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!t_) return;
    const toml::node* n = t_->get(key);
    if (!n) return;
    if constexpr (std::is_same_v<T, double>) {
      if (auto v = n->value<double>()) {
        out = *v;
        return;
      }
    } else if constexpr (std::is_same_v<T, int>) {
      if (auto v = n->value<int64_t>()) {
        out = int(*v);
        return;
      }
    } else if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n->value<bool>()) {
        out = *v;
        return;
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = n->value<std::string>()) {
        out = *v;
        return;
      }
    }
    issues_.push_back(name_ + "." + key + ": wrong type");
  }

  template <class T>
  void get_list(const char* key, std::vector<T>& out) {
    seen_.insert(key);
    if (!t_) return;
    const toml::node* n = t_->get(key);
    if (!n) return;
    const toml::array* arr = n->as_array();
    if (!arr) {
      issues_.push_back(name_ + "." + key + ": expected an array");
      return;
    }
    std::vector<T> vals;
    for (const toml::node& e : *arr) {
      std::optional<T> v;
      if constexpr (std::is_same_v<T, double>)
        v = e.value<double>();
      else if constexpr (std::is_same_v<T, int>) {
        if (auto i = e.value<int64_t>()) v = int(*i);
      } else
        v = e.value<std::string>();
      if (!v) {
        issues_.push_back(name_ + "." + key + ": wrong element type");
        return;
      }
      vals.push_back(*v);
    }
    out = std::move(vals);
  }

  bool has(const char* key) const { return t_ && t_->get(key); }

  void check_unknown() {
    if (!t_) return;
    for (const auto& [k, v] : *t_) {
      (void)v;
      if (!seen_.count(std::string(k.str()))) issues_.push_back("unknown key " + name_ + "." + std::string(k.str()));
    }
  }

 private:
  const toml::table* t_;
  std::string name_;
  std::vector<std::string>& issues_;
  std::set<std::string> seen_;
};

InclusionSpec make_inclusion(const std::string& shape, double radius, const std::vector<double>& half,
                             const std::array<double, 3>& center, std::vector<std::string>& issues) {
  std::array<double, 3> h{0.25, 0.25, 0.25};
  for (std::size_t i = 0; i < std::min<std::size_t>(3, half.size()); ++i) h[i] = half[i];
  if (shape == "none") return InclusionSpec::full_fluid();
  if (shape == "ball") return InclusionSpec::ball(radius, center);
  if (shape == "box") return InclusionSpec::box(h, center);
  if (shape == "cylinder_ball") return InclusionSpec::cylinder_ball(radius, center);
  if (shape == "cylinder_box") return InclusionSpec::cylinder_box(h, center);
  issues.push_back("geometry.inclusion: unknown shape '" + shape + "' (none, ball, box, cylinder_ball, cylinder_box)");
  return InclusionSpec::ball(radius, center);
}

std::string inclusion_shape_name(const InclusionSpec& s) {
  switch (s.shape) {
    case InclusionShape::none: return "none";
    case InclusionShape::ball: return "ball";
    case InclusionShape::box: return "box";
    case InclusionShape::cylinder: return s.section == CrossSection::ball ? "cylinder_ball" : "cylinder_box";
  }
  return "none";
}

}  // namespace

SweepPlan RunConfig::sweep_plan() const {
  SweepPlan p;
  p.dim = geometry.dim;
  p.inclusion = geometry.inclusion;
  p.cell_resolution = geometry.micro_resolution;
  p.alpha = scales.alpha;
  p.eps = scales.eps;
  p.base = scales.base;
  p.dcase = physics.dcase;
  p.D = physics.D;
  p.flow = physics.flow;
  p.transport = physics.transport;
  p.run_transport = physics.transport_enabled;
  p.T = physics.T;
  p.dt = physics.dt;
  p.advection = solver.advection;
  p.macro_columns = solver.macro_columns;
  p.macro_vertical_cells = solver.macro_vertical_cells;
  p.stokes = saddle_options();
  p.scalar = scalar_options();
  p.threads = solver.threads;
  return p;
}

MacroGrid RunConfig::macro_grid() const {
  MacroGrid g;
  g.dim = geometry.dim;
  g.base = scales.base;
  g.columns = {solver.macro_columns[0], geometry.dim == 3 ? solver.macro_columns[1] : 1};
  g.vertical_cells = solver.macro_vertical_cells;
  return g;
}

SaddleOptions RunConfig::saddle_options() const {
  SaddleOptions o;
  o.tol = solver.stokes_tol;
  o.max_outer = solver.stokes_max_outer;
  o.inner = solver.inner;
  return o;
}

SolverOptions RunConfig::scalar_options() const { return {solver.scalar_tol, solver.scalar_max_iter}; }

std::vector<std::string> validation_issues(const RunConfig& c) {
  std::vector<std::string> issues;
  const int n = c.geometry.dim;
  if (n != 2 && n != 3) issues.push_back("geometry.dim must be 2 or 3");
  if (n > 4) issues.push_back("geometry.dim: transport requires n <= 4");
  if (n == 2 || n == 3) {
    try {
      c.geometry.inclusion.validate(n);
    } catch (const Error& e) {
      issues.push_back(std::string("geometry.inclusion: ") + e.what());
    }
  }
  if (c.geometry.cell_resolution < 8) issues.push_back("geometry.cell_resolution must be at least 8");
  if (c.geometry.micro_resolution < 8) issues.push_back("geometry.micro_resolution must be at least 8");
  if (c.scales.eps.size() < 3) issues.push_back("scales.eps: a sweep needs at least three values");
  for (std::size_t i = 0; i < c.scales.eps.size(); ++i) {
    try {
      check_admissible_scales(c.scales.eps[i], c.scales.alpha);
    } catch (const Error& e) {
      issues.push_back("scales.eps[" + std::to_string(i) + "] = " + c.scales.eps[i].str() + " is not admissible: " + e.what());
    }
    if (i > 0 && !(c.scales.eps[i] < c.scales.eps[i - 1])) issues.push_back("scales.eps must be strictly decreasing");
  }
  for (int a = 0; a < n - 1 && a < 2; ++a)
    if (c.scales.base.hi[std::size_t(a)] <= c.scales.base.lo[std::size_t(a)]) issues.push_back("scales.base: hi must exceed lo");
  if (!(c.physics.D > 0.0)) issues.push_back("physics.D must be positive");
  if (!(c.physics.T > 0.0)) issues.push_back("physics.T must be positive");
  if (!(c.physics.dt > 0.0) || c.physics.dt > c.physics.T) issues.push_back("physics.dt must lie in (0, T]");
  if (c.physics.lateral != "periodic" && c.physics.lateral != "neumann")
    issues.push_back("physics.lateral must be periodic or neumann");
  if (c.physics.dcase == DiffusionCase::D2 && c.physics.lateral == "neumann")
    issues.push_back("physics.lateral: case D2 requires a periodic lateral boundary for the concentration");
  if (c.physics.dcase == DiffusionCase::D1 && c.physics.lateral == "periodic")
    issues.push_back("physics.lateral: case D1 uses zero-flux lateral walls (neumann)");
  for (double t : c.output.snapshot_times)
    if (t < 0.0 || t > c.physics.T) issues.push_back("output.snapshot_times must lie in [0, T]");
  if (!(c.solver.stokes_tol > 0.0) || !(c.solver.scalar_tol > 0.0)) issues.push_back("solver tolerances must be positive");
  if (c.solver.stokes_max_outer < 1 || c.solver.scalar_max_iter < 1) issues.push_back("solver iteration limits must be positive");
  if (!(c.solver.theta >= 0.5 && c.solver.theta <= 1.0)) issues.push_back("solver.theta must lie in [1/2, 1]");
  if (c.solver.macro_columns[0] < 1 || (n == 3 && c.solver.macro_columns[1] < 1)) issues.push_back("solver.macro_columns must be positive");
  if (c.solver.macro_vertical_cells < 2) issues.push_back("solver.macro_vertical_cells must be at least 2");
  if (c.solver.threads < 1) issues.push_back("solver.threads must be positive");
  return issues;
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw Error(ErrorCode::ParseError, os.str());
  }
  RunConfig c;
  std::vector<std::string> issues;
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (key != "geometry" && key != "scales" && key != "physics" && key != "solver" && key != "output")
      issues.push_back("unknown section " + key);
    else if (!v.is_table())
      issues.push_back(key + " must be a table");
  }

  {
    TableReader r(root["geometry"].as_table(), "geometry", issues);
    r.get("dim", c.geometry.dim);
    std::string shape = "ball";
    double radius = 0.25;
    std::vector<double> half, center{0.5, 0.5, 0.5};
    r.get("inclusion", shape);
    r.get("radius", radius);
    r.get_list("half_widths", half);
    r.get_list("center", center);
    std::array<double, 3> ctr{0.5, 0.5, 0.5};
    for (std::size_t i = 0; i < std::min<std::size_t>(3, center.size()); ++i) ctr[i] = center[i];
    c.geometry.inclusion = make_inclusion(shape, radius, half, ctr, issues);
    r.get("cell_resolution", c.geometry.cell_resolution);
    r.get("micro_resolution", c.geometry.micro_resolution);
    r.check_unknown();
  }
  {
    TableReader r(root["scales"].as_table(), "scales", issues);
    std::string alpha = c.scales.alpha.str();
    r.get("alpha", alpha);
    try {
      c.scales.alpha = Rational::parse(alpha);
    } catch (const Error& e) {
      issues.push_back(std::string("scales.alpha: ") + e.what());
    }
    std::vector<std::string> eps;
    r.get_list("eps", eps);
    if (r.has("eps")) {
      c.scales.eps.clear();
      for (const auto& e : eps) {
        try {
          c.scales.eps.push_back(Rational::parse(e));
        } catch (const Error& err) {
          issues.push_back("scales.eps: " + std::string(err.what()));
        }
      }
    }
    std::vector<int> lo{0, 0}, hi{1, 1};
    r.get_list("base_lo", lo);
    r.get_list("base_hi", hi);
    for (std::size_t i = 0; i < 2; ++i) {
      if (i < lo.size()) c.scales.base.lo[i] = lo[i];
      if (i < hi.size()) c.scales.base.hi[i] = hi[i];
    }
    r.check_unknown();
  }
  {
    TableReader r(root["physics"].as_table(), "physics", issues);
    r.get("D", c.physics.D);
    std::string dcase = to_string(c.physics.dcase);
    r.get("case", dcase);
    try {
      c.physics.dcase = parse_diffusion_case(dcase);
    } catch (const Error& e) {
      issues.push_back(std::string("physics.case: ") + e.what());
    }
    c.physics.lateral = c.physics.dcase == DiffusionCase::D2 ? "periodic" : "neumann";
    r.get("lateral", c.physics.lateral);
    r.get("T", c.physics.T);
    r.get("dt", c.physics.dt);
    std::string flow = "generic", transport = "generic";
    r.get("flow_recipe", flow);
    r.get("transport_recipe", transport);
    r.get("equilibrium_pressure", c.physics.flow.pressure);
    r.get("transport", c.physics.transport_enabled);
    try {
      c.physics.flow.kind = parse_flow_recipe(flow);
    } catch (const Error& e) {
      issues.push_back(std::string("physics.flow_recipe: ") + e.what());
    }
    try {
      c.physics.transport.kind = parse_transport_recipe(transport);
    } catch (const Error& e) {
      issues.push_back(std::string("physics.transport_recipe: ") + e.what());
    }
    r.check_unknown();
  }
  {
    TableReader r(root["solver"].as_table(), "solver", issues);
    r.get("stokes_tol", c.solver.stokes_tol);
    r.get("stokes_max_outer", c.solver.stokes_max_outer);
    std::string inner = "direct", advection = "upwind";
    r.get("inner", inner);
    if (inner == "direct")
      c.solver.inner = InnerSolver::direct;
    else if (inner == "cg")
      c.solver.inner = InnerSolver::cg;
    else
      issues.push_back("solver.inner must be direct or cg");
    r.get("scalar_tol", c.solver.scalar_tol);
    r.get("scalar_max_iter", c.solver.scalar_max_iter);
    r.get("advection", advection);
    if (advection == "upwind")
      c.solver.advection = Advection::upwind;
    else if (advection == "central")
      c.solver.advection = Advection::central;
    else
      issues.push_back("solver.advection must be upwind or central");
    r.get("theta", c.solver.theta);
    std::vector<int> cols;
    r.get_list("macro_columns", cols);
    for (std::size_t i = 0; i < std::min<std::size_t>(2, cols.size()); ++i) c.solver.macro_columns[i] = cols[i];
    r.get("macro_vertical_cells", c.solver.macro_vertical_cells);
    r.get("threads", c.solver.threads);
    r.check_unknown();
  }
  {
    TableReader r(root["output"].as_table(), "output", issues);
    r.get("dir", c.output.dir);
    std::string format = "csv";
    r.get("field_format", format);
    if (format == "csv")
      c.output.field_format = FieldFormat::csv;
    else if (format == "binary")
      c.output.field_format = FieldFormat::binary;
    else
      issues.push_back("output.field_format must be csv or binary");
    r.get("dump_fields", c.output.dump_fields);
    r.get_list("snapshot_times", c.output.snapshot_times);
    r.check_unknown();
  }

  for (auto& s : validation_issues(c)) issues.push_back(std::move(s));
  if (!issues.empty()) {
    std::string msg = std::to_string(issues.size()) + " problem(s) in " + source + ":";
    for (const auto& s : issues) msg += "\n  - " + s;
    throw Error(ErrorCode::ValidationError, msg);
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::ParseError, "config file not found: " + path.string());
  return parse_config(read_file(path), path.string());
}

Json to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Json to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Json to_json(const NormRecord& n) {
  return Json{{"l2", n.l2}, {"grad", n.grad}, {"grad_horizontal", n.grad_horizontal}, {"grad_vertical", n.grad_vertical},
              {"linf", n.linf}};
}

Json to_json(const RunConfig& c) {
  Json j;
  const auto& g = c.geometry;
  std::vector<double> center(g.inclusion.center.begin(), g.inclusion.center.end());
  std::vector<double> size(g.inclusion.size.begin(), g.inclusion.size.end());
  j["geometry"] = {{"dim", g.dim},
                   {"inclusion", inclusion_shape_name(g.inclusion)},
                   {"inclusion_size", size},
                   {"center", center},
                   {"cell_resolution", g.cell_resolution},
                   {"micro_resolution", g.micro_resolution}};
  Json eps = Json::array();
  for (const auto& e : c.scales.eps) eps.push_back(e.str());
  j["scales"] = {{"alpha", c.scales.alpha.str()},
                 {"eps", eps},
                 {"base_lo", {c.scales.base.lo[0], c.scales.base.lo[1]}},
                 {"base_hi", {c.scales.base.hi[0], c.scales.base.hi[1]}}};
  j["physics"] = {{"D", c.physics.D},
                  {"case", to_string(c.physics.dcase)},
                  {"lateral", c.physics.lateral},
                  {"T", c.physics.T},
                  {"dt", c.physics.dt},
                  {"flow_recipe", to_string(c.physics.flow.kind)},
                  {"equilibrium_pressure", c.physics.flow.pressure},
                  {"transport_recipe", to_string(c.physics.transport.kind)},
                  {"transport", c.physics.transport_enabled}};
  j["solver"] = {{"stokes_tol", c.solver.stokes_tol},
                 {"stokes_max_outer", c.solver.stokes_max_outer},
                 {"inner", c.solver.inner == InnerSolver::direct ? "direct" : "cg"},
                 {"scalar_tol", c.solver.scalar_tol},
                 {"scalar_max_iter", c.solver.scalar_max_iter},
                 {"advection", c.solver.advection == Advection::upwind ? "upwind" : "central"},
                 {"theta", c.solver.theta},
                 {"macro_columns", {c.solver.macro_columns[0], c.solver.macro_columns[1]}},
                 {"macro_vertical_cells", c.solver.macro_vertical_cells},
                 {"threads", c.solver.threads}};
  j["output"] = {{"dir", c.output.dir},
                 {"field_format", c.output.field_format == FieldFormat::csv ? "csv" : "binary"},
                 {"dump_fields", c.output.dump_fields},
                 {"snapshot_times", c.output.snapshot_times}};
  return j;
}

Json to_json(const ConvergenceReport& rep) {
  const SweepPlan& p = rep.plan;
  Json j;
  Json eps = Json::array();
  for (const auto& e : p.eps) eps.push_back(e.str());
  j["plan"] = {{"dim", p.dim},
               {"inclusion", p.inclusion.describe()},
               {"micro_resolution", p.cell_resolution},
               {"alpha", p.alpha.str()},
               {"eps", eps},
               {"case", to_string(p.dcase)},
               {"D", p.D},
               {"flow_recipe", to_string(p.flow.kind)},
               {"transport_recipe", to_string(p.transport.kind)},
               {"transport", p.run_transport},
               {"T", p.T},
               {"dt", p.dt},
               {"macro_vertical_cells", p.macro_vertical_cells},
               {"slope_tolerance", p.slope_tolerance},
               {"min_r2", p.min_r2}};
  j["K"] = to_json(rep.K);
  j["Dstar"] = to_json(rep.Dstar);
  j["porosity"] = rep.porosity;
  Json members = Json::array();
  for (const auto& m : rep.members) {
    Json mj{{"eps", m.eps.str()},
            {"eps_value", m.eps_value},
            {"grid", {m.grid[0], m.grid[1], m.grid[2]}},
            {"fluid_cells", m.fluid_cells},
            {"velocity", to_json(m.velocity)},
            {"pressure", to_json(m.pressure)},
            {"stokes_iterations", m.stokes_iterations},
            {"divergence_residual", m.divergence_residual},
            {"momentum_residual", m.momentum_residual},
            {"velocity_two_scale_error", m.velocity_error},
            {"velocity_self_error", m.velocity_self_error},
            {"pressure_two_scale_error", m.pressure_error},
            {"micro_column_flux", m.micro_column_flux},
            {"macro_column_flux", m.macro_column_flux},
            {"column_flux_error", m.column_flux_error}};
    if (m.has_transport) {
      mj["concentration"] = to_json(m.concentration);
      mj["concentration_two_scale_error"] = m.concentration_error;
      mj["concentration_sup"] = m.concentration_sup;
      mj["transport_ledger"] = m.transport_ledger;
      mj["transport_steps"] = m.transport_steps;
      mj["cell_peclet"] = m.cell_peclet;
    }
    members.push_back(mj);
  }
  j["members"] = members;
  Json slopes = Json::array();
  for (const auto& s : rep.slopes) {
    Json sj{{"quantity", s.quantity}, {"expected", s.expected}, {"degenerate", s.degenerate}};
    if (!s.degenerate) sj.update({{"slope", s.fit.slope}, {"intercept", s.fit.intercept}, {"r2", s.fit.r2}});
    sj["pass"] = s.pass;
    slopes.push_back(sj);
  }
  j["slopes"] = slopes;
  Json errors = Json::array();
  for (const auto& c : rep.errors) {
    Json cj{{"quantity", c.quantity}, {"values", c.values}, {"strictly_decreasing", c.strictly_decreasing}};
    cj["final_threshold"] = c.final_threshold ? Json(*c.final_threshold) : Json(nullptr);
    cj["pass"] = c.pass;
    errors.push_back(cj);
  }
  j["two_scale_errors"] = errors;
  j["pass"] = rep.pass;
  return j;
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::ValidationError, "SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::vector<fs::path> write_field(const ScalarField& f, const fs::path& stem, FieldFormat format) {
  const StructuredGrid& g = f.grid;
  if (format == FieldFormat::csv) {
    std::string s;
    const char* names[3] = {"x1", "x2", "x3"};
    for (int a = 0; a < g.dim; ++a) s += std::string(names[a]) + ",";
    s += "value\n";
    for (Index i = 0; i < g.num_cells(); ++i) {
      if (!f.active[std::size_t(i)]) continue;
      const Point x = g.cell_center(g.cell_coords(i));
      for (int a = 0; a < g.dim; ++a) s += fmt(x[std::size_t(a)]) + ",";
      s += fmt(f.values[i]) + "\n";
    }
    fs::path p = stem;
    p += ".csv";
    write_file(p, s);
    return {p};
  }
  std::string bytes(std::size_t(g.num_cells()) * sizeof(double), '\0');
  for (Index i = 0; i < g.num_cells(); ++i) {
    const double v = f.active[std::size_t(i)] ? f.values[i] : std::nan("");
    std::memcpy(bytes.data() + std::size_t(i) * sizeof(double), &v, sizeof(double));
  }
  fs::path bin = stem, hdr = stem;
  bin += ".bin";
  hdr += ".json";
  write_file(bin, bytes);
  Json h{{"format", "float64 little-endian, x fastest, inactive cells NaN"},
         {"dim", g.dim},
         {"cells", {g.cells[0], g.cells[1], g.cells[2]}},
         {"origin", {g.origin[0], g.origin[1], g.origin[2]}},
         {"spacing", {g.spacing[0], g.spacing[1], g.spacing[2]}},
         {"data", bin.filename().string()}};
  write_file(hdr, dump_json(h));
  return {bin, hdr};
}

std::string convergence_csv(const ConvergenceReport& rep) {
  std::string s = "eps,quantity,value,reference\n";
  for (const auto& sc : rep.slopes) {
    if (sc.degenerate) continue;
    for (const auto& m : rep.members) {
      double v = 0.0;
      if (sc.quantity == "velocity_l2") v = m.velocity.l2;
      if (sc.quantity == "velocity_grad") v = m.velocity.grad;
      if (sc.quantity == "pressure_l2") v = m.pressure.l2;
      if (sc.quantity == "concentration_l2") v = m.concentration.l2;
      // Reference line C eps^expected through the first point.
      const double c0 = std::exp(sc.fit.intercept);
      s += fmt(m.eps_value) + "," + sc.quantity + "," + fmt(v) + "," + fmt(c0 * std::pow(m.eps_value, sc.expected) *
                                                                             std::pow(rep.members.front().eps_value, sc.fit.slope - sc.expected)) + "\n";
    }
  }
  for (const auto& c : rep.errors)
    for (std::size_t i = 0; i < c.values.size(); ++i) s += fmt(rep.members[i].eps_value) + "," + c.quantity + "," + fmt(c.values[i]) + ",\n";
  return s;
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::cell: return "cell";
    case Stage::effective: return "effective";
    case Stage::darcy: return "darcy";
    case Stage::transport: return "transport";
    case Stage::micro: return "micro";
    case Stage::converge: return "converge";
    case Stage::report: return "report";
  }
  return "cell";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::cell, Stage::effective, Stage::darcy, Stage::transport,
                                    Stage::micro, Stage::converge, Stage::report};
  return s;
}

Stage parse_stage(const std::string& text) {
  for (Stage s : all_stages())
    if (to_string(s) == text) return s;
  throw Error(ErrorCode::ValidationError, "unknown stage '" + text + "'");
}

namespace {

std::vector<Stage> dependencies(Stage s) {
  switch (s) {
    case Stage::darcy: return {Stage::cell};
    case Stage::transport: return {Stage::effective, Stage::darcy};
    default: return {};
  }
}

}  // namespace

std::vector<Stage> resolve_stages(const std::set<Stage>& requested) {
  std::set<Stage> closed;
  std::function<void(Stage)> add = [&](Stage s) {
    if (!closed.insert(s).second) return;
    for (Stage d : dependencies(s)) add(d);
  };
  for (Stage s : requested) add(s);
  std::vector<Stage> order;
  for (Stage s : all_stages())
    if (closed.count(s)) order.push_back(s);
  return order;
}

Json RunManifest::to_json() const {
  Json j;
  j["tool"] = "thinlayer";
  j["version"] = kVersion;
  j["config"] = config;
  Json st = Json::array();
  for (const auto& s : stages) {
    Json sj{{"stage", thinlayer::to_string(s.stage)}, {"status", s.status}, {"cache_hit", s.cache_hit}, {"cache_key", s.cache_key},
            {"seconds", s.seconds}, {"files", s.files}};
    if (!s.error.empty()) sj.update({{"error_code", s.error_code}, {"error", s.error}});
    st.push_back(sj);
  }
  j["stages"] = st;
  Json files = Json::array();
  for (const auto& [path, sum] : checksums) files.push_back({{"path", path}, {"sha256", sum}, {"bytes", sizes.at(path)}});
  j["files"] = files;
  j["acceptance_pass"] = acceptance_pass;
  j["solver_failure"] = solver_failure;
  return j;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first
// failure in index order.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> failures(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::max(1, std::min<int>(threads, int(n))); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& f : failures)
    if (f) std::rethrow_exception(f);
}

Json read_json(const fs::path& p) {
  if (!fs::exists(p)) throw Error(ErrorCode::ValidationError, "missing upstream artefact " + p.filename().string());
  return Json::parse(read_file(p));
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const Eigen::Index r = Eigen::Index(j.size()), c = r ? Eigen::Index(j[0].size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = j[std::size_t(i)][std::size_t(k)].get<double>();
  return m;
}

struct StageContext {
  const RunConfig& cfg;
  fs::path out;
  int threads;
};

std::vector<std::string> stage_cell(const StageContext& s) {
  const RunConfig& c = s.cfg;
  const UnitCellGeometry cell = build_unit_cell(c.geometry.inclusion, c.geometry.dim, c.geometry.cell_resolution);
  const auto sols = solve_all_cell_stokes(cell, c.saddle_options(), s.threads);
  const PermeabilityTensor K = permeability(sols);
  Json solves = Json::array();
  for (const auto& sol : sols)
    solves.push_back({{"axis", sol.axis},
                      {"outer_iterations", sol.report.outer_iterations},
                      {"divergence_residual", sol.report.divergence_residual},
                      {"momentum_residual", sol.report.momentum_residual}});
  Json j{{"stage", "cell"},
         {"dim", cell.dim},
         {"resolution", cell.resolution},
         {"inclusion", c.geometry.inclusion.describe()},
         {"fluid_fraction", cell.fluid_fraction},
         {"K", to_json(K.K)},
         {"K_flux", to_json(K.K_flux)},
         {"formula_discrepancy", K.formula_discrepancy},
         {"symmetry_error", K.symmetry_error},
         {"eigenvalues", to_json(K.eigenvalues)},
         {"solves", solves}};
  write_file(s.out / "cell.json", dump_json(j));
  return {"cell.json"};
}

std::vector<std::string> stage_effective(const StageContext& s) {
  const RunConfig& c = s.cfg;
  const UnitCellGeometry cell = build_unit_cell(c.geometry.inclusion, c.geometry.dim, c.geometry.cell_resolution);
  const CellDiffusionSolutions sol = solve_cell_diffusion(cell, c.physics.dcase, c.physics.D, c.scalar_options(), s.threads);
  const EffectiveDiffusion eff = effective_diffusion(sol);
  Json correctors = Json::array();
  for (const auto& h : sol.horizontal)
    correctors.push_back({{"axis", h.axis}, {"iterations", h.report.iterations}, {"groups", h.groups}, {"disconnected_slab", h.disconnected_slab}});
  if (sol.vertical_full)
    correctors.push_back({{"axis", sol.vertical_full->axis}, {"iterations", sol.vertical_full->report.iterations}, {"groups", 1}});
  Json j{{"stage", "effective"},
         {"case", to_string(eff.dcase)},
         {"D", eff.D},
         {"porosity", cell.fluid_fraction},
         {"Dstar", to_json(eff.Dstar)},
         {"Dstar_dual", to_json(eff.Dstar_dual)},
         {"formula_discrepancy", eff.formula_discrepancy},
         {"correctors", correctors}};
  if (sol.vertical_1d) j["vertical_profile_discrepancy"] = sol.vertical_1d->fd_discrepancy;
  write_file(s.out / "effective.json", dump_json(j));
  return {"effective.json"};
}

std::vector<std::string> stage_darcy(const StageContext& s) {
  const RunConfig& c = s.cfg;
  const Json cell = read_json(s.out / "cell.json");
  DarcyProblem P;
  P.K = matrix_from_json(cell["K"]);
  const FlowRecipe flow = c.physics.flow;
  const int dim = c.geometry.dim;
  P.force = [flow, dim](const Point& X) { return flow.force(X, dim); };
  P.boundary_pressure = [flow, dim](const Point& X) { return flow.boundary_pressure(X, dim); };
  P.grid = c.macro_grid();
  const DarcySolution sol = solve_darcy(P);
  const DarcyDiagnostics d = verify_darcy(P, sol);
  Json j{{"stage", "darcy"},
         {"K", cell["K"]},
         {"columns", P.grid.num_columns()},
         {"vertical_cells", P.grid.vertical_cells},
         {"column_flux", to_json(sol.column_flux)},
         {"mean_column_flux", sol.column_flux.mean()},
         {"p0_min", sol.pressure.values.minCoeff()},
         {"p0_max", sol.pressure.values.maxCoeff()},
         {"diagnostics",
          {{"max_flux_variation", d.max_flux_variation}, {"boundary_mismatch", d.boundary_mismatch}, {"threshold", d.threshold}, {"violation", d.violation}}}};
  write_file(s.out / "darcy.json", dump_json(j));
  std::string csv = dim == 3 ? "column,x1,x2,x_n,p0,u1,u2,u3\n" : "column,x1,x_n,p0,u1,u2\n";
  for (int col = 0; col < P.grid.num_columns(); ++col)
    for (int k = 0; k < P.grid.num_nodes(); ++k) {
      const Point X = P.grid.point(col, k);
      csv += std::to_string(col);
      for (int a = 0; a < dim; ++a) csv += "," + fmt(X[std::size_t(a)]);
      csv += "," + fmt(sol.pressure.at(col, k));
      for (int a = 0; a < dim; ++a) csv += "," + fmt(sol.velocity[std::size_t(a)].at(col, k));
      csv += "\n";
    }
  write_file(s.out / "darcy.csv", csv);
  return {"darcy.json", "darcy.csv"};
}

std::vector<std::string> stage_transport(const StageContext& s) {
  const RunConfig& c = s.cfg;
  const Json eff = read_json(s.out / "effective.json");
  const Json darcy = read_json(s.out / "darcy.json");
  MacroTransportProblem P;
  P.dcase = c.physics.dcase;
  P.Dstar = matrix_from_json(eff["Dstar"]);
  const auto flux = darcy["column_flux"].get<std::vector<double>>();
  P.ubar_n = Eigen::Map<const Eigen::VectorXd>(flux.data(), Eigen::Index(flux.size()));
  const double porosity = eff["porosity"].get<double>();
  const TransportRecipe r = c.physics.transport;
  const int dim = c.geometry.dim;
  P.source = [r, porosity, dim](double t, const Point& X) { return porosity * r.source(t, X, dim); };
  P.boundary = [r, dim](double t, const Point& X) { return r.boundary(t, X, dim); };
  P.porosity = porosity;
  P.T = c.physics.T;
  P.dt = c.physics.dt;
  P.theta = c.solver.theta;
  P.advection = c.solver.advection;
  P.snapshot_times = c.output.snapshot_times;
  P.grid = c.macro_grid();
  const MacroTransportSolution sol = solve_macro_transport(P);
  Json snaps = Json::array();
  std::string csv = dim == 3 ? "t,column,x1,x2,x_n,c0\n" : "t,column,x1,x_n,c0\n";
  for (std::size_t k = 0; k < sol.snapshots.size(); ++k) {
    const NodalField& f = sol.snapshots[k];
    snaps.push_back({{"t", sol.times[k]}, {"mean", f.values.mean()}, {"min", f.values.minCoeff()}, {"max", f.values.maxCoeff()}});
    for (int col = 0; col < P.grid.num_columns(); ++col)
      for (int j = 0; j < P.grid.num_nodes(); ++j) {
        const Point X = P.grid.point(col, j);
        csv += fmt(sol.times[k]) + "," + std::to_string(col);
        for (int a = 0; a < dim; ++a) csv += "," + fmt(X[std::size_t(a)]);
        csv += "," + fmt(f.at(col, j)) + "\n";
      }
  }
  Json j{{"stage", "transport"},
         {"case", to_string(P.dcase)},
         {"steps", sol.steps},
         {"max_ledger_residual", sol.max_ledger_residual},
         {"inflow_bottom", sol.inflow_bottom},
         {"outflow_top", sol.outflow_top},
         {"source_integral", sol.source_integral},
         {"min", sol.min_value},
         {"max", sol.max_value},
         {"hull", {sol.hull_lo, sol.hull_hi}},
         {"hull_violation", sol.hull_violation},
         {"nonphysical_negativity", sol.nonphysical_negativity},
         {"snapshots", snaps}};
  write_file(s.out / "transport.json", dump_json(j));
  write_file(s.out / "transport.csv", csv);
  return {"transport.json", "transport.csv"};
}

ScalarField cell_average(const VectorField& u, int comp, const Mask& fluid) {
  const StructuredGrid& g = u.grid;
  ScalarField f(g, fluid);
  for (Index i = 0; i < g.num_cells(); ++i) {
    if (!fluid[std::size_t(i)]) continue;
    const Coord x = g.cell_coords(i);
    Coord up = x;
    up[comp] += 1;
    if (up[comp] == g.cells[comp] && g.periodic(comp)) up[comp] = 0;
    f.values[i] = 0.5 * (u.comp[comp][g.face_index(comp, x)] + u.comp[comp][g.face_index(comp, up)]);
  }
  return f;
}

std::vector<std::string> stage_micro(const StageContext& s) {
  const RunConfig& c = s.cfg;
  const UnitCellGeometry cell = build_unit_cell(c.geometry.inclusion, c.geometry.dim, c.geometry.micro_resolution);
  const std::size_t n = c.scales.eps.size();
  std::vector<Json> rows(n);
  std::vector<std::vector<std::string>> dumped(n);
  parallel_for(n, s.threads, [&](std::size_t i) {
    const LayerGeometry layer = build_layer(cell, c.scales.eps[i], c.scales.alpha, c.scales.base);
    const MicroStokesSolution st =
        solve_micro_stokes(layer, micro_force(c.physics.flow, layer), micro_boundary_pressure(c.physics.flow, layer), c.saddle_options());
    const double e = layer.eps();
    const Eigen::VectorXd planes = vertical_plane_flux(st) / (e * e);
    const ScalarField p = st.p();
    const VectorField u = st.u();
    Json row{{"eps", c.scales.eps[i].str()},
             {"grid", {layer.grid.cells[0], layer.grid.cells[1], layer.grid.cells[2]}},
             {"fluid_cells", layer.fluid_cells()},
             {"velocity", to_json(weighted_norms(*st.layout, st.velocity))},
             {"pressure", to_json(weighted_norms(p))},
             {"outer_iterations", st.report.outer_iterations},
             {"divergence_residual", st.report.divergence_residual},
             {"momentum_residual", st.report.momentum_residual},
             {"scaled_plane_flux_mean", planes.mean()},
             {"scaled_plane_flux_variation", planes.maxCoeff() - planes.minCoeff()}};
    const std::string tag = "micro_eps" + std::to_string(c.scales.eps[i].den);
    auto dump = [&](const ScalarField& f, const std::string& name) {
      for (const auto& path : write_field(f, s.out / (tag + "_" + name), c.output.field_format))
        dumped[i].push_back(path.filename().string());
    };
    if (c.output.dump_fields) {
      dump(p, "pressure");
      for (int a = 0; a < layer.grid.dim; ++a) dump(cell_average(u, a, layer.fluid), "velocity" + std::to_string(a + 1));
    }
    if (c.physics.transport_enabled) {
      MicroTransportProblem mp;
      mp.layer = &layer;
      mp.dcase = c.physics.dcase;
      mp.D = c.physics.D;
      mp.velocity = &u;
      mp.source = micro_source(c.physics.transport, layer);
      mp.boundary = micro_boundary(c.physics.transport, layer);
      mp.T = c.physics.T;
      mp.dt = c.physics.dt;
      mp.advection = c.solver.advection;
      mp.snapshot_times = c.output.snapshot_times;
      const MicroTransportResult tr = solve_micro_transport(mp);
      row["transport"] = {{"steps", tr.steps},
                          {"max_ledger_residual", tr.max_ledger_residual},
                          {"sup_abs", tr.sup_abs},
                          {"max_cell_peclet", tr.max_cell_peclet},
                          {"cfl_warning", tr.cfl_warning},
                          {"final", to_json(weighted_norms(tr.snapshots.back()))}};
      if (c.output.dump_fields)
        for (std::size_t k = 0; k < tr.snapshots.size(); ++k) dump(tr.snapshots[k], "concentration_t" + std::to_string(k));
    }
    rows[i] = row;
  });
  Json members = Json::array();
  std::vector<std::string> files{"micro.json"};
  for (std::size_t i = 0; i < n; ++i) {
    members.push_back(rows[i]);
    files.insert(files.end(), dumped[i].begin(), dumped[i].end());
  }
  write_file(s.out / "micro.json", dump_json(Json{{"stage", "micro"}, {"members", members}}));
  return files;
}

std::vector<std::string> stage_converge(const StageContext& s) {
  SweepPlan plan = s.cfg.sweep_plan();
  plan.threads = s.threads;
  const ConvergenceReport rep = scaling_study(plan);
  write_file(s.out / "convergence.json", dump_json(to_json(rep)));
  write_file(s.out / "convergence.csv", convergence_csv(rep));
  return {"convergence.json", "convergence.csv"};
}

std::vector<std::string> stage_report(const StageContext& s, bool& pass) {
  Json checks = Json::array();
  auto check = [&](const std::string& name, bool ok, Json detail) {
    checks.push_back({{"check", name}, {"pass", ok}, {"detail", std::move(detail)}});
    pass = pass && ok;
  };
  if (fs::exists(s.out / "cell.json")) {
    const Json j = read_json(s.out / "cell.json");
    double min_eig = INFINITY;
    for (const auto& e : j["eigenvalues"]) min_eig = std::min(min_eig, e.get<double>());
    check("permeability_dual_formula", j["formula_discrepancy"].get<double>() <= 1e-5, j["formula_discrepancy"]);
    check("permeability_symmetric", j["symmetry_error"].get<double>() <= 1e-8, j["symmetry_error"]);
    check("permeability_positive_definite", min_eig > 0.0, min_eig);
  }
  if (fs::exists(s.out / "effective.json")) {
    const Json j = read_json(s.out / "effective.json");
    check("effective_diffusion_dual_formula", j["formula_discrepancy"].get<double>() <= 1e-6, j["formula_discrepancy"]);
  }
  if (fs::exists(s.out / "darcy.json")) {
    const Json j = read_json(s.out / "darcy.json");
    check("darcy_vertical_flux_constant", !j["diagnostics"]["violation"].get<bool>(), j["diagnostics"]);
  }
  if (fs::exists(s.out / "transport.json")) {
    const Json j = read_json(s.out / "transport.json");
    check("macro_transport_ledger", j["max_ledger_residual"].get<double>() <= 1e-8, j["max_ledger_residual"]);
    check("macro_transport_nonnegative", !j["nonphysical_negativity"].get<bool>(), j["min"]);
  }
  if (fs::exists(s.out / "micro.json")) {
    const Json j = read_json(s.out / "micro.json");
    for (const auto& m : j["members"]) {
      const std::string tag = "eps=" + m["eps"].get<std::string>();
      check("micro_stokes_divergence " + tag, m["divergence_residual"].get<double>() <= 10.0 * s.cfg.solver.stokes_tol,
            m["divergence_residual"]);
      if (m.contains("transport"))
        check("micro_transport_ledger " + tag, m["transport"]["max_ledger_residual"].get<double>() <= 1e-8,
              m["transport"]["max_ledger_residual"]);
    }
  }
  if (fs::exists(s.out / "convergence.json")) {
    const Json j = read_json(s.out / "convergence.json");
    for (const auto& sl : j["slopes"]) check("slope " + sl["quantity"].get<std::string>(), sl["pass"].get<bool>(), sl);
    for (const auto& e : j["two_scale_errors"]) check("decrease " + e["quantity"].get<std::string>(), e["pass"].get<bool>(), e["values"]);
  }
  write_file(s.out / "report.json", dump_json(Json{{"stage", "report"}, {"checks", checks}, {"pass", pass}}));
  return {"report.json"};
}

}  // namespace

RunManifest run_pipeline(const RunConfig& cfg, const std::set<Stage>& requested, const PipelineOptions& opts) {
  const auto issues = validation_issues(cfg);
  if (!issues.empty()) {
    std::string msg;
    for (const auto& s : issues) msg += (msg.empty() ? "" : "; ") + s;
    throw Error(ErrorCode::ValidationError, msg);
  }
  fs::create_directories(opts.out_dir);
  const fs::path cache = opts.cache_dir ? *opts.cache_dir : opts.out_dir / ".cache";

  RunManifest man;
  man.config = to_json(cfg);
  // Cache keys ignore the output directory and thread count, which do not
  // change any artefact.
  Json key_cfg = man.config;
  key_cfg["output"].erase("dir");
  key_cfg["solver"].erase("threads");
  const std::string key_text = dump_json(key_cfg);

  const StageContext ctx{cfg, opts.out_dir, std::max(1, opts.threads)};
  std::set<Stage> failed;
  for (Stage st : resolve_stages(requested)) {
    StageRecord rec;
    rec.stage = st;
    std::string upstream;
    bool blocked = false;
    for (Stage d : dependencies(st)) {
      if (failed.count(d)) blocked = true;
      for (const auto& r : man.stages)
        if (r.stage == d) upstream += r.cache_key;
    }
    if (st == Stage::transport && !cfg.physics.transport_enabled) {
      rec.status = "skipped";
      rec.error = "transport disabled in the config";
      man.stages.push_back(rec);
      continue;
    }
    if (blocked) {
      rec.status = "skipped";
      rec.error = "upstream stage failed";
      failed.insert(st);
      man.stages.push_back(rec);
      continue;
    }
    rec.cache_key = sha256_hex(std::string(kVersion) + "\n" + to_string(st) + "\n" + key_text + upstream);
    const fs::path entry = cache / (to_string(st) + "-" + rec.cache_key.substr(0, 24));
    const auto t0 = std::chrono::steady_clock::now();
    // The report stage summarises whatever is present, so it is never cached.
    if (opts.use_cache && st != Stage::report && fs::exists(entry / ".complete")) {
      for (const auto& f : Json::parse(read_file(entry / ".complete"))) {
        const std::string name = f.get<std::string>();
        fs::copy_file(entry / name, opts.out_dir / name, fs::copy_options::overwrite_existing);
        rec.files.push_back(name);
      }
      rec.cache_hit = true;
      rec.status = "ok";
    } else {
      try {
        bool pass = true;
        switch (st) {
          case Stage::cell: rec.files = stage_cell(ctx); break;
          case Stage::effective: rec.files = stage_effective(ctx); break;
          case Stage::darcy: rec.files = stage_darcy(ctx); break;
          case Stage::transport: rec.files = stage_transport(ctx); break;
          case Stage::micro: rec.files = stage_micro(ctx); break;
          case Stage::converge: rec.files = stage_converge(ctx); break;
          case Stage::report: rec.files = stage_report(ctx, pass); break;
        }
        if (!pass) man.acceptance_pass = false;
        rec.status = "ok";
        if (opts.use_cache && st != Stage::report) {
          fs::create_directories(entry);
          for (const auto& f : rec.files) fs::copy_file(opts.out_dir / f, entry / f, fs::copy_options::overwrite_existing);
          write_file(entry / ".complete", Json(rec.files).dump() + "\n");
        }
      } catch (const Error& e) {
        rec.status = "failed";
        rec.error = e.what();
        rec.error_code = std::string(to_string(e.code()));
        failed.insert(st);
        man.solver_failure = true;
      } catch (const std::exception& e) {
        rec.status = "failed";
        rec.error = e.what();
        rec.error_code = "Internal";
        failed.insert(st);
        man.solver_failure = true;
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (st == Stage::converge && rec.status == "ok") {
      const Json j = read_json(opts.out_dir / "convergence.json");
      if (!j["pass"].get<bool>()) man.acceptance_pass = false;
    }
    man.stages.push_back(rec);
  }
  for (const auto& r : man.stages)
    for (const auto& f : r.files) {
      man.checksums[f] = sha256_file(opts.out_dir / f);
      man.sizes[f] = fs::file_size(opts.out_dir / f);
    }
  write_file(opts.out_dir / "manifest.json", dump_json(man.to_json()));
  return man;
}

}  // namespace thinlayer
