#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thinlayer/cell_diffusion.hpp"
#include "thinlayer/cell_stokes.hpp"
#include "thinlayer/geometry.hpp"
#include "thinlayer/macro_darcy.hpp"
#include "thinlayer/macro_transport.hpp"
#include "thinlayer/micro_reference.hpp"
#include "thinlayer/rational.hpp"

namespace thinlayer {

// Data recipes. Limit data are closed forms in macro coordinates
// X = (xbar, z), z in (-1, 1); the micro data are obtained by z = x_n / eps^alpha
// with the scaling prefactors written out in the micro_* helpers.

enum class FlowRecipeKind { generic, zero, equilibrium };
enum class TransportRecipeKind { generic, zero };

std::string to_string(FlowRecipeKind k);
std::string to_string(TransportRecipeKind k);
FlowRecipeKind parse_flow_recipe(const std::string& text);
TransportRecipeKind parse_transport_recipe(const std::string& text);

struct FlowRecipe {
  FlowRecipeKind kind = FlowRecipeKind::generic;
  double pressure = 1.0;  // constant boundary pressure of the equilibrium recipe

  /// f0(X): generic (0.5 sin(pi x1), [0.3 cos(pi x2),] 1 + 0.5 z).
  Point force(const Point& X, int dim) const;
  /// p0^b(X): generic 1 + 0.5 z + 0.2 cos(pi x1).
  double boundary_pressure(const Point& X, int dim) const;
};

struct TransportRecipe {
  TransportRecipeKind kind = TransportRecipeKind::generic;

  /// g0(t, X, y) = 0.5 (1 + 0.5 cos(2 pi x1)), independent of y.
  double source(double t, const Point& X, int dim) const;
  /// c0^b(t, X) = (1 - exp(-5 t)) (1 + z) / 2.
  double boundary(double t, const Point& X, int dim) const;
};

/// Macro coordinates of a layer point: (xbar, x_n / eps^alpha).
Point macro_point(const LayerGeometry& layer, const Point& x);
/// Cell coordinates of a layer point: x / eps.
Point cell_point(const LayerGeometry& layer, const Point& x);

/// f_eps(x) = f0(xbar, x_n / eps^alpha).
VectorFn micro_force(const FlowRecipe& r, const LayerGeometry& layer);
/// p_eps^b(x) = eps^alpha p0^b(xbar, x_n / eps^alpha).
FieldFn micro_boundary_pressure(const FlowRecipe& r, const LayerGeometry& layer);
/// g_eps(t, x) = g0(t, xbar, x_n / eps^alpha, x / eps).
TimeFieldFn micro_source(const TransportRecipe& r, const LayerGeometry& layer);
/// c_eps^b(t, x) = c0^b(t, xbar, x_n / eps^alpha).
TimeFieldFn micro_boundary(const TransportRecipe& r, const LayerGeometry& layer);

// Slope fits and error metrics.

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least squares of log(value) against log(eps). Throws InsufficientPoints
/// below three points and NonpositiveValue for eps or value <= 0.
SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points);

using TwoScaleLimit = std::function<double(const Point& X, const Point& y)>;
using TwoScaleVectorLimit = std::function<double(int comp, const Point& X, const Point& y)>;

/// Relative L2 error of a micro cell field (times `scale`) against
/// v0(xbar, x_n / eps^alpha, x / eps) on the active cells. The denominator is
/// the micro quadrature of v0, the discrete form of eps^{alpha/2} ||v0||.
/// Throws SamplerRangeError when a point maps outside the macro domain or the
/// limit is not finite.
double two_scale_error(const ScalarField& micro, double scale, const LayerGeometry& layer, const TwoScaleLimit& limit);
/// Same for a MAC velocity, face by face with the velocity mass.
double two_scale_error(const MacLayout& layout, const Eigen::VectorXd& u, double scale, const LayerGeometry& layer,
                       const TwoScaleVectorLimit& limit);

// Sweep.

struct SweepPlan {
  int dim = 2;
  InclusionSpec inclusion = InclusionSpec::ball(0.25);
  int cell_resolution = 16;  // m_c, shared by the cell problems and the micro grids
  Rational alpha{1, 2};
  std::vector<Rational> eps;  // strictly decreasing, at least three
  Base base;
  DiffusionCase dcase = DiffusionCase::D2;
  double D = 1.0;
  FlowRecipe flow;
  TransportRecipe transport;
  bool run_transport = true;
  double T = 1.0;
  double dt = 0.05;
  Advection advection = Advection::upwind;
  std::array<int, 2> macro_columns{64, 64};
  int macro_vertical_cells = 256;
  SaddleOptions stokes;  // micro and cell saddle solves
  SolverOptions scalar;  // cell diffusion
  int threads = 1;
  bool keep_fields = false;
  double slope_tolerance = 0.3;
  double min_r2 = 0.95;

  /// Throws ValidationError listing every violated constraint.
  void validate() const;
};

/// Limit objects shared by all sweep members.
struct SweepContext {
  SweepPlan plan;
  UnitCellGeometry cell;
  std::vector<CellStokesSolution> cell_stokes;
  PermeabilityTensor K;
  CellDiffusionSolutions cell_diffusion;
  EffectiveDiffusion Dstar;
  DarcyProblem darcy_problem;
  DarcySolution darcy;
  std::optional<MacroTransportSolution> macro_transport;
};

/// Cell problems, effective tensors, Darcy and macro transport for a plan.
SweepContext build_sweep_context(const SweepPlan& plan);
MacroTransportProblem macro_transport_problem(const SweepContext& ctx);

struct MemberFields {
  std::shared_ptr<LayerGeometry> layer;
  MicroStokesSolution stokes;
  std::optional<MicroTransportResult> transport;
};

struct MemberReport {
  Rational eps;
  double eps_value = 0.0;
  std::array<int, 3> grid{1, 1, 1};
  Index fluid_cells = 0;
  NormRecord velocity;       // || u_eps ||, || grad u_eps ||
  NormRecord pressure;       // || p_eps ||
  int stokes_iterations = 0;
  double divergence_residual = 0.0;
  double momentum_residual = 0.0;
  double velocity_error = 0.0;     // eps^-2 u_eps against u0(x, x/eps)
  double pressure_error = 0.0;     // eps^-alpha p_eps against p0
  double velocity_self_error = 0.0;  // eps^-2 u_eps against its own face sampler
  double micro_column_flux = 0.0;  // eps^-2 mean vertical plane flux
  double macro_column_flux = 0.0;  // integral of ubar^n over the base
  double column_flux_error = 0.0;
  bool has_transport = false;
  NormRecord concentration;  // final snapshot
  double concentration_error = 0.0;
  double concentration_sup = 0.0;
  double transport_ledger = 0.0;
  int transport_steps = 0;
  double cell_peclet = 0.0;
};

MemberReport run_member(const SweepContext& ctx, const Rational& eps, MemberFields* fields = nullptr);

struct SlopeCheck {
  std::string quantity;
  double expected = 0.0;
  bool degenerate = false;  // some value was zero: no fit
  SlopeFit fit;
  bool pass = false;
};

struct MonotoneCheck {
  std::string quantity;
  std::vector<double> values;
  bool strictly_decreasing = false;
  std::optional<double> final_threshold;
  bool pass = false;
};

struct ConvergenceReport {
  SweepPlan plan;
  Eigen::MatrixXd K;
  Eigen::MatrixXd Dstar;
  double porosity = 0.0;
  std::vector<MemberReport> members;
  std::vector<SlopeCheck> slopes;
  std::vector<MonotoneCheck> errors;
  bool pass = false;
};

/// Runs every member (concurrently up to plan.threads), fits the scaling
/// slopes and checks the two-scale error sequences.
ConvergenceReport scaling_study(const SweepPlan& plan, std::vector<MemberFields>* fields = nullptr);
ConvergenceReport scaling_study(const SweepContext& ctx, std::vector<MemberFields>* fields = nullptr);

}  // namespace thinlayer
