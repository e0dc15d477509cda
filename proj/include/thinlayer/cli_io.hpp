#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "thinlayer/cell_diffusion.hpp"
#include "thinlayer/cell_stokes.hpp"
#include "thinlayer/convergence.hpp"
#include "thinlayer/geometry.hpp"
#include "thinlayer/macro_darcy.hpp"
#include "thinlayer/macro_transport.hpp"
#include "thinlayer/rational.hpp"

namespace thinlayer {

using Json = nlohmann::ordered_json;

enum class FieldFormat { csv, binary };

struct RunConfig {
  struct Geometry {
    int dim = 2;
    InclusionSpec inclusion = InclusionSpec::ball(0.25);
    int cell_resolution = 128;   // m: cell and effective stages
    int micro_resolution = 16;   // m_c: micro grids and the sweep
  } geometry;
  struct Scales {
    Rational alpha{1, 2};
    std::vector<Rational> eps{Rational(1, 4), Rational(1, 16), Rational(1, 64)};
    Base base;
  } scales;
  struct Physics {
    double D = 1.0;
    DiffusionCase dcase = DiffusionCase::D2;
    std::string lateral = "periodic";  // periodic (D2) or neumann (D1)
    double T = 1.0;
    double dt = 0.05;
    FlowRecipe flow;
    TransportRecipe transport;
    bool transport_enabled = true;
  } physics;
  struct Solver {
    double stokes_tol = 1e-10;
    int stokes_max_outer = 5000;
    InnerSolver inner = InnerSolver::direct;
    double scalar_tol = 1e-10;
    int scalar_max_iter = 20000;
    Advection advection = Advection::upwind;
    double theta = 1.0;
    std::array<int, 2> macro_columns{64, 64};
    int macro_vertical_cells = 256;
    int threads = 1;
  } solver;
  struct Output {
    std::string dir = "out";
    FieldFormat field_format = FieldFormat::csv;
    bool dump_fields = false;
    std::vector<double> snapshot_times;
  } output;

  SweepPlan sweep_plan() const;
  MacroGrid macro_grid() const;
  SaddleOptions saddle_options() const;
  SolverOptions scalar_options() const;
};

/// Parses TOML text; throws ParseError on syntax errors and ValidationError
/// listing every violated constraint.
RunConfig parse_config(const std::string& text, const std::string& source = "<string>");
RunConfig load_config(const std::filesystem::path& path);
/// Every constraint the config violates (empty when valid).
std::vector<std::string> validation_issues(const RunConfig& cfg);
/// Resolved configuration with all defaults filled in.
Json to_json(const RunConfig& cfg);

Json to_json(const Eigen::MatrixXd& m);
Json to_json(const Eigen::VectorXd& v);
Json to_json(const NormRecord& n);
Json to_json(const ConvergenceReport& rep);

/// Fixed formatting: two-space indent, trailing newline.
std::string dump_json(const Json& j);
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Cell-centred field dump: CSV rows (x..., value) of active cells, or raw
/// little-endian doubles with a JSON sidecar describing the grid.
std::vector<std::filesystem::path> write_field(const ScalarField& f, const std::filesystem::path& stem, FieldFormat format);
std::string convergence_csv(const ConvergenceReport& rep);

enum class Stage { cell, effective, darcy, transport, micro, converge, report };
std::string to_string(Stage s);
Stage parse_stage(const std::string& text);
const std::vector<Stage>& all_stages();
/// Adds upstream dependencies and returns the stages in execution order.
std::vector<Stage> resolve_stages(const std::set<Stage>& requested);

struct StageRecord {
  Stage stage = Stage::cell;
  std::string status = "skipped";  // ok, failed, skipped
  bool cache_hit = false;
  std::string cache_key;
  double seconds = 0.0;
  std::string error;
  std::string error_code;
  std::vector<std::string> files;
};

struct RunManifest {
  Json config;
  std::vector<StageRecord> stages;
  std::map<std::string, std::string> checksums;  // relative path -> sha256
  std::map<std::string, std::uintmax_t> sizes;
  bool acceptance_pass = true;  // false when a report check failed
  bool solver_failure = false;

  Json to_json() const;
};

struct PipelineOptions {
  std::filesystem::path out_dir = "out";
  std::optional<std::filesystem::path> cache_dir;  // default <out_dir>/.cache
  int threads = 1;
  bool use_cache = true;
};

/// Runs the selected stages in dependency order, reusing cached stage
/// outputs keyed by the SHA-256 of the stage inputs. Stage failures are
/// recorded and their dependants skipped. Writes manifest.json.
RunManifest run_pipeline(const RunConfig& cfg, const std::set<Stage>& stages, const PipelineOptions& opts);

}  // namespace thinlayer
