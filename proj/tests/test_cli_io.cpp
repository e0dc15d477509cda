#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "support.hpp"
#include "thinlayer/cli_io.hpp"

using namespace thinlayer;
using thinlayer::testing::error_code_of;
namespace fs = std::filesystem;

namespace {

// Fresh directory under the system temp dir, removed on scope exit.
struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() / ("thinlayer_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string validation_message(const std::string& toml) {
  try {
    parse_config(toml);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ValidationError) return e.what();
  }
  return {};
}

const fs::path preset_dir{THINLAYER_PRESET_DIR};

}  // namespace

TEST_SUITE("cli_io") {

TEST_CASE("empty config resolves to the defaults") {
  const RunConfig c = parse_config("");
  CHECK(c.geometry.dim == 2);
  CHECK(c.geometry.cell_resolution == 128);
  CHECK(c.geometry.micro_resolution == 16);
  CHECK(c.scales.alpha == Rational(1, 2));
  REQUIRE(c.scales.eps.size() == 3);
  CHECK(c.scales.eps[2] == Rational(1, 64));
  CHECK(c.physics.dcase == DiffusionCase::D2);
  CHECK(c.physics.lateral == "periodic");
  const Json j = to_json(c);
  CHECK(j["scales"]["eps"][1] == "1/16");
  CHECK(j["solver"]["advection"] == "upwind");
}

TEST_CASE("presets parse and validate") {
  for (const char* name : {"default.toml", "tiny.toml"}) {
    INFO(name);
    const RunConfig c = load_config(preset_dir / name);
    CHECK(validation_issues(c).empty());
  }
}

TEST_CASE("non-representable eps is rejected") {
  const std::string msg = validation_message("[scales]\neps = [\"1/3\", \"1/9\", \"1/27\"]\n");
  CHECK(msg.find("scales.eps[0]") != std::string::npos);
}

TEST_CASE("lateral boundary must match the diffusion case") {
  CHECK(validation_message("[physics]\ncase = \"D2\"\nlateral = \"neumann\"\n").find("periodic") != std::string::npos);
  CHECK(validation_message("[physics]\ncase = \"D1\"\nlateral = \"periodic\"\n").find("neumann") != std::string::npos);
  const RunConfig d1 = parse_config("[physics]\ncase = \"D1\"\n");
  CHECK(d1.physics.lateral == "neumann");
}

TEST_CASE("every problem is reported at once") {
  const std::string msg = validation_message(
      "[geometry]\ndim = 5\ncell_resolution = 4\nradius = \"big\"\n"
      "[physics]\nD = -1.0\ntheta_typo = 1\n"
      "[extra]\nx = 1\n");
  CHECK(msg.find("geometry.dim") != std::string::npos);
  CHECK(msg.find("geometry.cell_resolution") != std::string::npos);
  CHECK(msg.find("geometry.radius: wrong type") != std::string::npos);
  CHECK(msg.find("physics.D") != std::string::npos);
  CHECK(msg.find("unknown key physics.theta_typo") != std::string::npos);
  CHECK(msg.find("unknown section extra") != std::string::npos);
}

TEST_CASE("syntax errors and missing files are parse errors") {
  CHECK(error_code_of([] { parse_config("[geometry\n"); }) == ErrorCode::ParseError);
  CHECK(error_code_of([] { load_config("/nonexistent/run.toml"); }) == ErrorCode::ParseError);
}

TEST_CASE("sha256 of known inputs") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("stage dependencies are closed and ordered") {
  CHECK(resolve_stages({Stage::transport}) == std::vector<Stage>{Stage::cell, Stage::effective, Stage::darcy, Stage::transport});
  CHECK(resolve_stages({Stage::report, Stage::darcy}) == std::vector<Stage>{Stage::cell, Stage::darcy, Stage::report});
  for (Stage s : all_stages()) CHECK(parse_stage(to_string(s)) == s);
  CHECK(error_code_of([] { parse_stage("mesh"); }) == ErrorCode::ValidationError);
}

TEST_CASE("selected stages write only their artefacts and are cached") {
  TempDir tmp;
  RunConfig cfg = load_config(preset_dir / "tiny.toml");
  cfg.geometry.cell_resolution = 16;
  PipelineOptions opts;
  opts.out_dir = tmp.path / "run";

  const RunManifest first = run_pipeline(cfg, {Stage::cell, Stage::effective}, opts);
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(opts.out_dir))
    if (e.is_regular_file()) names.insert(e.path().filename().string());
  CHECK(names == std::set<std::string>{"cell.json", "effective.json", "manifest.json"});
  REQUIRE(first.stages.size() == 2);
  for (const auto& s : first.stages) {
    CHECK(s.status == "ok");
    CHECK_FALSE(s.cache_hit);
  }
  for (const auto& [file, sum] : first.checksums) CHECK(sha256_file(opts.out_dir / file) == sum);
  const std::string cell_bytes = slurp(opts.out_dir / "cell.json");
  const Json cell = Json::parse(cell_bytes);
  CHECK(cell.contains("K"));

  const RunManifest second = run_pipeline(cfg, {Stage::cell, Stage::effective}, opts);
  for (const auto& s : second.stages) CHECK(s.cache_hit);
  CHECK(slurp(opts.out_dir / "cell.json") == cell_bytes);
  CHECK(second.checksums == first.checksums);

  // Keys cover the whole resolved config, so any changed input misses.
  cfg.physics.D = 2.0;
  const RunManifest third = run_pipeline(cfg, {Stage::cell, Stage::effective}, opts);
  for (const auto& s : third.stages) CHECK_FALSE(s.cache_hit);
  CHECK(Json::parse(slurp(opts.out_dir / "effective.json"))["D"] == 2.0);

  const Json man = Json::parse(slurp(opts.out_dir / "manifest.json"));
  CHECK(man["stages"].size() == 2);
  CHECK(man["files"].size() == 2);
}

TEST_CASE("failed stages skip their dependants") {
  TempDir tmp;
  RunConfig cfg = load_config(preset_dir / "tiny.toml");
  cfg.geometry.cell_resolution = 16;
  cfg.solver.stokes_max_outer = 1;
  cfg.solver.stokes_tol = 1e-14;
  PipelineOptions opts;
  opts.out_dir = tmp.path;
  opts.use_cache = false;
  const RunManifest man = run_pipeline(cfg, {Stage::darcy}, opts);
  REQUIRE(man.stages.size() == 2);
  CHECK(man.stages[0].status == "failed");
  CHECK(man.stages[0].error_code == "NoConvergence");
  CHECK(man.stages[1].status == "skipped");
  CHECK(man.solver_failure);
}

TEST_CASE("invalid configs never start a run") {
  TempDir tmp;
  RunConfig cfg;
  cfg.physics.D = 0.0;
  PipelineOptions opts;
  opts.out_dir = tmp.path / "never";
  CHECK(error_code_of([&] { run_pipeline(cfg, {Stage::cell}, opts); }) == ErrorCode::ValidationError);
  CHECK_FALSE(fs::exists(opts.out_dir));
}

TEST_CASE("field dumps in both formats") {
  TempDir tmp;
  const StructuredGrid g = StructuredGrid::uniform(2, {4, 4, 1}, {1.0, 1.0, 1.0},
                                                   {AxisBoundary::periodic, AxisBoundary::periodic, AxisBoundary::periodic});
  ScalarField f(g);
  for (Index i = 0; i < g.num_cells(); ++i) f.values[i] = double(i);
  const auto csv = write_field(f, tmp.path / "f", FieldFormat::csv);
  REQUIRE(csv.size() == 1);
  std::istringstream rows(slurp(csv[0]));
  std::string line;
  int count = 0;
  while (std::getline(rows, line))
    if (!line.empty() && line[0] != '#' && line[0] != 'x') ++count;
  CHECK(count == 16);

  const auto bin = write_field(f, tmp.path / "g", FieldFormat::binary);
  REQUIRE(bin.size() == 2);
  CHECK(fs::file_size(bin[0]) == 16 * sizeof(double));
  const Json side = Json::parse(slurp(bin[1]));
  CHECK(side.contains("cells"));
}

}  // TEST_SUITE
