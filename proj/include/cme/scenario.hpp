#pragma once

// Scenario configuration (JSON), built-in benchmark set-ups and the run
// pipeline: mesh -> approximant -> quadrature cache -> dynamic relaxation ->
// VTK field, convergence trace and run report.

#include "cme/material.hpp"
#include "cme/maxent.hpp"
#include "cme/mesh_gen.hpp"
#include "cme/mesh_io.hpp"
#include "cme/metrics.hpp"
#include "cme/mtled.hpp"
#include "cme/quadrature.hpp"
#include "cme/vtk.hpp"

#include <json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace cme {

using json = nlohmann::ordered_json;

inline constexpr int kReportSchemaVersion = 1;

/// Exit status table shared by the CLI and the run pipeline.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitMesh = 3,
  kExitNonConvergence = 4,
  kExitInstability = 5,
};

struct MeshConfig {
  std::string source = "generate";  // generate | files
  std::string shape;                // cube | cylinder; empty: from scenario
  long nodes = 0;                   // 0: from scenario
  double side = 0.1;
  double height = 0.017;
  double diameter = 0.030;
  double perturbation = -1.0;  // < 0: generator default
  std::uint64_t seed = 1;
  std::string node_file;
  std::string ele_file;
};

struct MaterialConfig {
  double youngs_modulus = 3000.0;
  double poisson_ratio = 0.49;
  double density = 1000.0;
};

/// Nodes whose coordinate along `axis` lies within tolerance * diameter of
/// the bounding-box `side`; with radius > 0 additionally within that distance
/// of `center`, measured perpendicular to `axis`.
struct NodeSelector {
  int axis = 2;
  std::string side = "min";  // min | max
  double tolerance = 1e-6;
  double radius = 0.0;
  std::optional<Vec3> center;
};

struct BoundaryConditionConfig {
  std::optional<NodeSelector> select;
  std::vector<Index> nodes;
  std::string axes = "xyz";
  Vec3 displacement = Vec3::Zero();
};

struct OutputConfig {
  std::string directory = ".";
  std::string vtk = "result.vtk";
  std::string trace = "trace.csv";
  std::string report = "report.json";
};

struct ScenarioConfig {
  std::string scenario = "cube-unconstrained";
  MeshConfig mesh;
  MaterialConfig material;
  CmeParams cme;
  int points_per_cell = 4;
  double magnitude = 0.0;           // load as a fraction of the height; 0: scenario default
  double indenter_radius = 0.25;    // fraction of the diameter
  std::vector<BoundaryConditionConfig> boundary_conditions;
  SolverConfig solver;
  OutputConfig output;
  unsigned workers = 0;  // 0: CME_WORKERS or hardware concurrency
};

inline const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"cube-unconstrained", "cube-extension",
                                              "cube-compression", "cylinder-indentation",
                                              "custom"};
  return names;
}

namespace detail {

inline const char* axis_name(int axis) { return axis == 0 ? "x" : axis == 1 ? "y" : "z"; }

inline int parse_axis(const std::string& s) {
  if (s == "x") return 0;
  if (s == "y") return 1;
  if (s == "z") return 2;
  throw ConfigError("axis must be x, y or z (got '" + s + "')");
}

inline void check_keys(const json& j, std::initializer_list<const char*> keys,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError("unknown key '" + where + "." + it.key() + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("invalid value for '" + where + "." + key + "': " + e.what());
  }
}

inline Vec3 read_vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("'" + where + "' must be [x, y, z]");
  Vec3 v;
  for (int d = 0; d < 3; ++d) {
    if (!j[d].is_number()) throw ConfigError("'" + where + "' must contain numbers");
    v(d) = j[d].get<double>();
  }
  return v;
}

inline json vec3_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }

}  // namespace detail

inline json to_json(const ScenarioConfig& c) {
  json j;
  j["scenario"] = c.scenario;
  json mesh;
  mesh["source"] = c.mesh.source;
  mesh["shape"] = c.mesh.shape;
  mesh["nodes"] = c.mesh.nodes;
  mesh["side"] = c.mesh.side;
  mesh["height"] = c.mesh.height;
  mesh["diameter"] = c.mesh.diameter;
  mesh["perturbation"] = c.mesh.perturbation;
  mesh["seed"] = c.mesh.seed;
  mesh["node_file"] = c.mesh.node_file;
  mesh["ele_file"] = c.mesh.ele_file;
  j["mesh"] = mesh;
  j["material"] = {{"youngs_modulus", c.material.youngs_modulus},
                   {"poisson_ratio", c.material.poisson_ratio},
                   {"density", c.material.density}};
  j["cme"] = {{"ring_count", c.cme.ring_count}, {"s", c.cme.s},       {"m", c.cme.m},
              {"alpha", c.cme.alpha},           {"k", c.cme.k},       {"tol", c.cme.tol},
              {"max_iter", c.cme.max_iter}};
  j["quadrature"] = {{"points_per_cell", c.points_per_cell}};
  j["loading"] = {{"magnitude", c.magnitude}, {"indenter_radius", c.indenter_radius}};
  json bcs = json::array();
  for (const auto& bc : c.boundary_conditions) {
    json b;
    if (bc.select) {
      json s;
      s["axis"] = detail::axis_name(bc.select->axis);
      s["side"] = bc.select->side;
      s["tolerance"] = bc.select->tolerance;
      if (bc.select->radius > 0.0) s["radius"] = bc.select->radius;
      if (bc.select->center) s["center"] = detail::vec3_json(*bc.select->center);
      b["select"] = s;
    }
    if (!bc.nodes.empty()) b["nodes"] = bc.nodes;
    b["axes"] = bc.axes;
    b["displacement"] = detail::vec3_json(bc.displacement);
    bcs.push_back(b);
  }
  j["boundary_conditions"] = bcs;
  j["solver"] = {{"tol_u", c.solver.tol_u},
                 {"window", c.solver.window},
                 {"max_steps", c.solver.max_steps},
                 {"ramp_steps", c.solver.ramp_steps},
                 {"safety_factor", c.solver.safety_factor},
                 {"damping_interval", c.solver.damping_interval},
                 {"divergence_factor", c.solver.divergence_factor},
                 {"divergence_growth", c.solver.divergence_growth},
                 {"divergence_growth_steps", c.solver.divergence_growth_steps},
                 {"adaptive_timestep", c.solver.adaptive_timestep},
                 {"timestep_iterations", c.solver.timestep_iterations},
                 {"trace_interval", c.solver.trace_interval}};
  j["output"] = {{"directory", c.output.directory},
                 {"vtk", c.output.vtk},
                 {"trace", c.output.trace},
                 {"report", c.output.report}};
  j["workers"] = c.workers;
  return j;
}

/// Parses a configuration; missing keys keep their defaults, unknown keys
/// are rejected.
inline ScenarioConfig config_from_json(const json& j) {
  using detail::read;
  ScenarioConfig c;
  detail::check_keys(j,
                     {"scenario", "mesh", "material", "cme", "quadrature", "loading",
                      "boundary_conditions", "solver", "output", "workers"},
                     "config");
  read(j, "scenario", c.scenario, "config");
  read(j, "workers", c.workers, "config");
  if (j.contains("mesh")) {
    const auto& m = j["mesh"];
    detail::check_keys(m,
                       {"source", "shape", "nodes", "side", "height", "diameter",
                        "perturbation", "seed", "node_file", "ele_file"},
                       "mesh");
    read(m, "source", c.mesh.source, "mesh");
    read(m, "shape", c.mesh.shape, "mesh");
    read(m, "nodes", c.mesh.nodes, "mesh");
    read(m, "side", c.mesh.side, "mesh");
    read(m, "height", c.mesh.height, "mesh");
    read(m, "diameter", c.mesh.diameter, "mesh");
    read(m, "perturbation", c.mesh.perturbation, "mesh");
    read(m, "seed", c.mesh.seed, "mesh");
    read(m, "node_file", c.mesh.node_file, "mesh");
    read(m, "ele_file", c.mesh.ele_file, "mesh");
  }
  if (j.contains("material")) {
    const auto& m = j["material"];
    detail::check_keys(m, {"youngs_modulus", "poisson_ratio", "density"}, "material");
    read(m, "youngs_modulus", c.material.youngs_modulus, "material");
    read(m, "poisson_ratio", c.material.poisson_ratio, "material");
    read(m, "density", c.material.density, "material");
  }
  if (j.contains("cme")) {
    const auto& m = j["cme"];
    detail::check_keys(m, {"ring_count", "s", "m", "alpha", "k", "tol", "max_iter"}, "cme");
    read(m, "ring_count", c.cme.ring_count, "cme");
    read(m, "s", c.cme.s, "cme");
    read(m, "m", c.cme.m, "cme");
    read(m, "alpha", c.cme.alpha, "cme");
    read(m, "k", c.cme.k, "cme");
    read(m, "tol", c.cme.tol, "cme");
    read(m, "max_iter", c.cme.max_iter, "cme");
  }
  if (j.contains("quadrature")) {
    detail::check_keys(j["quadrature"], {"points_per_cell"}, "quadrature");
    read(j["quadrature"], "points_per_cell", c.points_per_cell, "quadrature");
  }
  if (j.contains("loading")) {
    detail::check_keys(j["loading"], {"magnitude", "indenter_radius"}, "loading");
    read(j["loading"], "magnitude", c.magnitude, "loading");
    read(j["loading"], "indenter_radius", c.indenter_radius, "loading");
  }
  if (j.contains("boundary_conditions")) {
    const auto& arr = j["boundary_conditions"];
    if (!arr.is_array()) throw ConfigError("'boundary_conditions' must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = "boundary_conditions[" + std::to_string(i) + "]";
      const auto& b = arr[i];
      detail::check_keys(b, {"select", "nodes", "axes", "displacement"}, where);
      BoundaryConditionConfig bc;
      if (b.contains("select")) {
        const auto& s = b["select"];
        detail::check_keys(s, {"axis", "side", "tolerance", "radius", "center"},
                           where + ".select");
        NodeSelector sel;
        std::string axis = "z";
        read(s, "axis", axis, where + ".select");
        sel.axis = detail::parse_axis(axis);
        read(s, "side", sel.side, where + ".select");
        read(s, "tolerance", sel.tolerance, where + ".select");
        read(s, "radius", sel.radius, where + ".select");
        if (s.contains("center")) sel.center = detail::read_vec3(s["center"], where + ".center");
        bc.select = sel;
      }
      read(b, "nodes", bc.nodes, where);
      read(b, "axes", bc.axes, where);
      if (b.contains("displacement")) {
        bc.displacement = detail::read_vec3(b["displacement"], where + ".displacement");
      }
      c.boundary_conditions.push_back(bc);
    }
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    detail::check_keys(s,
                       {"tol_u", "window", "max_steps", "ramp_steps", "safety_factor",
                        "damping_interval", "divergence_factor", "divergence_growth",
                        "divergence_growth_steps", "adaptive_timestep", "timestep_iterations",
                        "trace_interval"},
                       "solver");
    read(s, "tol_u", c.solver.tol_u, "solver");
    read(s, "window", c.solver.window, "solver");
    read(s, "max_steps", c.solver.max_steps, "solver");
    read(s, "ramp_steps", c.solver.ramp_steps, "solver");
    read(s, "safety_factor", c.solver.safety_factor, "solver");
    read(s, "damping_interval", c.solver.damping_interval, "solver");
    read(s, "divergence_factor", c.solver.divergence_factor, "solver");
    read(s, "divergence_growth", c.solver.divergence_growth, "solver");
    read(s, "divergence_growth_steps", c.solver.divergence_growth_steps, "solver");
    read(s, "adaptive_timestep", c.solver.adaptive_timestep, "solver");
    read(s, "timestep_iterations", c.solver.timestep_iterations, "solver");
    read(s, "trace_interval", c.solver.trace_interval, "solver");
  }
  if (j.contains("output")) {
    const auto& o = j["output"];
    detail::check_keys(o, {"directory", "vtk", "trace", "report"}, "output");
    read(o, "directory", c.output.directory, "output");
    read(o, "vtk", c.output.vtk, "output");
    read(o, "trace", c.output.trace, "output");
    read(o, "report", c.output.report, "output");
  }
  return c;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

/// Checks ranges of every parameter that does not depend on the mesh.
inline void validate(const ScenarioConfig& c) {
  bool known = false;
  for (const auto& n : scenario_names()) known = known || n == c.scenario;
  if (!known) throw ConfigError("unknown scenario '" + c.scenario + "'");
  if (c.mesh.source != "generate" && c.mesh.source != "files") {
    throw ConfigError("mesh.source must be 'generate' or 'files'");
  }
  if (c.mesh.source == "files" && (c.mesh.node_file.empty() || c.mesh.ele_file.empty())) {
    throw ConfigError("mesh.node_file and mesh.ele_file are required for file meshes");
  }
  if (!c.mesh.shape.empty() && c.mesh.shape != "cube" && c.mesh.shape != "cylinder") {
    throw ConfigError("mesh.shape must be 'cube' or 'cylinder'");
  }
  if (c.mesh.nodes < 0 || c.mesh.nodes > 2'000'000) throw ConfigError("mesh.nodes out of range");
  if (!(c.mesh.side > 0) || !(c.mesh.height > 0) || !(c.mesh.diameter > 0)) {
    throw ConfigError("mesh dimensions must be positive");
  }
  if (c.mesh.perturbation >= 0.5) throw ConfigError("mesh.perturbation must be < 0.5");
  lame_from_engineering(c.material.youngs_modulus, c.material.poisson_ratio);
  if (!(c.material.density > 0)) throw ConfigError("material.density must be positive");
  c.cme.validate();
  QuadratureLevel::from_points_per_cell(c.points_per_cell);
  if (c.magnitude < 0.0 || c.magnitude >= 1.0) {
    throw ConfigError("loading.magnitude must be in [0, 1)");
  }
  if (!(c.indenter_radius > 0.0) || c.indenter_radius > 0.5) {
    throw ConfigError("loading.indenter_radius must be in (0, 0.5]");
  }
  for (const auto& bc : c.boundary_conditions) {
    if (bc.axes.empty() || bc.axes.find_first_not_of("xyz") != std::string::npos) {
      throw ConfigError("boundary condition axes must be a non-empty subset of 'xyz'");
    }
    if (!bc.select && bc.nodes.empty()) {
      throw ConfigError("boundary condition needs 'select' or 'nodes'");
    }
    if (bc.select && bc.select->side != "min" && bc.select->side != "max") {
      throw ConfigError("select.side must be 'min' or 'max'");
    }
    if (bc.select && (bc.select->tolerance < 0.0 || bc.select->radius < 0.0)) {
      throw ConfigError("select tolerance and radius must be non-negative");
    }
  }
  if (c.scenario == "custom" && c.boundary_conditions.empty()) {
    throw ConfigError("custom scenario requires boundary_conditions");
  }
  c.solver.validate();
}

/// Boundary conditions of the built-in scenarios for a body of the given
/// height (z extent) and diameter; no-op for custom scenarios or when
/// conditions are already given.
inline void fill_boundary_conditions(ScenarioConfig& c, double height, double diameter) {
  if (!c.boundary_conditions.empty() || c.scenario == "custom") return;
  auto face = [](int axis, const char* side) {
    NodeSelector s;
    s.axis = axis;
    s.side = side;
    return s;
  };
  const double load = c.magnitude * height;
  if (c.scenario == "cube-unconstrained") {
    c.boundary_conditions = {
        {face(2, "min"), {}, "z", Vec3::Zero()},
        {face(2, "max"), {}, "z", Vec3(0, 0, -load)},
        {face(0, "min"), {}, "x", Vec3::Zero()},
        {face(1, "min"), {}, "y", Vec3::Zero()},
    };
  } else if (c.scenario == "cube-extension" || c.scenario == "cube-compression") {
    const double sign = c.scenario == "cube-extension" ? 1.0 : -1.0;
    c.boundary_conditions = {
        {face(2, "min"), {}, "xyz", Vec3::Zero()},
        {face(2, "max"), {}, "xyz", Vec3(0, 0, sign * load)},
    };
  } else if (c.scenario == "cylinder-indentation") {
    NodeSelector top = face(2, "max");
    top.radius = c.indenter_radius * diameter;
    c.boundary_conditions = {
        {face(2, "min"), {}, "xyz", Vec3::Zero()},
        {top, {}, "xyz", Vec3(0, 0, -load)},
    };
  }
}

/// Fills scenario defaults (mesh shape and size, load magnitude, boundary
/// conditions) so the returned config is fully explicit.
inline ScenarioConfig resolve(ScenarioConfig c) {
  validate(c);
  const bool cylinder = c.scenario == "cylinder-indentation";
  if (c.mesh.shape.empty()) c.mesh.shape = cylinder ? "cylinder" : "cube";
  if (c.mesh.nodes == 0) c.mesh.nodes = c.mesh.shape == "cylinder" ? 2000 : 150;
  if (c.mesh.perturbation < 0.0) c.mesh.perturbation = c.mesh.shape == "cylinder" ? 0.1 : 0.15;
  if (c.magnitude == 0.0) {
    if (c.scenario == "cube-unconstrained") c.magnitude = 0.2;
    if (c.scenario == "cube-extension" || c.scenario == "cube-compression") c.magnitude = 0.5;
    if (cylinder) c.magnitude = 0.6;
  }
  if (c.workers == 0) c.workers = default_workers();
  if (c.mesh.source == "generate") {
    const bool cyl = c.mesh.shape == "cylinder";
    fill_boundary_conditions(c, cyl ? c.mesh.height : c.mesh.side,
                             cyl ? c.mesh.diameter : c.mesh.side);
  }
  return c;
}

inline TetMesh build_mesh(const ScenarioConfig& c) {
  if (c.mesh.source == "files") return load_mesh<3>(c.mesh.node_file, c.mesh.ele_file);
  if (c.mesh.shape == "cylinder") {
    return cylinder_mesh(c.mesh.nodes, c.mesh.height, c.mesh.diameter, c.mesh.perturbation,
                         c.mesh.seed);
  }
  return cube_mesh(c.mesh.nodes, c.mesh.side, c.mesh.perturbation, c.mesh.seed);
}

inline std::vector<Index> select_nodes(const TetMesh& mesh, const NodeSelector& s) {
  const double tol = s.tolerance * mesh.diameter();
  const double plane = s.side == "max" ? mesh.bbox_max()(s.axis) : mesh.bbox_min()(s.axis);
  const Vec3 center = s.center.value_or(0.5 * (mesh.bbox_min() + mesh.bbox_max()));
  std::vector<Index> out;
  for (Index a = 0; a < mesh.num_nodes(); ++a) {
    const Vec3& x = mesh.node(a);
    if (std::abs(x(s.axis) - plane) > tol) continue;
    if (s.radius > 0.0) {
      Vec3 r = x - center;
      r(s.axis) = 0.0;
      if (r.norm() > s.radius * (1.0 + 1e-12)) continue;
    }
    out.push_back(a);
  }
  return out;
}

inline std::vector<BoundaryCondition> build_boundary_conditions(const ScenarioConfig& c,
                                                                const TetMesh& mesh) {
  std::vector<BoundaryCondition> out;
  for (std::size_t i = 0; i < c.boundary_conditions.size(); ++i) {
    const auto& bc = c.boundary_conditions[i];
    BoundaryCondition b;
    if (bc.select) b.nodes = select_nodes(mesh, *bc.select);
    for (Index a : bc.nodes) {
      if (a < 0 || a >= mesh.num_nodes()) {
        throw ConfigError("boundary_conditions[" + std::to_string(i) + "] references node " +
                          std::to_string(a) + " of " + std::to_string(mesh.num_nodes()));
      }
      b.nodes.push_back(a);
    }
    std::sort(b.nodes.begin(), b.nodes.end());
    b.nodes.erase(std::unique(b.nodes.begin(), b.nodes.end()), b.nodes.end());
    if (b.nodes.empty()) {
      throw ConfigError("boundary_conditions[" + std::to_string(i) + "] selects no nodes");
    }
    b.axes = {bc.axes.find('x') != std::string::npos, bc.axes.find('y') != std::string::npos,
              bc.axes.find('z') != std::string::npos};
    b.target = bc.displacement;
    out.push_back(std::move(b));
  }
  return out;
}

/// Everything a run produces, for programmatic callers.
struct ScenarioResult {
  int exit_code = kExitOk;
  std::string error;
  json report;
  ScenarioConfig config;  // resolved
  std::optional<TetMesh> mesh;
  std::vector<double> displacement;
  std::vector<double> cell_energy;
  CriticalTimestep timestep;
  SteadyStateReport solve;
  std::size_t quadrature_points = 0;
  double nrmse = -1.0;
  double nrmse_no_root = -1.0;
};

struct RunOptions {
  bool write_vtk = true;
  bool write_trace = true;
  bool write_report = true;
  bool quiet = true;
  std::ostream* log = nullptr;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void write_report_file(const std::filesystem::path& path, const json& report) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os << report.dump(2) << '\n';
}

}  // namespace detail

/// Runs a scenario end to end. Errors are mapped to exit codes and recorded
/// in the report; outputs reached before a failure are still written.
inline ScenarioResult run_scenario(const ScenarioConfig& input, const RunOptions& opt = {}) {
  namespace fs = std::filesystem;
  ScenarioResult res;
  auto log = [&](const std::string& msg) {
    if (opt.log) *opt.log << msg << std::endl;
  };
  json& rep = res.report;
  rep["schema_version"] = kReportSchemaVersion;
  rep["status"] = "failed";

  try {
    res.config = resolve(input);
  } catch (const ConfigError& e) {
    res.exit_code = kExitConfig;
    res.error = e.what();
    rep["error"] = res.error;
    rep["config"] = to_json(input);
    return res;
  }
  const ScenarioConfig& cfg = res.config;
  rep["config"] = to_json(cfg);
  const fs::path outdir = cfg.output.directory;
  const unsigned workers = std::max(1u, cfg.workers);

  std::ofstream trace_file;
  auto finish = [&](int code, const std::string& status) {
    res.exit_code = code;
    rep["status"] = status;
    if (!res.error.empty()) rep["error"] = res.error;
    if (opt.write_report) {
      try {
        detail::write_report_file(outdir / cfg.output.report, rep);
      } catch (const Error& e) {
        if (res.exit_code == kExitOk) res.exit_code = kExitFailure;
        res.error = e.what();
      }
    }
  };

  const auto t_start = std::chrono::steady_clock::now();
  try {
    if (opt.write_vtk || opt.write_trace || opt.write_report) fs::create_directories(outdir);
    if (opt.write_trace) {
      trace_file.open(outdir / cfg.output.trace);
      if (!trace_file) throw Error("cannot open trace file in '" + outdir.string() + "'");
      trace_file << "step,max_increment,load_factor,mean_energy\n";
      trace_file.precision(17);
    }

    res.mesh.emplace(build_mesh(cfg));
    const TetMesh& mesh = *res.mesh;
    if (res.config.boundary_conditions.empty()) {
      const Vec3 extent = mesh.bbox_max() - mesh.bbox_min();
      fill_boundary_conditions(res.config, extent(2), extent(0));
      rep["config"] = to_json(cfg);
    }
    rep["mesh"] = {{"nodes", mesh.num_nodes()},
                   {"cells", mesh.num_cells()},
                   {"volume", mesh.measure()},
                   {"mean_edge_length", mesh.mean_edge_length()}};
    log("mesh: " + std::to_string(mesh.num_nodes()) + " nodes, " +
        std::to_string(mesh.num_cells()) + " cells");
    const auto bcs = build_boundary_conditions(cfg, mesh);
    Constraints constraints(mesh.num_nodes(), bcs);

    const auto t_basis = std::chrono::steady_clock::now();
    const CmeApproximant<3> approx(mesh, cfg.cme, workers);
    auto points =
        generate_points(mesh, QuadratureLevel::from_points_per_cell(cfg.points_per_cell));
    res.quadrature_points = points.size();
    BasisCache cache(approx, std::move(points), workers);
    const double basis_seconds = detail::seconds_since(t_basis);
    log("basis: " + std::to_string(cache.num_points()) + " points in " +
        std::to_string(basis_seconds) + " s");

    const auto material = NeoHookean::from_engineering(
        cfg.material.youngs_modulus, cfg.material.poisson_ratio, cfg.material.density);
    MtledModel model(mesh, std::move(cache), material, workers);
    res.timestep = critical_timestep(model);
    rep["quadrature"] = {{"points", res.quadrature_points},
                         {"points_per_cell", cfg.points_per_cell},
                         {"basis_entries", model.cache().num_entries()},
                         {"max_dual_iterations", model.cache().max_dual_iterations()}};
    rep["timestep"] = {{"dt_crit", res.timestep.dt_crit},
                       {"omega_max", res.timestep.omega_max},
                       {"power_iteration_converged", res.timestep.converged},
                       {"power_iterations", res.timestep.iterations},
                       {"gershgorin_dt", res.timestep.gershgorin_dt},
                       {"safety_factor", cfg.solver.safety_factor},
                       {"dt", cfg.solver.safety_factor * res.timestep.dt_crit}};
    log("dt_crit: " + std::to_string(res.timestep.dt_crit) + " s");

    DynamicRelaxation solver(model, constraints, cfg.solver);
    auto write_fields = [&]() {
      res.displacement = solver.state().u;
      res.cell_energy = model.cell_energy_density();
      if (opt.write_vtk) {
        write_vtk(outdir / cfg.output.vtk, mesh, res.displacement, res.cell_energy);
      }
    };
    auto record_results = [&]() {
      const auto& u = solver.state().u;
      json results;
      results["mean_strain_energy_density"] = solver.state().mean_energy;
      results["max_constraint_error"] = solver.max_constraint_error();
      results["constrained_dofs"] = constraints.dofs().size();
      double umax = 0.0;
      for (double v : u) umax = std::max(umax, std::abs(v));
      results["max_abs_displacement"] = umax;
      if (cfg.scenario == "cube-unconstrained") {
        // Homogeneous solution u_z = -magnitude (z - z_min).
        std::vector<double> uz(mesh.num_nodes()), an(mesh.num_nodes());
        for (Index a = 0; a < mesh.num_nodes(); ++a) {
          uz[a] = u[3 * static_cast<std::size_t>(a) + 2];
          an[a] = -cfg.magnitude * (mesh.node(a)(2) - mesh.bbox_min()(2));
        }
        res.nrmse = nrmse(uz, an, true);
        res.nrmse_no_root = nrmse(uz, an, false);
        results["nrmse"] = res.nrmse;
        results["nrmse_without_root"] = res.nrmse_no_root;
      }
      rep["results"] = results;
    };

    const auto t_solve = std::chrono::steady_clock::now();
    try {
      res.solve = solver.run(res.timestep, [&](const TraceRow& r) {
        if (opt.write_trace) {
          trace_file << r.step << ',' << r.max_increment << ',' << r.load_factor << ','
                     << r.mean_energy << '\n';
        }
      });
    } catch (const Error&) {
      rep["solver"] = {{"converged", false},
                       {"steps", solver.state().step},
                       {"wall_seconds", detail::seconds_since(t_solve)}};
      throw;
    }
    rep["solver"] = {{"converged", res.solve.converged},
                     {"steps", res.solve.steps},
                     {"wall_seconds", res.solve.wall_seconds},
                     {"final_max_increment", res.solve.final_max_increment},
                     {"final_dt", res.solve.min_dt},
                     {"damping", res.solve.damping}};
    rep["timing"] = {{"basis_seconds", basis_seconds},
                     {"total_seconds", detail::seconds_since(t_start)}};
    record_results();
    write_fields();
    if (!res.solve.converged) {
      res.error = "steady state not reached within " + std::to_string(cfg.solver.max_steps) +
                  " steps (last max increment " +
                  std::to_string(res.solve.final_max_increment) + " m)";
      finish(kExitNonConvergence, "not_converged");
      return res;
    }
    finish(kExitOk, "converged");
  } catch (const ConfigError& e) {
    res.error = e.what();
    finish(kExitConfig, "config_error");
  } catch (const MeshError& e) {
    res.error = e.what();
    finish(kExitMesh, "mesh_error");
  } catch (const DegenerateError& e) {
    res.error = e.what();
    finish(kExitMesh, "degenerate_geometry");
  } catch (const ConvergenceError& e) {
    res.error = e.what();
    finish(kExitNonConvergence, "not_converged");
  } catch (const InstabilityError& e) {
    res.error = e.what();
    finish(kExitInstability, "unstable");
  } catch (const InversionError& e) {
    res.error = e.what();
    finish(kExitInstability, "inverted");
  } catch (const std::exception& e) {
    res.error = e.what();
    finish(kExitFailure, "failed");
  }
  return res;
}

/// One row of a convergence study.
struct StudyRow {
  std::string label;
  long nodes = 0;
  int points_per_cell = 0;
  std::size_t quadrature_points = 0;
  double dt_crit = 0.0;
  long steps = 0;
  double wall_seconds = 0.0;
  double mean_energy = 0.0;
  double sre_w = 0.0;        // relative to the reference row
  double normalized_w = 0.0; // relative to the first row
  int exit_code = 0;
};

/// Runs `base` once per entry of `node_counts` (discretization sweep) or of
/// `points_per_cell` (quadrature sweep). The reference for SRE_W is the last
/// row.
inline std::vector<StudyRow> convergence_study(const ScenarioConfig& base,
                                               const std::vector<long>& node_counts,
                                               const std::vector<int>& points_per_cell,
                                               std::ostream* log = nullptr) {
  if (node_counts.empty() == points_per_cell.empty()) {
    throw ConfigError("sweep either node counts or quadrature levels");
  }
  std::vector<StudyRow> rows;
  const std::size_t n = std::max(node_counts.size(), points_per_cell.size());
  for (std::size_t i = 0; i < n; ++i) {
    ScenarioConfig c = base;
    StudyRow row;
    if (!node_counts.empty()) {
      c.mesh.nodes = node_counts[i];
      row.label = "nodes_" + std::to_string(node_counts[i]);
    } else {
      c.points_per_cell = points_per_cell[i];
      row.label = "qp_" + std::to_string(points_per_cell[i]);
    }
    c.output.vtk = row.label + ".vtk";
    c.output.trace = row.label + "_trace.csv";
    c.output.report = row.label + "_report.json";
    RunOptions opt;
    opt.log = log;
    const auto r = run_scenario(c, opt);
    row.exit_code = r.exit_code;
    if (r.exit_code == kExitConfig || r.exit_code == kExitMesh) {
      throw ConfigError("study run '" + row.label + "' failed: " + r.error);
    }
    row.nodes = r.mesh ? r.mesh->num_nodes() : 0;
    row.points_per_cell = r.config.points_per_cell;
    row.quadrature_points = r.quadrature_points;
    row.dt_crit = r.timestep.dt_crit;
    row.steps = r.solve.steps;
    row.wall_seconds = r.solve.wall_seconds;
    row.mean_energy = r.solve.mean_energy;
    rows.push_back(row);
  }
  const double ref = rows.back().mean_energy;
  const double first = rows.front().mean_energy;
  for (auto& r : rows) {
    r.sre_w = ref != 0.0 ? sre_w(r.mean_energy, ref) : 0.0;
    r.normalized_w = first != 0.0 ? r.mean_energy / first : 0.0;
  }
  return rows;
}

inline void write_study_csv(std::ostream& os, const std::vector<StudyRow>& rows) {
  os << "label,nodes,points_per_cell,quadrature_points,dt_crit,steps,wall_seconds,"
        "mean_energy,sre_w,normalized_w,exit_code\n";
  os.precision(10);
  for (const auto& r : rows) {
    os << r.label << ',' << r.nodes << ',' << r.points_per_cell << ',' << r.quadrature_points
       << ',' << r.dt_crit << ',' << r.steps << ',' << r.wall_seconds << ',' << r.mean_energy
       << ',' << r.sre_w << ',' << r.normalized_w << ',' << r.exit_code << '\n';
  }
}

}  // namespace cme
