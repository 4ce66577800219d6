// cme: command-line front end for the CME / MTLED toolkit.

#include "cme/scenario.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace cme;

struct MeshOptions {
  std::string node_file;
  std::string ele_file;
  std::string shape = "cube";
  long nodes = 150;
  double perturbation = -1.0;
  std::uint64_t seed = 1;

  void add_to(CLI::App* app) {
    app->add_option("--node-file", node_file, "TetGen .node file");
    app->add_option("--ele-file", ele_file, "TetGen .ele file");
    app->add_option("--shape", shape, "generated mesh shape when no files are given")
        ->check(CLI::IsMember({"cube", "cylinder"}));
    app->add_option("--nodes", nodes, "approximate node count of the generated mesh");
    app->add_option("--perturbation", perturbation, "interior node jitter (fraction of spacing)");
    app->add_option("--seed", seed, "generator seed");
  }

  bool from_files() const {
    if (node_file.empty() != ele_file.empty()) {
      throw ConfigError("--node-file and --ele-file must be given together");
    }
    return !node_file.empty();
  }

  int dimension() const { return from_files() ? mesh_dimension(node_file) : 3; }

  TetMesh tet_mesh() const {
    if (from_files()) return load_mesh<3>(node_file, ele_file);
    if (shape == "cylinder") {
      return cylinder_mesh(nodes, 0.017, 0.030, perturbation < 0 ? 0.1 : perturbation, seed);
    }
    return cube_mesh(nodes, 0.1, perturbation < 0 ? 0.15 : perturbation, seed);
  }
};

void add_cme_options(CLI::App* app, CmeParams& p) {
  app->add_option("--ring-count", p.ring_count, "support size in cell rings (N_R)");
  app->add_option("--s", p.s, "prior smoothness exponent");
  app->add_option("--m", p.m, "R-equivalence order");
  app->add_option("--alpha", p.alpha, "trim volume shape constant");
  app->add_option("--k", p.k, "trim volume exponent (even)");
  app->add_option("--dual-tol", p.tol, "dual Newton tolerance");
  app->add_option("--dual-max-iter", p.max_iter, "dual Newton iteration limit");
}

unsigned resolve_workers(unsigned w) { return w == 0 ? default_workers() : w; }

std::vector<std::vector<double>> read_points_csv(const std::string& path, int dim) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open points file '" + path + "'");
  std::vector<std::vector<double>> pts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    for (char& ch : line) {
      if (ch == ',' || ch == ';') ch = ' ';
    }
    std::istringstream ls(line);
    std::vector<double> p(dim);
    bool ok = true;
    for (int d = 0; d < dim && ok; ++d) ok = static_cast<bool>(ls >> p[d]);
    if (!ok) {
      if (pts.empty() && line.find_first_of("xyzXYZ") != std::string::npos) continue;  // header
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " coordinates");
    }
    pts.push_back(std::move(p));
  }
  return pts;
}

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw Error("cannot open '" + path + "' for writing");
  return file;
}

template <int Dim>
void basis_eval(const SimplexMesh<Dim>& mesh, const CmeParams& params,
                const std::vector<std::vector<double>>& pts, unsigned workers, std::ostream& os) {
  const CmeApproximant<Dim> approx(mesh, params, workers);
  std::vector<BasisEvaluation<Dim>> evals(pts.size());
  parallel_for(pts.size(), workers, [&](std::size_t i) {
    Vec<Dim> x;
    for (int d = 0; d < Dim; ++d) x(d) = pts[i][d];
    evals[i] = approx.basis(x);
  });
  const char* names[] = {"x", "y", "z"};
  os << "point";
  for (int d = 0; d < Dim; ++d) os << ',' << names[d];
  os << ",neighbor,phi";
  for (int d = 0; d < Dim; ++d) os << ",dphi_d" << names[d];
  os << ",iterations\n";
  os.precision(17);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& e = evals[i];
    for (std::size_t k = 0; k < e.neighbor_ids.size(); ++k) {
      os << i;
      for (int d = 0; d < Dim; ++d) os << ',' << pts[i][d];
      os << ',' << e.neighbor_ids[k] << ',' << e.phi[k];
      for (int d = 0; d < Dim; ++d) os << ',' << e.grad_phi[k](d);
      os << ',' << e.iterations << '\n';
    }
  }
}

struct SampleOptions {
  long node = 0;
  int resolution = 41;
  std::string slice_axis;
  double slice_value = 0.0;
  double margin = 0.1;
};

template <int Dim>
void distfield_sample(const SimplexMesh<Dim>& mesh, const CmeParams& params,
                      const SampleOptions& o, std::ostream& os) {
  if (o.node < 0 || o.node >= mesh.num_nodes()) {
    throw ConfigError("node " + std::to_string(o.node) + " out of range");
  }
  if (o.resolution < 2) throw ConfigError("--resolution must be >= 2");
  const auto sd = ring_support(mesh, static_cast<Index>(o.node), params.ring_count);
  DistanceField<Dim> field;
  field.order = params.m;
  Vec<Dim> lo = mesh.node(sd.neighbor_nodes.front()), hi = lo;
  for (Index b : sd.neighbor_nodes) {
    lo = lo.cwiseMin(mesh.node(b));
    hi = hi.cwiseMax(mesh.node(b));
  }
  field.zero_cutoff = 1e-14 * (hi - lo).norm();
  for (const auto& f : sd.boundary_facets) {
    if constexpr (Dim == 2) {
      field.patches.emplace_back(mesh.node(f[0]), mesh.node(f[1]));
    } else {
      field.patches.emplace_back(mesh.node(f[0]), mesh.node(f[1]), mesh.node(f[2]), params.alpha,
                                 params.k);
    }
  }
  const Vec<Dim> pad = o.margin * (hi - lo);
  lo -= pad;
  hi += pad;
  int fixed = -1;
  if (!o.slice_axis.empty()) {
    fixed = o.slice_axis == "x" ? 0 : o.slice_axis == "y" ? 1 : 2;
    if (fixed >= Dim) throw ConfigError("slice axis exceeds the mesh dimension");
  }
  std::array<int, 3> counts{1, 1, 1};
  for (int d = 0; d < Dim; ++d) counts[d] = d == fixed ? 1 : o.resolution;
  const char* names[] = {"x", "y", "z"};
  for (int d = 0; d < Dim; ++d) os << names[d] << ',';
  os << "d";
  for (int d = 0; d < Dim; ++d) os << ",dd_d" << names[d];
  os << ",gradient_defined\n";
  os.precision(17);
  for (int k = 0; k < counts[2]; ++k) {
    for (int j = 0; j < counts[1]; ++j) {
      for (int i = 0; i < counts[0]; ++i) {
        const std::array<int, 3> idx{i, j, k};
        Vec<Dim> x;
        for (int d = 0; d < Dim; ++d) {
          x(d) = d == fixed ? o.slice_value
                            : lo(d) + (hi(d) - lo(d)) * idx[d] / (o.resolution - 1);
        }
        const auto v = field(x);
        for (int d = 0; d < Dim; ++d) os << x(d) << ',';
        os << v.value;
        for (int d = 0; d < Dim; ++d) os << ',' << v.gradient(d);
        os << ',' << (v.gradient_defined ? 1 : 0) << '\n';
      }
    }
  }
}

template <int Dim>
json mesh_info(const SimplexMesh<Dim>& mesh, int ring_count, unsigned workers) {
  json j;
  j["dimension"] = Dim;
  j["nodes"] = mesh.num_nodes();
  j["cells"] = mesh.num_cells();
  j["boundary_facets"] = mesh.boundary_facets().size();
  Index boundary_nodes = 0;
  for (Index a = 0; a < mesh.num_nodes(); ++a) boundary_nodes += mesh.is_boundary_node(a);
  j["boundary_nodes"] = boundary_nodes;
  j["measure"] = mesh.measure();
  double vmin = mesh.cell_measure(0), vmax = vmin;
  for (Index c = 1; c < mesh.num_cells(); ++c) {
    vmin = std::min(vmin, mesh.cell_measure(c));
    vmax = std::max(vmax, mesh.cell_measure(c));
  }
  j["min_cell_measure"] = vmin;
  j["max_cell_measure"] = vmax;
  j["mean_edge_length"] = mesh.mean_edge_length();
  json lo = json::array(), hi = json::array();
  for (int d = 0; d < Dim; ++d) {
    lo.push_back(mesh.bbox_min()(d));
    hi.push_back(mesh.bbox_max()(d));
  }
  j["bbox_min"] = lo;
  j["bbox_max"] = hi;
  if (ring_count > 0) {
    const auto supports = build_supports(mesh, ring_count, workers);
    std::size_t nmin = supports.front().neighbor_nodes.size(), nmax = nmin, total = 0;
    for (const auto& sd : supports) {
      nmin = std::min(nmin, sd.neighbor_nodes.size());
      nmax = std::max(nmax, sd.neighbor_nodes.size());
      total += sd.neighbor_nodes.size();
    }
    j["support"] = {{"ring_count", ring_count},
                    {"min_nodes", nmin},
                    {"max_nodes", nmax},
                    {"mean_nodes", static_cast<double>(total) / supports.size()}};
  }
  return j;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    std::istringstream is(item);
    T v{};
    if (!(is >> v)) throw ConfigError(std::string("invalid ") + what + " list '" + s + "'");
    out.push_back(v);
  }
  return out;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const MeshError*>(&e) || dynamic_cast<const DegenerateError*>(&e)) {
    return kExitMesh;
  }
  if (dynamic_cast<const ConvergenceError*>(&e)) return kExitNonConvergence;
  if (dynamic_cast<const InstabilityError*>(&e) || dynamic_cast<const InversionError*>(&e)) {
    return kExitInstability;
  }
  return kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cell-based maximum entropy approximants and explicit total-Lagrangian "
               "dynamic relaxation"};
  app.require_subcommand(1);
  unsigned workers = 0;
  app.add_option("--workers", workers, "worker threads (0: CME_WORKERS or all cores)")
      ->check(CLI::NonNegativeNumber);
  app.footer(
      "Exit codes: 0 ok, 1 other failure, 2 configuration, 3 mesh, 4 non-convergence, "
      "5 instability.");

  // run
  auto* run = app.add_subcommand("run", "run a scenario and write VTK, trace and report");
  std::string config_path, scenario, out_dir;
  long run_nodes = 0;
  double magnitude = 0.0;
  int run_ppc = 0;
  long max_steps = 0;
  bool verbose = false;
  CmeParams run_cme;
  std::string run_node_file, run_ele_file;
  run->add_option("--config", config_path, "JSON configuration file");
  run->add_option("--scenario", scenario, "built-in scenario or 'custom'");
  run->add_option("--nodes", run_nodes, "approximate node count of the generated mesh");
  run->add_option("--stretch,--magnitude", magnitude, "load as a fraction of the height");
  run->add_option("--points-per-cell", run_ppc, "quadrature points per cell (1, 4, 8, 16, 32)");
  run->add_option("--max-steps", max_steps, "dynamic relaxation step budget");
  run->add_option("--node-file", run_node_file, "TetGen .node file");
  run->add_option("--ele-file", run_ele_file, "TetGen .ele file");
  run->add_option("-o,--output", out_dir, "output directory");
  run->add_flag("-v,--verbose", verbose, "progress messages on stderr");
  auto* run_ring = run->add_option("--ring-count", run_cme.ring_count, "support rings (N_R)");
  auto* run_s = run->add_option("--s", run_cme.s, "prior smoothness exponent");

  // basis-eval
  auto* beval = app.add_subcommand("basis-eval", "evaluate basis functions at points");
  MeshOptions beval_mesh;
  CmeParams beval_cme;
  std::string points_path, beval_out;
  beval_mesh.add_to(beval);
  add_cme_options(beval, beval_cme);
  beval->add_option("--points", points_path, "CSV of evaluation points")->required();
  beval->add_option("-o,--output", beval_out, "output CSV (default stdout)");

  // distfield-sample
  auto* dsample = app.add_subcommand("distfield-sample",
                                     "sample a node's support-boundary distance field");
  MeshOptions ds_mesh;
  CmeParams ds_cme;
  SampleOptions ds;
  std::string ds_out;
  ds_mesh.add_to(dsample);
  add_cme_options(dsample, ds_cme);
  dsample->add_option("--node", ds.node, "node whose support is sampled");
  dsample->add_option("--resolution", ds.resolution, "grid points per axis");
  dsample->add_option("--slice-axis", ds.slice_axis, "sample a plane normal to this axis")
      ->check(CLI::IsMember({"x", "y", "z"}));
  dsample->add_option("--slice-value", ds.slice_value, "plane coordinate");
  dsample->add_option("--margin", ds.margin, "grid padding as a fraction of the support box");
  dsample->add_option("-o,--output", ds_out, "output CSV (default stdout)");

  // mesh-info
  auto* minfo = app.add_subcommand("mesh-info", "print mesh statistics as JSON");
  MeshOptions mi_mesh;
  int mi_ring = 2;
  mi_mesh.add_to(minfo);
  minfo->add_option("--ring-count", mi_ring, "support statistics for this ring count (0: skip)");

  // convergence-study
  auto* study = app.add_subcommand(
      "convergence-study", "sweep discretization or quadrature levels and tabulate mean W");
  std::string st_config, st_scenario, st_nodes, st_ppc, st_out = "study", st_csv;
  double st_magnitude = 0.0;
  int st_s = 0;
  study->add_option("--config", st_config, "JSON configuration file for the base run");
  study->add_option("--scenario", st_scenario, "built-in scenario");
  study->add_option("--stretch,--magnitude", st_magnitude, "load as a fraction of the height");
  study->add_option("--s", st_s, "prior smoothness exponent");
  auto* st_nodes_opt = study->add_option("--nodes", st_nodes, "comma-separated node counts");
  auto* st_ppc_opt =
      study->add_option("--points-per-cell", st_ppc, "comma-separated quadrature levels");
  st_nodes_opt->excludes(st_ppc_opt);
  study->add_option("-o,--output", st_out, "output directory for the per-run artifacts");
  study->add_option("--csv", st_csv, "table path (default <output>/study.csv)");
  study->add_flag("-v,--verbose", verbose, "progress messages on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    workers = resolve_workers(workers);
    if (*run) {
      ScenarioConfig c = config_path.empty() ? ScenarioConfig{} : load_config(config_path);
      if (!scenario.empty()) c.scenario = scenario;
      if (run_nodes > 0) c.mesh.nodes = run_nodes;
      if (magnitude > 0.0) c.magnitude = magnitude;
      if (run_ppc > 0) c.points_per_cell = run_ppc;
      if (max_steps > 0) c.solver.max_steps = max_steps;
      if (!run_node_file.empty() || !run_ele_file.empty()) {
        c.mesh.source = "files";
        c.mesh.node_file = run_node_file;
        c.mesh.ele_file = run_ele_file;
      }
      if (*run_ring) c.cme.ring_count = run_cme.ring_count;
      if (*run_s) c.cme.s = run_cme.s;
      if (!out_dir.empty()) c.output.directory = out_dir;
      if (app.get_option("--workers")->count() > 0 || c.workers == 0) c.workers = workers;
      RunOptions opt;
      if (verbose) opt.log = &std::cerr;
      const auto r = run_scenario(c, opt);
      std::cout << r.report.dump(2) << '\n';
      if (r.exit_code != kExitOk) std::cerr << "error: " << r.error << '\n';
      return r.exit_code;
    }
    if (*beval) {
      std::ofstream file;
      std::ostream& os = open_output(beval_out, file);
      const int dim = beval_mesh.dimension();
      const auto pts = read_points_csv(points_path, dim);
      if (dim == 2) {
        basis_eval<2>(load_mesh<2>(beval_mesh.node_file, beval_mesh.ele_file), beval_cme, pts,
                      workers, os);
      } else {
        basis_eval<3>(beval_mesh.tet_mesh(), beval_cme, pts, workers, os);
      }
      return 0;
    }
    if (*dsample) {
      ds_cme.validate();
      std::ofstream file;
      std::ostream& os = open_output(ds_out, file);
      if (ds_mesh.dimension() == 2) {
        distfield_sample<2>(load_mesh<2>(ds_mesh.node_file, ds_mesh.ele_file), ds_cme, ds, os);
      } else {
        distfield_sample<3>(ds_mesh.tet_mesh(), ds_cme, ds, os);
      }
      return 0;
    }
    if (*minfo) {
      const json j = mi_mesh.dimension() == 2
                         ? mesh_info<2>(load_mesh<2>(mi_mesh.node_file, mi_mesh.ele_file),
                                        mi_ring, workers)
                         : mesh_info<3>(mi_mesh.tet_mesh(), mi_ring, workers);
      std::cout << j.dump(2) << '\n';
      return 0;
    }
    if (*study) {
      ScenarioConfig c = st_config.empty() ? ScenarioConfig{} : load_config(st_config);
      if (!st_scenario.empty()) c.scenario = st_scenario;
      if (st_magnitude > 0.0) c.magnitude = st_magnitude;
      if (st_s > 0) c.cme.s = st_s;
      c.output.directory = st_out;
      if (app.get_option("--workers")->count() > 0 || c.workers == 0) c.workers = workers;
      if (st_nodes.empty() && st_ppc.empty()) {
        throw ConfigError("convergence-study needs --nodes or --points-per-cell");
      }
      const auto rows = convergence_study(c, parse_list<long>(st_nodes, "node"),
                                          parse_list<int>(st_ppc, "quadrature"),
                                          verbose ? &std::cerr : nullptr);
      std::filesystem::create_directories(st_out);
      const std::string csv_path =
          st_csv.empty() ? (std::filesystem::path(st_out) / "study.csv").string() : st_csv;
      std::ofstream csv(csv_path);
      if (!csv) throw Error("cannot open '" + csv_path + "' for writing");
      write_study_csv(csv, rows);
      write_study_csv(std::cout, rows);
      int worst = 0;
      for (const auto& r : rows) worst = std::max(worst, r.exit_code);
      return worst;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
