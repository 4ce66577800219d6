#pragma once

// Meshless total-Lagrangian explicit dynamics: lumped mass, internal forces
// from cached reference gradients, critical time step estimation and damped
// central-difference stepping (dynamic relaxation) to steady state with
// essential boundary conditions imposed directly on nodal values.

#include "cme/common.hpp"
#include "cme/material.hpp"
#include "cme/maxent.hpp"
#include "cme/mesh.hpp"
#include "cme/parallel.hpp"
#include "cme/quadrature.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cme {

/// Quadrature points with their cached basis values and reference gradients
/// (compressed rows), and the transposed node -> entry map used to gather
/// nodal forces in a fixed order.
class BasisCache {
 public:
  BasisCache() = default;

  BasisCache(const CmeApproximant<3>& approx, std::vector<QuadraturePoint> points,
             unsigned workers = 1)
      : points_(std::move(points)) {
    const Index num_nodes = approx.mesh().num_nodes();
    std::vector<BasisEvaluation<3>> evals(points_.size());
    parallel_for(points_.size(), workers, [&](std::size_t q) {
      evals[q] = approx.basis(points_[q].position, points_[q].cell);
      if (!evals[q].gradient_defined) {
        throw DegenerateError("quadrature point " + std::to_string(q) +
                              " lies on a support boundary");
      }
    });

    offsets_.assign(points_.size() + 1, 0);
    for (std::size_t q = 0; q < points_.size(); ++q) {
      offsets_[q + 1] = offsets_[q] + evals[q].neighbor_ids.size();
    }
    if (offsets_.back() > std::numeric_limits<std::uint32_t>::max()) {
      throw ConfigError("too many basis entries for the cache");
    }
    nodes_.resize(offsets_.back());
    phi_.resize(offsets_.back());
    grad_.resize(3 * offsets_.back());
    max_iterations_ = 0;
    for (std::size_t q = 0; q < points_.size(); ++q) {
      auto& e = evals[q];
      for (std::size_t k = 0; k < e.neighbor_ids.size(); ++k) {
        const std::size_t slot = offsets_[q] + k;
        nodes_[slot] = e.neighbor_ids[k];
        phi_[slot] = e.phi[k];
        for (int d = 0; d < 3; ++d) grad_[3 * slot + d] = e.grad_phi[k](d);
      }
      max_iterations_ = std::max(max_iterations_, e.iterations);
      e = {};
    }

    node_offsets_.assign(static_cast<std::size_t>(num_nodes) + 1, 0);
    for (Index a : nodes_) ++node_offsets_[a + 1];
    for (Index a = 0; a < num_nodes; ++a) node_offsets_[a + 1] += node_offsets_[a];
    node_entries_.resize(nodes_.size());
    entry_point_.resize(nodes_.size());
    auto fill = node_offsets_;
    for (std::size_t q = 0; q < points_.size(); ++q) {
      for (std::size_t slot = offsets_[q]; slot < offsets_[q + 1]; ++slot) {
        node_entries_[fill[nodes_[slot]]++] = static_cast<std::uint32_t>(slot);
        entry_point_[slot] = static_cast<std::uint32_t>(q);
      }
    }
  }

  std::size_t num_points() const { return points_.size(); }
  Index num_nodes() const { return static_cast<Index>(node_offsets_.size()) - 1; }
  const std::vector<QuadraturePoint>& points() const { return points_; }
  std::size_t begin(std::size_t q) const { return offsets_[q]; }
  std::size_t end(std::size_t q) const { return offsets_[q + 1]; }
  Index node(std::size_t slot) const { return nodes_[slot]; }
  double phi(std::size_t slot) const { return phi_[slot]; }
  const double* grad(std::size_t slot) const { return &grad_[3 * slot]; }
  std::uint32_t point_of(std::size_t slot) const { return entry_point_[slot]; }
  std::span<const std::uint32_t> node_entries(Index a) const {
    return {node_entries_.data() + node_offsets_[a],
            node_entries_.data() + node_offsets_[a + 1]};
  }
  std::size_t num_entries() const { return nodes_.size(); }
  int max_dual_iterations() const { return max_iterations_; }

  double total_weight() const {
    double v = 0.0;
    for (const auto& p : points_) v += p.weight;
    return v;
  }

 private:
  std::vector<QuadraturePoint> points_;
  std::vector<std::size_t> offsets_;
  std::vector<Index> nodes_;
  std::vector<double> phi_;
  std::vector<double> grad_;
  std::vector<std::size_t> node_offsets_;
  std::vector<std::uint32_t> node_entries_;
  std::vector<std::uint32_t> entry_point_;
  int max_iterations_ = 0;
};

/// Row-sum lumped masses m_a = sum_q w_q rho0 phi_a(x_q).
inline std::vector<double> lumped_mass(const BasisCache& cache, double density) {
  std::vector<double> mass(cache.num_nodes(), 0.0);
  for (Index a = 0; a < cache.num_nodes(); ++a) {
    double m = 0.0;
    for (std::uint32_t slot : cache.node_entries(a)) {
      m += cache.points()[cache.point_of(slot)].weight * cache.phi(slot);
    }
    mass[a] = density * m;
    if (!(mass[a] > 0.0)) {
      throw DegenerateError("non-positive lumped mass at node " + std::to_string(a));
    }
  }
  return mass;
}

/// Discretized solid: cached basis, material and lumped masses. Nodal vectors
/// are interleaved xyz, size 3 * num_nodes.
class MtledModel {
 public:
  MtledModel(const TetMesh& mesh, BasisCache cache, NeoHookean material,
             unsigned workers = 1)
      : mesh_(&mesh),
        cache_(std::move(cache)),
        material_(material),
        workers_(std::max(1u, workers)) {
    mass_ = lumped_mass(cache_, material_.density());
    stress_.resize(9 * cache_.num_points());
    energy_.resize(cache_.num_points());
  }

  const TetMesh& mesh() const { return *mesh_; }
  const BasisCache& cache() const { return cache_; }
  const NeoHookean& material() const { return material_; }
  const std::vector<double>& mass() const { return mass_; }
  Index num_nodes() const { return mesh_->num_nodes(); }
  std::size_t num_dofs() const { return 3 * static_cast<std::size_t>(num_nodes()); }
  unsigned workers() const { return workers_; }
  void set_workers(unsigned w) { workers_ = std::max(1u, w); }

  /// Deformation gradient F = I + sum_b u_b (x) grad phi_b at point q.
  Mat3 deformation_gradient(std::span<const double> u, std::size_t q) const {
    Mat3 F = Mat3::Identity();
    for (std::size_t slot = cache_.begin(q); slot < cache_.end(q); ++slot) {
      const double* ub = &u[3 * static_cast<std::size_t>(cache_.node(slot))];
      const double* g = cache_.grad(slot);
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) F(i, j) += ub[i] * g[j];
      }
    }
    return F;
  }

  /// Internal forces f_a = sum_q w_q (F S)_q grad phi_a(x_q). Returns the
  /// volume-weighted mean strain energy density. Per-point energy densities
  /// are kept for point_energy().
  double internal_forces(std::span<const double> u, std::span<double> f) const {
    const std::size_t nq = cache_.num_points();
    const auto& pts = cache_.points();
    parallel_for(nq, workers_, [&](std::size_t q) {
      const Mat3 F = deformation_gradient(u, q);
      if (!(F.determinant() > 0.0)) {
        throw InversionError("inverted deformation at quadrature point " +
                                 std::to_string(q) + " (cell " +
                                 std::to_string(pts[q].cell) + ")",
                             static_cast<std::int64_t>(q));
      }
      double w = 0.0;
      const Mat3 P = material_.pk1_stress(F, &w);
      energy_[q] = w;
      double* out = &stress_[9 * q];
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) out[3 * i + j] = pts[q].weight * P(i, j);
      }
    });
    parallel_for(static_cast<std::size_t>(num_nodes()), workers_, [&](std::size_t a) {
      double fx = 0.0, fy = 0.0, fz = 0.0;
      for (std::uint32_t slot : cache_.node_entries(static_cast<Index>(a))) {
        const double* P = &stress_[9 * cache_.point_of(slot)];
        const double* g = cache_.grad(slot);
        fx += P[0] * g[0] + P[1] * g[1] + P[2] * g[2];
        fy += P[3] * g[0] + P[4] * g[1] + P[5] * g[2];
        fz += P[6] * g[0] + P[7] * g[1] + P[8] * g[2];
      }
      f[3 * a] = fx;
      f[3 * a + 1] = fy;
      f[3 * a + 2] = fz;
    });
    double total = 0.0, vol = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      total += pts[q].weight * energy_[q];
      vol += pts[q].weight;
    }
    return total / vol;
  }

  /// Strain energy density at point q from the last internal_forces() call.
  double point_energy(std::size_t q) const { return energy_[q]; }

  /// Total strain energy sum_q w_q W(F_q).
  double strain_energy(std::span<const double> u) const {
    double total = 0.0;
    for (std::size_t q = 0; q < cache_.num_points(); ++q) {
      total += cache_.points()[q].weight *
               material_.strain_energy(deformation_gradient(u, q));
    }
    return total;
  }

  /// Volume-weighted mean energy density per original cell, from the last
  /// internal_forces() call.
  std::vector<double> cell_energy_density() const {
    std::vector<double> sum(mesh_->num_cells(), 0.0), vol(mesh_->num_cells(), 0.0);
    const auto& pts = cache_.points();
    for (std::size_t q = 0; q < pts.size(); ++q) {
      sum[pts[q].cell] += pts[q].weight * energy_[q];
      vol[pts[q].cell] += pts[q].weight;
    }
    for (std::size_t c = 0; c < sum.size(); ++c) sum[c] = vol[c] > 0.0 ? sum[c] / vol[c] : 0.0;
    return sum;
  }

 private:
  const TetMesh* mesh_;
  BasisCache cache_;
  NeoHookean material_;
  unsigned workers_;
  std::vector<double> mass_;
  mutable std::vector<double> stress_;
  mutable std::vector<double> energy_;
};

struct CriticalTimestep {
  double dt_crit = 0.0;       // 2 / omega_max
  double omega_max = 0.0;
  double gershgorin_dt = 0.0;  // 2 / sqrt(Gershgorin bound on omega^2)
  int iterations = 0;
  bool converged = false;      // false: power iteration failed, Gershgorin used
  double safety_factor = 0.9;
  std::vector<double> mode;    // last power-iteration vector
};

/// Upper bound on the largest eigenvalue of M^-1 K at u = 0 from row sums of
/// the isotropic linearized stiffness.
inline double gershgorin_omega2(const MtledModel& model) {
  const auto& cache = model.cache();
  const double modulus = model.material().lambda() + 2.0 * model.material().mu();
  std::vector<double> grad_l1_sum(cache.num_points(), 0.0);
  for (std::size_t q = 0; q < cache.num_points(); ++q) {
    for (std::size_t slot = cache.begin(q); slot < cache.end(q); ++slot) {
      const double* g = cache.grad(slot);
      grad_l1_sum[q] += std::abs(g[0]) + std::abs(g[1]) + std::abs(g[2]);
    }
  }
  double bound = 0.0;
  for (Index a = 0; a < model.num_nodes(); ++a) {
    double row = 0.0;
    for (std::uint32_t slot : cache.node_entries(a)) {
      const std::uint32_t q = cache.point_of(slot);
      const double* g = cache.grad(slot);
      row += cache.points()[q].weight * modulus *
             (std::abs(g[0]) + std::abs(g[1]) + std::abs(g[2])) * grad_l1_sum[q];
    }
    bound = std::max(bound, row / model.mass()[a]);
  }
  return bound;
}

struct PowerIteration {
  double eigenvalue = 0.0;  // Rayleigh quotient of the last iterate
  int iterations = 0;
  bool converged = false;
};

/// Largest eigenvalue of M^-1/2 K(u) M^-1/2, K(u) the tangent stiffness at
/// `base` (empty: u = 0), by power iteration with
/// K v ~ [f(base + eps v) - f(base)] / eps. `x` holds the start vector and
/// returns the last iterate.
inline PowerIteration max_eigenvalue(const MtledModel& model, std::span<const double> base,
                                     std::vector<double>& x, int max_iter, double rel_tol) {
  const std::size_t n = model.num_dofs();
  const auto& mass = model.mass();
  std::vector<double> y(n), probe(n), force(n), f0(n, 0.0);
  if (!base.empty()) model.internal_forces(base, f0);

  auto normalize = [](std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    s = std::sqrt(s);
    for (double& e : v) e /= s;
  };
  normalize(x);
  const double diam = model.mesh().diameter();

  PowerIteration out;
  double mu_prev = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    // y = M^-1/2 x, scaled so the probe displacement is tiny.
    double ymax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = x[i] / std::sqrt(mass[i / 3]);
      ymax = std::max(ymax, std::abs(y[i]));
    }
    const double eps = 1e-7 * diam / ymax;
    for (std::size_t i = 0; i < n; ++i) probe[i] = (base.empty() ? 0.0 : base[i]) + eps * y[i];
    model.internal_forces(probe, force);
    double rayleigh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ky = (force[i] - f0[i]) / eps;
      y[i] = ky / std::sqrt(mass[i / 3]);  // A x
      rayleigh += x[i] * y[i];
    }
    x.swap(y);
    normalize(x);
    out.iterations = it;
    out.eigenvalue = rayleigh;
    if (it > 5 && std::abs(rayleigh - mu_prev) <= rel_tol * std::abs(rayleigh)) {
      out.converged = true;
      break;
    }
    mu_prev = rayleigh;
  }
  return out;
}

/// Delta t_crit = 2 / omega_max, omega_max^2 the largest eigenvalue of
/// M^-1 K about u = 0. Falls back to the Gershgorin bound when the power
/// iteration does not settle within `max_iter`.
inline CriticalTimestep critical_timestep(const MtledModel& model, double safety_factor = 0.9,
                                          int max_iter = 1000, double rel_tol = 1e-5,
                                          std::uint64_t seed = 12345) {
  std::vector<double> x(model.num_dofs());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (double& v : x) v = dist(rng);
  const auto pi = max_eigenvalue(model, {}, x, max_iter, rel_tol);

  CriticalTimestep out;
  out.safety_factor = safety_factor;
  out.mode = std::move(x);
  out.iterations = pi.iterations;
  out.converged = pi.converged;
  out.gershgorin_dt = 2.0 / std::sqrt(gershgorin_omega2(model));
  if (out.converged) {
    out.omega_max = std::sqrt(pi.eigenvalue);
    out.dt_crit = 2.0 / out.omega_max;
  } else {
    out.dt_crit = out.gershgorin_dt;
    out.omega_max = 2.0 / out.dt_crit;
  }
  return out;
}

/// Prescribed displacement for a group of nodes, reached at full load.
struct BoundaryCondition {
  std::vector<Index> nodes;
  std::array<bool, 3> axes{true, true, true};
  Vec3 target = Vec3::Zero();
};

/// Flattened essential boundary conditions: dof -> full-load value.
class Constraints {
 public:
  Constraints() = default;
  Constraints(Index num_nodes, const std::vector<BoundaryCondition>& bcs) {
    std::map<std::size_t, double> merged;
    for (const auto& bc : bcs) {
      if (bc.nodes.empty()) continue;
      if (!bc.axes[0] && !bc.axes[1] && !bc.axes[2]) {
        throw ConfigError("boundary condition with no constrained axis");
      }
      for (Index a : bc.nodes) {
        if (a < 0 || a >= num_nodes) {
          throw ConfigError("boundary condition references node " + std::to_string(a));
        }
        for (int d = 0; d < 3; ++d) {
          if (!bc.axes[d]) continue;
          const std::size_t dof = 3 * static_cast<std::size_t>(a) + d;
          auto [it, inserted] = merged.emplace(dof, bc.target(d));
          if (!inserted && it->second != bc.target(d)) {
            throw ConfigError("conflicting prescribed values on node " +
                              std::to_string(a));
          }
        }
      }
    }
    free_.assign(3 * static_cast<std::size_t>(num_nodes), 1);
    for (const auto& [dof, value] : merged) {
      dofs_.push_back(dof);
      values_.push_back(value);
      free_[dof] = 0;
    }
  }

  const std::vector<std::size_t>& dofs() const { return dofs_; }
  const std::vector<double>& values() const { return values_; }
  bool is_free(std::size_t dof) const { return free_[dof] != 0; }

 private:
  std::vector<std::size_t> dofs_;
  std::vector<double> values_;
  std::vector<char> free_;
};

/// Smooth ramp 3 tau^2 - 2 tau^3 clamped to [0, 1].
inline double smooth_ramp(double tau) {
  tau = std::clamp(tau, 0.0, 1.0);
  return tau * tau * (3.0 - 2.0 * tau);
}

/// Damped central difference for one dof:
/// u+ = u + (2 - c dt)/(2 + c dt) (u - u-) + 2 dt^2 / (2 + c dt) * r / m.
inline double central_difference(double u, double u_prev, double residual_force,
                                 double mass, double damping, double dt) {
  const double denom = 2.0 + damping * dt;
  return u + (2.0 - damping * dt) / denom * (u - u_prev) +
         2.0 * dt * dt / denom * residual_force / mass;
}

struct SolverConfig {
  double tol_u = 1e-7;        // m, max nodal increment for convergence
  int window = 100;           // consecutive converged steps required
  long max_steps = 20000;
  long ramp_steps = 2000;     // 0: 60% of max_steps
  double safety_factor = 0.9; // dt = safety_factor * dt_crit
  int damping_interval = 100;
  double divergence_factor = 10.0;  // max |u| / domain diameter
  double divergence_growth = 4.0;   // per-step growth of the max increment ...
  int divergence_growth_steps = 3;  // ... sustained this many steps
  bool adaptive_timestep = true;    // re-estimate omega_max every damping_interval
  int timestep_iterations = 25;
  int trace_interval = 10;

  long effective_ramp_steps() const {
    return ramp_steps > 0 ? ramp_steps : std::max(1L, static_cast<long>(0.6 * max_steps));
  }

  void validate() const {
    if (!(tol_u > 0.0)) throw ConfigError("tol_u must be positive");
    if (window < 1) throw ConfigError("window must be >= 1");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (ramp_steps < 0) throw ConfigError("ramp_steps must be >= 0");
    if (!(safety_factor > 0.0)) throw ConfigError("safety_factor must be positive");
    if (damping_interval < 1) throw ConfigError("damping_interval must be >= 1");
    if (!(divergence_factor > 0.0)) throw ConfigError("divergence_factor must be positive");
    if (!(divergence_growth > 1.0)) throw ConfigError("divergence_growth must be > 1");
    if (divergence_growth_steps < 1) throw ConfigError("divergence_growth_steps must be >= 1");
    if (timestep_iterations < 1) throw ConfigError("timestep_iterations must be >= 1");
    if (trace_interval < 1) throw ConfigError("trace_interval must be >= 1");
  }
};

struct SolverState {
  std::vector<double> u, u_prev;
  std::vector<double> f_int, f_int_prev, f_ext;
  std::vector<double> mass;
  double dt = 0.0;
  long step = 0;
  double load_factor = 0.0;
  double damping = 0.0;  // 1/s
  double max_increment = 0.0;
  double mean_energy = 0.0;
  int growth_run = 0;  // consecutive steps of fast increment growth
};

struct TraceRow {
  long step;
  double max_increment;
  double load_factor;
  double mean_energy;
};

struct SteadyStateReport {
  bool converged = false;
  long steps = 0;  // N_exe
  double wall_seconds = 0.0;
  CriticalTimestep timestep;
  double dt = 0.0;
  double final_max_increment = 0.0;
  double min_dt = 0.0;
  double mean_energy = 0.0;
  double damping = 0.0;
  double max_constraint_error = 0.0;
};

/// Dynamic relaxation driver: fixed lumped mass, damping c = 2 omega_min with
/// omega_min^2 re-estimated every `damping_interval` steps from the Rayleigh
/// quotient of the last displacement increment over the free dofs.
class DynamicRelaxation {
 public:
  DynamicRelaxation(const MtledModel& model, Constraints constraints, SolverConfig config)
      : model_(&model), constraints_(std::move(constraints)), config_(config) {
    config_.validate();
    const std::size_t n = model.num_dofs();
    state_.u.assign(n, 0.0);
    state_.u_prev.assign(n, 0.0);
    state_.f_int.assign(n, 0.0);
    state_.f_int_prev.assign(n, 0.0);
    state_.f_ext.assign(n, 0.0);
    state_.mass = model.mass();
  }

  SolverState& state() { return state_; }
  const SolverState& state() const { return state_; }
  const Constraints& constraints() const { return constraints_; }
  const SolverConfig& config() const { return config_; }

  void set_timestep(double dt) {
    if (!(dt > 0.0)) throw ConfigError("time step must be positive");
    state_.dt = dt;
  }

  /// Advances one step from u^n to u^(n+1).
  void step() {
    auto& s = state_;
    const std::size_t n = s.u.size();
    s.mean_energy = model_->internal_forces(s.u, s.f_int);

    if (s.step >= 1 && (s.step == 1 || s.step % config_.damping_interval == 0)) {
      update_damping();
    }
    if (config_.adaptive_timestep && s.step >= 1 && s.step % config_.damping_interval == 0) {
      update_timestep();
    }

    std::vector<double> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = central_difference(s.u[i], s.u_prev[i], s.f_ext[i] - s.f_int[i],
                                   s.mass[i / 3], s.damping, s.dt);
    }
    s.load_factor = smooth_ramp(static_cast<double>(s.step + 1) /
                                static_cast<double>(config_.effective_ramp_steps()));
    const auto& dofs = constraints_.dofs();
    const auto& vals = constraints_.values();
    for (std::size_t k = 0; k < dofs.size(); ++k) next[dofs[k]] = s.load_factor * vals[k];

    const double limit = config_.divergence_factor * model_->mesh().diameter();
    double max_inc = 0.0;
    for (std::size_t a = 0; a < n / 3; ++a) {
      double inc2 = 0.0;
      for (int d = 0; d < 3; ++d) {
        const double v = next[3 * a + d];
        if (!std::isfinite(v) || std::abs(v) > limit) {
          throw InstabilityError("explicit integration diverged at step " +
                                     std::to_string(s.step + 1),
                                 s.step + 1);
        }
        const double diff = v - s.u[3 * a + d];
        inc2 += diff * diff;
      }
      max_inc = std::max(max_inc, inc2);
    }
    const double inc = std::sqrt(max_inc);
    if (inc > config_.tol_u && inc > config_.divergence_growth * s.max_increment) {
      if (++s.growth_run >= config_.divergence_growth_steps) {
        throw InstabilityError("explicit integration diverged at step " +
                                   std::to_string(s.step + 1) +
                                   " (increment growing geometrically)",
                               s.step + 1);
      }
    } else {
      s.growth_run = 0;
    }
    s.max_increment = inc;
    s.u_prev.swap(s.u);
    s.u.swap(next);
    s.f_int_prev.swap(s.f_int);
    ++s.step;
  }

  /// Steps until the max nodal increment stays below tol_u for `window`
  /// consecutive steps after the ramp, or the step budget runs out.
  SteadyStateReport run(const CriticalTimestep& timestep,
                        const std::function<void(const TraceRow&)>& trace = {}) {
    const auto start = std::chrono::steady_clock::now();
    SteadyStateReport report;
    report.timestep = timestep;
    set_timestep(config_.safety_factor * timestep.dt_crit);
    mode_ = timestep.mode;
    report.dt = state_.dt;
    const long ramp = config_.effective_ramp_steps();
    int quiet = 0;
    while (state_.step < config_.max_steps) {
      step();
      if (trace && (state_.step % config_.trace_interval == 0 || state_.step == 1)) {
        trace({state_.step, state_.max_increment, state_.load_factor, state_.mean_energy});
      }
      if (state_.step >= ramp) {
        quiet = state_.max_increment < config_.tol_u ? quiet + 1 : 0;
        if (quiet >= config_.window) {
          report.converged = true;
          break;
        }
      }
    }
    // Energies and forces at the final configuration.
    state_.mean_energy = model_->internal_forces(state_.u, state_.f_int);
    report.steps = state_.step;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.final_max_increment = state_.max_increment;
    report.min_dt = state_.dt;
    report.mean_energy = state_.mean_energy;
    report.damping = state_.damping;
    report.max_constraint_error = max_constraint_error();
    return report;
  }

  /// max |u_dof - load_factor * target| over constrained dofs.
  double max_constraint_error() const {
    double err = 0.0;
    const auto& dofs = constraints_.dofs();
    const auto& vals = constraints_.values();
    for (std::size_t k = 0; k < dofs.size(); ++k) {
      err = std::max(err, std::abs(state_.u[dofs[k]] - state_.load_factor * vals[k]));
    }
    return err;
  }

 private:
  void update_damping() {
    auto& s = state_;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.u.size(); ++i) {
      if (!constraints_.is_free(i)) continue;
      const double du = s.u[i] - s.u_prev[i];
      num += du * (s.f_int[i] - s.f_int_prev[i]);
      den += du * du * s.mass[i / 3];
    }
    if (!(den > 0.0) || !(num > 0.0)) return;
    const double c = 2.0 * std::sqrt(num / den);
    if (std::isfinite(c)) s.damping = std::min(c, 1.0 / s.dt);
  }

  /// Shrinks dt to safety_factor * 2 / omega_max(u) with a warm-started
  /// power iteration on the tangent stiffness; the velocity is preserved.
  void update_timestep() {
    auto& s = state_;
    if (mode_.size() != s.u.size()) {
      mode_.resize(s.u.size());
      std::mt19937_64 rng(12345);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (double& v : mode_) v = dist(rng);
    }
    const auto pi = max_eigenvalue(*model_, s.u, mode_, config_.timestep_iterations, 1e-4);
    if (!(pi.eigenvalue > 0.0)) return;
    const double dt = config_.safety_factor * 2.0 / std::sqrt(pi.eigenvalue);
    if (dt >= s.dt) return;
    const double r = dt / s.dt;
    for (std::size_t i = 0; i < s.u.size(); ++i) s.u_prev[i] = s.u[i] - r * (s.u[i] - s.u_prev[i]);
    s.dt = dt;
  }

  const MtledModel* model_;
  Constraints constraints_;
  SolverConfig config_;
  SolverState state_;
  std::vector<double> mode_;
};

}  // namespace cme
