#pragma once

// Cell-based maximum-entropy approximants: prior weights from approximate
// distances to the nodal support boundaries, the convex dual for the Lagrange
// multipliers and the resulting basis functions with their gradients.

#include "cme/common.hpp"
#include "cme/distfield.hpp"
#include "cme/mesh.hpp"
#include "cme/parallel.hpp"
#include "cme/support.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace cme {

struct CmeParams {
  int ring_count = 2;  // N_R
  int s = 2;           // smoothness exponent of the prior
  int m = 3;           // R-equivalence order
  double alpha = 2.0;  // trim volume shape constant
  int k = 2;           // trim volume exponent (even)
  double tol = 1e-10;  // dual residual tolerance, relative to the local length
  int max_iter = 100;

  void validate() const {
    if (ring_count < 1) throw ConfigError("ring count must be >= 1");
    if (s < 2) throw ConfigError("smoothness exponent s must be >= 2");
    if (m < 1 || m > 16) throw ConfigError("equivalence order m must be in [1, 16]");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (k < 2 || k % 2 != 0) throw ConfigError("k must be an even integer >= 2");
    if (!(tol > 0.0)) throw ConfigError("dual tolerance must be positive");
    if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
  }
};

template <int Dim>
struct PriorEvaluation {
  std::vector<Index> neighbor_ids;
  std::vector<double> w;
  std::vector<Vec<Dim>> grad_w;
  int s = 2;
};

template <int Dim>
struct BasisEvaluation {
  std::vector<Index> neighbor_ids;
  std::vector<double> phi;
  std::vector<Vec<Dim>> grad_phi;
  Vec<Dim> lambda = Vec<Dim>::Zero();
  int iterations = 0;
  double residual_norm = 0.0;
  bool gradient_defined = true;
};

/// Converged multipliers of the dual problem at one point.
template <int Dim>
struct DualSolution {
  Vec<Dim> lambda = Vec<Dim>::Zero();
  int iterations = 0;
  double residual_norm = 0.0;
  double log_partition = 0.0;
  bool regularized = false;
};

/// Per-node distance fields to the support boundaries of a mesh.
template <int Dim>
class NodalDistanceFields {
 public:
  using Patch = PatchType<Dim>;

  NodalDistanceFields() = default;

  NodalDistanceFields(const SimplexMesh<Dim>& mesh,
                      const std::vector<SupportDomain<Dim>>& supports,
                      const CmeParams& params)
      : order_(params.m) {
    offsets_.assign(supports.size() + 1, 0);
    cutoff_.resize(supports.size());
    for (std::size_t a = 0; a < supports.size(); ++a) {
      const auto& sd = supports[a];
      if (sd.boundary_facets.empty()) {
        throw DegenerateError("support of node " + std::to_string(a) +
                              " has no boundary facets");
      }
      Vec<Dim> lo = mesh.node(sd.neighbor_nodes.front());
      Vec<Dim> hi = lo;
      for (Index b : sd.neighbor_nodes) {
        lo = lo.cwiseMin(mesh.node(b));
        hi = hi.cwiseMax(mesh.node(b));
      }
      cutoff_[a] = 1e-14 * (hi - lo).norm();
      for (const auto& f : sd.boundary_facets) {
        if constexpr (Dim == 2) {
          patches_.emplace_back(mesh.node(f[0]), mesh.node(f[1]));
        } else {
          patches_.emplace_back(mesh.node(f[0]), mesh.node(f[1]), mesh.node(f[2]),
                                params.alpha, params.k);
        }
      }
      offsets_[a + 1] = patches_.size();
    }
  }

  std::span<const Patch> patches(Index a) const {
    return {patches_.data() + offsets_[a], patches_.data() + offsets_[a + 1]};
  }
  int order() const { return order_; }
  double zero_cutoff(Index a) const { return cutoff_[a]; }

  FieldValue<Dim> distance(Index a, const Vec<Dim>& x) const {
    return equivalence_distance<Dim>(x, patches(a), order_, cutoff_[a]);
  }

 private:
  int order_ = 3;
  std::vector<Patch> patches_;
  std::vector<std::size_t> offsets_;
  std::vector<double> cutoff_;
};

/// w_a = d_a^s / sum_b d_b^s over the neighbors of x, with gradients.
template <int Dim>
PriorEvaluation<Dim> prior_weights(const Vec<Dim>& x, std::span<const Index> neighbors,
                                   const NodalDistanceFields<Dim>& fields, int s) {
  if (s < 2) throw ConfigError("smoothness exponent s must be >= 2");
  const std::size_t n = neighbors.size();
  PriorEvaluation<Dim> out;
  out.s = s;
  out.neighbor_ids.assign(neighbors.begin(), neighbors.end());
  out.w.resize(n);
  out.grad_w.resize(n);
  double total = 0.0;
  Vec<Dim> total_grad = Vec<Dim>::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const auto d = fields.distance(neighbors[i], x);
    const double ds1 = detail::ipow(d.value, s - 1);
    out.w[i] = ds1 * d.value;
    // d = 0 has an undefined gradient but d^s has a zero one for s >= 2.
    out.grad_w[i] = d.value > 0.0 ? Vec<Dim>(s * ds1 * d.gradient) : Vec<Dim>::Zero();
    total += out.w[i];
    total_grad += out.grad_w[i];
  }
  if (!(total > 0.0)) {
    throw DegenerateError("all prior weights vanish at the evaluation point");
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.w[i] /= total;
    out.grad_w[i] = (out.grad_w[i] - out.w[i] * total_grad) / total;
  }
  return out;
}

namespace detail {

// ln Z and the probabilities phi at lambda, with y_a = x - x_a (scaled).
template <int Dim>
double log_partition(const std::vector<Vec<Dim>>& y, const std::vector<double>& w,
                     const Vec<Dim>& lambda, std::vector<double>& phi) {
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (w[i] > 0.0) shift = std::max(shift, lambda.dot(y[i]));
  }
  double z = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    phi[i] = w[i] > 0.0 ? w[i] * std::exp(lambda.dot(y[i]) - shift) : 0.0;
    z += phi[i];
  }
  for (double& p : phi) p /= z;
  return std::log(z) + shift;
}

}  // namespace detail

/// Damped Newton on F(lambda) = ln Z(lambda) starting from lambda = 0.
///
/// The residual r = sum phi_a (x - x_a) is driven below tol * h where h is
/// the largest distance from x to an active node. Steps are halved until
/// ln Z does not increase. The Hessian is regularized with 1e-10 trace(J)
/// when its condition number exceeds 1e12. If `objective_trace` is given,
/// ln Z at every accepted iterate is appended to it.
template <int Dim>
DualSolution<Dim> solve_dual(const Vec<Dim>& x, std::span<const Vec<Dim>> nodes,
                             std::span<const double> w, double tol, int max_iter,
                             std::vector<double>* objective_trace = nullptr) {
  const std::size_t n = nodes.size();
  DualSolution<Dim> sol;
  double h = 0.0;
  std::size_t active = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] > 0.0) {
      ++active;
      h = std::max(h, (x - nodes[i]).norm());
    }
  }
  if (active == 0) throw DegenerateError("no active node in the dual problem");
  if (active == 1 || h == 0.0) return sol;

  // Work with y = (x - x_a) / h and lambda_scaled = lambda * h.
  std::vector<Vec<Dim>> y(n);
  std::vector<double> wv(w.begin(), w.end());
  for (std::size_t i = 0; i < n; ++i) y[i] = (x - nodes[i]) / h;
  std::vector<double> phi(n), phi_trial(n);
  Vec<Dim> lam = Vec<Dim>::Zero();
  double lnz = detail::log_partition<Dim>(y, wv, lam, phi);
  if (objective_trace) objective_trace->push_back(lnz);

  for (int it = 0;; ++it) {
    Vec<Dim> r = Vec<Dim>::Zero();
    Mat<Dim> J = Mat<Dim>::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      r += phi[i] * y[i];
      J += phi[i] * y[i] * y[i].transpose();
    }
    J -= r * r.transpose();
    sol.residual_norm = r.norm();
    sol.iterations = it;
    if (sol.residual_norm <= tol) break;
    if (it >= max_iter) {
      throw ConvergenceError("dual Newton did not converge in " +
                                 std::to_string(max_iter) + " iterations",
                             sol.residual_norm * h);
    }

    Eigen::SelfAdjointEigenSolver<Mat<Dim>> eig(J, Eigen::EigenvaluesOnly);
    const double emax = eig.eigenvalues().maxCoeff();
    const double emin = eig.eigenvalues().minCoeff();
    if (!(emax > 0.0)) throw DegenerateError("dual Hessian vanishes");
    if (!(emin > 0.0) || emax / emin > 1e12) {
      J += 1e-10 * J.trace() * Mat<Dim>::Identity();
      sol.regularized = true;
    }
    const Vec<Dim> step = J.ldlt().solve(-r);
    if (!step.allFinite()) throw DegenerateError("singular dual Hessian");

    double scale = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vec<Dim> trial = lam + scale * step;
      const double lnz_trial = detail::log_partition<Dim>(y, wv, trial, phi_trial);
      if (lnz_trial <= lnz + 1e-14 * std::max(1.0, std::abs(lnz))) {
        lam = trial;
        lnz = std::min(lnz, lnz_trial);
        phi.swap(phi_trial);
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      throw ConvergenceError("dual line search failed", sol.residual_norm * h);
    }
    if (objective_trace) objective_trace->push_back(lnz);
  }
  sol.lambda = lam / h;
  sol.log_partition = lnz;
  sol.residual_norm *= h;
  return sol;
}

/// Basis values and gradients at x from prior weights and node positions.
template <int Dim>
BasisEvaluation<Dim> maxent_basis(const Vec<Dim>& x, std::span<const Vec<Dim>> nodes,
                                  const PriorEvaluation<Dim>& prior, double tol,
                                  int max_iter) {
  const std::size_t n = nodes.size();
  BasisEvaluation<Dim> out;
  out.neighbor_ids = prior.neighbor_ids;
  out.phi.assign(n, 0.0);
  out.grad_phi.assign(n, Vec<Dim>::Zero());

  const auto sol = solve_dual<Dim>(x, nodes, prior.w, tol, max_iter);
  out.lambda = sol.lambda;
  out.iterations = sol.iterations;
  out.residual_norm = sol.residual_norm;
  if (sol.regularized) out.gradient_defined = false;

  // g_a = exp(lambda . y_a) / Z stays finite for w_a = 0.
  std::vector<Vec<Dim>> y(n);
  std::vector<double> g(n);
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = x - nodes[i];
    if (prior.w[i] > 0.0) shift = std::max(shift, sol.lambda.dot(y[i]));
  }
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = std::exp(sol.lambda.dot(y[i]) - shift);
    z += prior.w[i] * g[i];
  }
  Vec<Dim> r = Vec<Dim>::Zero();
  Mat<Dim> J = Mat<Dim>::Zero();
  Mat<Dim> A = Mat<Dim>::Zero();
  Vec<Dim> sum_g_grad_w = Vec<Dim>::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    g[i] /= z;
    out.phi[i] = prior.w[i] * g[i];
    r += out.phi[i] * y[i];
    J += out.phi[i] * y[i] * y[i].transpose();
    A += g[i] * prior.grad_w[i] * y[i].transpose();
    sum_g_grad_w += g[i] * prior.grad_w[i];
  }
  J -= r * r.transpose();
  if (n == 1 || std::count_if(prior.w.begin(), prior.w.end(),
                              [](double v) { return v > 0.0; }) == 1) {
    // Single active node: phi is the indicator of that node.
    return out;
  }
  // D lambda = -(A + I) J^-1, with (D lambda)_ij = d lambda_j / d x_i.
  const Eigen::FullPivLU<Mat<Dim>> lu(J);
  if (!lu.isInvertible()) {
    out.gradient_defined = false;
    return out;
  }
  const Mat<Dim> dlambda = -(A + Mat<Dim>::Identity()) * lu.inverse();
  for (std::size_t i = 0; i < n; ++i) {
    out.grad_phi[i] = g[i] * prior.grad_w[i] +
                      out.phi[i] * (dlambda * y[i] - sum_g_grad_w);
  }
  return out;
}

/// CME approximant over a simplicial mesh: supports, distance fields and the
/// cell-to-neighbor map built once, basis evaluation as a pure function.
template <int Dim>
class CmeApproximant {
 public:
  CmeApproximant(const SimplexMesh<Dim>& mesh, const CmeParams& params,
                 unsigned workers = 1)
      : mesh_(&mesh), params_(params) {
    params_.validate();
    supports_ = build_supports(mesh, params_.ring_count, workers);
    neighbors_ = CellNeighborMap(mesh.num_cells(), supports_);
    fields_ = NodalDistanceFields<Dim>(mesh, supports_, params_);
  }

  const SimplexMesh<Dim>& mesh() const { return *mesh_; }
  const CmeParams& params() const { return params_; }
  const std::vector<SupportDomain<Dim>>& supports() const { return supports_; }
  const CellNeighborMap& cell_neighbors() const { return neighbors_; }
  const NodalDistanceFields<Dim>& fields() const { return fields_; }

  PriorEvaluation<Dim> prior(const Vec<Dim>& x, Index cell) const {
    return prior_weights<Dim>(x, neighbors_[cell], fields_, params_.s);
  }

  /// Basis at x, which must lie in `cell`.
  BasisEvaluation<Dim> basis(const Vec<Dim>& x, Index cell) const {
    const auto prior_eval = prior(x, cell);
    std::vector<Vec<Dim>> coords;
    coords.reserve(prior_eval.neighbor_ids.size());
    for (Index a : prior_eval.neighbor_ids) coords.push_back(mesh_->node(a));
    return maxent_basis<Dim>(x, coords, prior_eval, params_.tol, params_.max_iter);
  }

  /// Basis at an arbitrary point; locates the containing cell first.
  BasisEvaluation<Dim> basis(const Vec<Dim>& x) const {
    const auto cell = locate_point(*mesh_, x);
    if (!cell) throw DegenerateError("evaluation point lies outside the mesh");
    return basis(x, *cell);
  }

 private:
  const SimplexMesh<Dim>* mesh_;
  CmeParams params_;
  std::vector<SupportDomain<Dim>> supports_;
  CellNeighborMap neighbors_;
  NodalDistanceFields<Dim> fields_;
};

}  // namespace cme
