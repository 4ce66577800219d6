#pragma once

// Smooth approximate distance fields to piecewise-linear boundaries built
// with R-functions: segments in 2D, triangles in 3D, joined by the m-th order
// R-equivalence.

#include "cme/common.hpp"

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace cme {

/// Value and gradient of a distance-like field. `gradient_defined` is false
/// on the zero set (and at other singular loci); the gradient is then zero
/// and must not be consumed.
template <int Dim>
struct FieldValue {
  double value = 0.0;
  Vec<Dim> gradient = Vec<Dim>::Zero();
  bool gradient_defined = true;
};

struct SegmentPatch {
  Vec2 x1, x2;
  Vec2 center;
  double length = 0.0;

  SegmentPatch() = default;
  SegmentPatch(const Vec2& a, const Vec2& b)
      : x1(a), x2(b), center(0.5 * (a + b)), length((b - a).norm()) {
    if (!(length > 0.0)) throw DegenerateError("segment patch has zero length");
  }
};

/// Triangle with its carrier plane and the three edge planes orthogonal to
/// it, stored as unit normals plus offsets so f(x) = n.x - offset.
struct TrianglePatch {
  std::array<Vec3, 3> v;
  Vec3 normal;
  double normal_offset = 0.0;
  std::array<Vec3, 3> edge_normals;  // point toward the triangle interior
  std::array<double, 3> edge_offsets{};
  double alpha = 2.0;
  int k = 2;

  TrianglePatch() = default;
  TrianglePatch(const Vec3& a, const Vec3& b, const Vec3& c, double alpha_ = 2.0,
                int k_ = 2)
      : v{a, b, c}, alpha(alpha_), k(k_) {
    if (alpha < 0.0) throw ConfigError("trim shape constant alpha must be >= 0");
    if (k < 2 || k % 2 != 0) throw ConfigError("trim exponent k must be an even integer >= 2");
    const Vec3 n = (b - a).cross(c - a);
    const double area2 = n.norm();
    if (!(area2 > 0.0)) throw DegenerateError("triangle patch has zero area");
    normal = n / area2;
    normal_offset = normal.dot(a);
    for (int j = 0; j < 3; ++j) {
      const Vec3& p = v[j];
      const Vec3& q = v[(j + 1) % 3];
      const Vec3& opposite = v[(j + 2) % 3];
      Vec3 en = normal.cross(q - p).normalized();
      if (en.dot(opposite - p) < 0.0) en = -en;
      edge_normals[j] = en;
      edge_offsets[j] = en.dot(p);
    }
  }

  double plane(const Vec3& x) const { return normal.dot(x) - normal_offset; }
  double edge_plane(int j, const Vec3& x) const {
    return edge_normals[j].dot(x) - edge_offsets[j];
  }
};

namespace detail {

inline double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

// rho = sqrt(f^2 + (sqrt(t^2 + f^4) - t)^2 / 4) and its gradient from f, t.
template <int Dim>
FieldValue<Dim> normalized_rho(double f, const Vec<Dim>& grad_f, double t,
                               const Vec<Dim>& grad_t) {
  const double f2 = f * f;
  const double f4 = f2 * f2;
  const double q = std::sqrt(t * t + f4);
  // q - t without cancellation when t > 0.
  const double q_minus_t = t > 0.0 ? f4 / (q + t) : q - t;
  FieldValue<Dim> out;
  out.value = std::sqrt(f2 + 0.25 * q_minus_t * q_minus_t);
  if (!(out.value > 0.0) || !(q > 0.0)) {
    out.value = 0.0;
    out.gradient_defined = false;
    return out;
  }
  const Vec<Dim> grad_q = (t * grad_t + 2.0 * f2 * f * grad_f) / q;
  out.gradient = (f * grad_f + 0.25 * q_minus_t * (grad_q - grad_t)) / out.value;
  return out;
}

}  // namespace detail

/// Distance field of one segment: f is the signed distance to the carrier
/// line, t = ((L/2)^2 - |x - xc|^2) / L trims it to the disk spanned by the
/// segment.
inline FieldValue<2> patch_rho_2d(const Vec2& x, const SegmentPatch& s) {
  const Vec2 d = s.x2 - s.x1;
  const double f = ((x(0) - s.x1(0)) * d(1) - (x(1) - s.x1(1)) * d(0)) / s.length;
  const Vec2 grad_f(d(1) / s.length, -d(0) / s.length);
  const Vec2 r = x - s.center;
  const double half = 0.5 * s.length;
  const double t = (half * half - r.squaredNorm()) / s.length;
  const Vec2 grad_t = -2.0 * r / s.length;
  return detail::normalized_rho<2>(f, grad_f, t, grad_t);
}

/// Pieces of the 3D trimmed field: carrier plane f, the intermediate
/// conjunction root G and the trim volume t, each with its gradient.
struct TrimEvaluation {
  double f = 0.0;
  Vec3 grad_f = Vec3::Zero();
  std::array<double, 3> p{};
  double G = 0.0;
  Vec3 grad_G = Vec3::Zero();
  double t = 0.0;
  Vec3 grad_t = Vec3::Zero();
  bool gradient_defined = true;
};

/// Trim volume t = (p1 ^f p2) ^f p3 with the R_f-conjunction
/// a ^f b = a + b - sqrt(a^2 + b^2 + alpha f^k).
inline TrimEvaluation trim_3d(const Vec3& x, const TrianglePatch& tri) {
  TrimEvaluation e;
  e.f = tri.plane(x);
  e.grad_f = tri.normal;
  for (int j = 0; j < 3; ++j) e.p[j] = tri.edge_plane(j, x);
  const double fk = detail::ipow(e.f, tri.k);
  const double dfk = tri.k * detail::ipow(e.f, tri.k - 1);  // d(f^k)/df
  const auto& [p1, p2, p3] = e.p;
  const auto& n = tri.edge_normals;

  e.G = std::sqrt(p1 * p1 + p2 * p2 + tri.alpha * fk);
  const double s12 = p1 + p2 - e.G;
  const double H = std::sqrt(s12 * s12 + p3 * p3 + tri.alpha * fk);
  e.t = p1 + p2 + p3 - e.G - H;
  if (!(e.G > 0.0) || !(H > 0.0)) {
    e.gradient_defined = false;
    return e;
  }
  e.grad_G = (p1 * n[0] + p2 * n[1] + 0.5 * tri.alpha * dfk * e.grad_f) / e.G;
  const Vec3 grad_s12 = n[0] + n[1] - e.grad_G;
  const Vec3 grad_H = (s12 * grad_s12 + p3 * n[2] + 0.5 * tri.alpha * dfk * e.grad_f) / H;
  e.grad_t = n[0] + n[1] + n[2] - e.grad_G - grad_H;
  return e;
}

/// Distance field of one triangle, zero exactly on the triangle.
inline FieldValue<3> patch_rho_3d(const Vec3& x, const TrianglePatch& tri) {
  const TrimEvaluation e = trim_3d(x, tri);
  auto out = detail::normalized_rho<3>(e.f, e.grad_f, e.t, e.grad_t);
  if (!e.gradient_defined) {
    out.gradient.setZero();
    out.gradient_defined = false;
  }
  return out;
}

inline FieldValue<2> patch_rho(const Vec2& x, const SegmentPatch& s) {
  return patch_rho_2d(x, s);
}
inline FieldValue<3> patch_rho(const Vec3& x, const TrianglePatch& t) {
  return patch_rho_3d(x, t);
}

template <int Dim>
struct PatchFor;
template <>
struct PatchFor<2> {
  using type = SegmentPatch;
};
template <>
struct PatchFor<3> {
  using type = TrianglePatch;
};
template <int Dim>
using PatchType = typename PatchFor<Dim>::type;

/// m-th order R-equivalence of the patch fields:
/// d = (sum rho_i^-m)^(-1/m). Any rho_i <= zero_cutoff yields d = 0 with an
/// undefined gradient.
template <int Dim>
FieldValue<Dim> equivalence_distance(const Vec<Dim>& x,
                                     std::span<const PatchType<Dim>> patches, int m,
                                     double zero_cutoff) {
  FieldValue<Dim> out;
  if (patches.empty()) throw DegenerateError("distance field has no patches");
  double sum_m = 0.0;
  Vec<Dim> sum_grad = Vec<Dim>::Zero();
  for (const auto& patch : patches) {
    const auto rho = patch_rho(x, patch);
    if (rho.value <= zero_cutoff) {
      out.value = 0.0;
      out.gradient.setZero();
      out.gradient_defined = false;
      return out;
    }
    const double inv = 1.0 / rho.value;
    const double inv_m = detail::ipow(inv, m);
    sum_m += inv_m;
    sum_grad += (inv_m * inv) * rho.gradient;
    if (!rho.gradient_defined) out.gradient_defined = false;
  }
  out.value = std::pow(sum_m, -1.0 / m);
  // sum^((m+1)/m) = sum / d
  out.gradient = sum_grad * (out.value / sum_m);
  if (!out.gradient_defined) out.gradient.setZero();
  return out;
}

/// Approximate distance to a set of patches.
template <int Dim>
struct DistanceField {
  std::vector<PatchType<Dim>> patches;
  int order = 3;
  double zero_cutoff = 0.0;

  FieldValue<Dim> operator()(const Vec<Dim>& x) const {
    return equivalence_distance<Dim>(x, patches, order, zero_cutoff);
  }
};

}  // namespace cme
