#include "cme/distfield.hpp"
#include "cme/mesh_gen.hpp"
#include "cme/support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cme;

namespace {

double segment_distance(const Vec2& x, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double s = std::clamp((x - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
  return (x - (a + s * d)).norm();
}

double segment_distance3(const Vec3& x, const Vec3& a, const Vec3& b) {
  const Vec3 d = b - a;
  const double s = std::clamp((x - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
  return (x - (a + s * d)).norm();
}

// Exact distance from x to a triangle: plane projection if it falls inside,
// otherwise the nearest edge.
double triangle_distance(const Vec3& x, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a).normalized();
  const Vec3 p = x - n.dot(x - a) * n;
  const double s0 = n.dot((b - a).cross(p - a));
  const double s1 = n.dot((c - b).cross(p - b));
  const double s2 = n.dot((a - c).cross(p - c));
  if (s0 >= 0 && s1 >= 0 && s2 >= 0) return std::abs(n.dot(x - a));
  return std::min({segment_distance3(x, a, b), segment_distance3(x, b, c),
                   segment_distance3(x, c, a)});
}

TrianglePatch equilateral(double edge = 1.0) {
  return TrianglePatch(Vec3(0, 0, 0), Vec3(edge, 0, 0),
                       Vec3(0.5 * edge, 0.5 * std::sqrt(3.0) * edge, 0));
}

template <class F>
Vec3 central_gradient(F&& f, const Vec3& x, double h) {
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    Vec3 xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

double rel_error(const Vec3& a, const Vec3& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace

TEST(Rho2d, SegmentExamples) {
  const SegmentPatch s(Vec2(0, 0), Vec2(1, 0));
  const auto on = patch_rho_2d(Vec2(0.5, 0.0), s);
  EXPECT_EQ(on.value, 0.0);
  EXPECT_FALSE(on.gradient_defined);
  EXPECT_NEAR(patch_rho_2d(Vec2(0.5, 0.3), s).value, 0.30023, 5e-6);
}

TEST(Rho2d, FirstOrderNearSegmentAndGradient) {
  const SegmentPatch s(Vec2(0.2, 0.1), Vec2(1.1, 0.7));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 0.9), off(1e-4, 0.03);
  const Vec2 d = (s.x2 - s.x1);
  const Vec2 n(-d(1) / s.length, d(0) / s.length);
  for (int i = 0; i < 100; ++i) {
    const Vec2 x = s.x1 + u(rng) * d + off(rng) * n;
    const auto r = patch_rho_2d(x, s);
    const double exact = segment_distance(x, s.x1, s.x2);
    EXPECT_NEAR(r.value / exact, 1.0, 0.02);
    const double h = 1e-7;
    Vec2 fd;
    for (int k = 0; k < 2; ++k) {
      Vec2 xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      fd(k) = (patch_rho_2d(xp, s).value - patch_rho_2d(xm, s).value) / (2 * h);
    }
    EXPECT_LE((r.gradient - fd).norm() / fd.norm(), 1e-5);
  }
}

TEST(Rho3d, ZeroOnTriangleAndPositiveOff) {
  const auto tri = equilateral();
  const auto on = patch_rho_3d(Vec3(0.5, 0.3, 0.0), tri);
  EXPECT_LE(on.value, 1e-15);
  EXPECT_FALSE(on.gradient_defined);
  EXPECT_GT(patch_rho_3d(Vec3(0.5, 0.3, 1e-3), tri).value, 0.0);
  EXPECT_GT(patch_rho_3d(Vec3(3.0, 0.3, 0.0), tri).value, 0.0);
}

TEST(Rho3d, CentroidNormalLineApproachesDistance) {
  const double edge = 2.0;
  const auto tri = equilateral(edge);
  const Vec3 c = (tri.v[0] + tri.v[1] + tri.v[2]) / 3.0;
  for (double h : {0.2, 0.1, 0.05, 0.01, 1e-3}) {
    const Vec3 x = c + Vec3(0, 0, h);
    const double exact = triangle_distance(x, tri.v[0], tri.v[1], tri.v[2]);
    EXPECT_NEAR(exact, h, 1e-15);
    EXPECT_NEAR(patch_rho_3d(x, tri).value / h, 1.0, 0.05) << h;
  }
}

TEST(Rho3d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  const TrianglePatch tri(Vec3(0.1, 0.0, 0.2), Vec3(1.0, 0.2, 0.0), Vec3(0.3, 0.9, 0.4));
  const double edge = (tri.v[1] - tri.v[0]).norm();
  const double h = 1e-7 * edge;
  int tested = 0;
  while (tested < 100) {
    const Vec3 x(u(rng), u(rng), u(rng));
    if (triangle_distance(x, tri.v[0], tri.v[1], tri.v[2]) < 0.05 * edge) continue;
    const auto e = trim_3d(x, tri);
    const auto r = patch_rho_3d(x, tri);
    ASSERT_TRUE(r.gradient_defined);
    const auto rho_fd = central_gradient([&](const Vec3& y) { return patch_rho_3d(y, tri).value; }, x, h);
    const auto t_fd = central_gradient([&](const Vec3& y) { return trim_3d(y, tri).t; }, x, h);
    const auto g_fd = central_gradient([&](const Vec3& y) { return trim_3d(y, tri).G; }, x, h);
    EXPECT_LE(rel_error(r.gradient, rho_fd), 1e-5);
    EXPECT_LE(rel_error(e.grad_t, t_fd), 1e-5);
    EXPECT_LE(rel_error(e.grad_G, g_fd), 1e-5);
    ++tested;
  }
}

TEST(Rho3d, AlphaZeroIsPlainConjunction) {
  const TrianglePatch tri(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.2, 0.8, 0), 0.0, 2);
  auto conj = [](double a, double b) { return a + b - std::sqrt(a * a + b * b); };
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  for (int i = 0; i < 50; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const auto e = trim_3d(x, tri);
    const double expected = conj(conj(e.p[0], e.p[1]), e.p[2]);
    EXPECT_NEAR(e.t, expected, 1e-12 * std::max(1.0, std::abs(expected)));
  }
}

TEST(Rho3d, InvalidParameters) {
  EXPECT_THROW(TrianglePatch(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)), DegenerateError);
  EXPECT_THROW(TrianglePatch(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), 2.0, 3), ConfigError);
  EXPECT_THROW(TrianglePatch(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), -1.0, 2), ConfigError);
}

TEST(Equivalence, SinglePatchAndZeroSet) {
  const auto tri = equilateral();
  const std::vector<TrianglePatch> one{tri};
  const Vec3 x(0.4, 0.2, 0.3);
  const auto d = equivalence_distance<3>(x, one, 3, 1e-14);
  const auto r = patch_rho_3d(x, tri);
  EXPECT_DOUBLE_EQ(d.value, r.value);
  EXPECT_LE((d.gradient - r.gradient).norm(), 1e-14 * r.gradient.norm());
  const auto zero = equivalence_distance<3>(Vec3(0.4, 0.2, 0.0), one, 3, 1e-14);
  EXPECT_EQ(zero.value, 0.0);
  EXPECT_FALSE(zero.gradient_defined);
  EXPECT_THROW(equivalence_distance<3>(x, std::span<const TrianglePatch>{}, 3, 0.0), DegenerateError);
}

namespace {

struct SupportFixture {
  TetMesh mesh = cube_mesh(216, 1.0, 0.2, 21);
  Index node = -1;
  DistanceField<3> field;
  SupportDomain<3> sd;

  SupportFixture() {
    for (Index a = 0; a < mesh.num_nodes(); ++a) {
      if (!mesh.is_boundary_node(a) && (mesh.node(a) - Vec3(0.5, 0.5, 0.5)).norm() < 0.2) {
        node = a;
        break;
      }
    }
    sd = ring_support(mesh, node, 2);
    for (const auto& f : sd.boundary_facets) {
      field.patches.emplace_back(mesh.node(f[0]), mesh.node(f[1]), mesh.node(f[2]));
    }
    field.order = 3;
    field.zero_cutoff = 1e-14;
  }
};

}  // namespace

TEST(Equivalence, BoundedByMinimumAndGradientMatches) {
  SupportFixture fx;
  ASSERT_GE(fx.node, 0);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> w(0.05, 1.0);
  int tested = 0;
  for (Index c : fx.sd.cells) {
    // Random interior points of support cells.
    double b[4];
    double sum = 0;
    for (double& v : b) sum += (v = w(rng));
    Vec3 x = Vec3::Zero();
    for (int i = 0; i < 4; ++i) x += b[i] / sum * fx.mesh.node(fx.mesh.cell(c)[i]);
    const auto d = fx.field(x);
    double min_rho = std::numeric_limits<double>::infinity();
    for (const auto& p : fx.field.patches) min_rho = std::min(min_rho, patch_rho_3d(x, p).value);
    EXPECT_GT(d.value, 0.0);
    EXPECT_LE(d.value, min_rho);
    const double h = 1e-7;
    const auto fd = central_gradient([&](const Vec3& y) { return fx.field(y).value; }, x, h);
    EXPECT_LE(rel_error(d.gradient, fd), 1e-5);
    ++tested;
  }
  EXPECT_GT(tested, 20);
}

TEST(Equivalence, FirstOrderTowardFacetInterior) {
  SupportFixture fx;
  for (const auto& f : fx.sd.boundary_facets) {
    const Vec3 a = fx.mesh.node(f[0]), b = fx.mesh.node(f[1]), c = fx.mesh.node(f[2]);
    const Vec3 center = (a + b + c) / 3.0;
    Vec3 n = (b - a).cross(c - a).normalized();
    if (n.dot(fx.mesh.node(fx.node) - center) < 0) n = -n;
    const double diam = std::max({(a - b).norm(), (b - c).norm(), (c - a).norm()});
    for (double frac : {0.05, 0.01, 0.001}) {
      const double delta = frac * diam;
      // Neighboring patches pull the ratio slightly below one at the largest
      // offset on strongly folded supports.
      const double tol = frac >= 0.05 ? 0.025 : 0.02;
      EXPECT_NEAR(fx.field(center + delta * n).value / delta, 1.0, tol) << frac;
    }
  }
}

TEST(Equivalence, MirrorSymmetry) {
  const TrianglePatch t1(Vec3(0.2, 0, 0), Vec3(1, 0.3, 0), Vec3(0.4, 1, 0.5));
  const TrianglePatch t2(Vec3(-0.2, 0, 0), Vec3(-1, 0.3, 0), Vec3(-0.4, 1, 0.5));
  const std::vector<TrianglePatch> set{t1, t2};
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const Vec3 xm(-x(0), x(1), x(2));
    const auto d = equivalence_distance<3>(x, set, 3, 1e-14);
    const auto dm = equivalence_distance<3>(xm, set, 3, 1e-14);
    EXPECT_NEAR(d.value, dm.value, 1e-12 * d.value);
  }
}
