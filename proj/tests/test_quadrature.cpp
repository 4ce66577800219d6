#include "cme/mesh_gen.hpp"
#include "cme/quadrature.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace cme;

namespace {

const Tet kReference{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};

double integrate(const Tet& t, const QuadratureRule& rule,
                 const std::function<double(const Vec3&)>& f) {
  const double vol = tet_volume(t);
  double s = 0.0;
  for (std::size_t q = 0; q < rule.points.size(); ++q) {
    Vec3 x = Vec3::Zero();
    for (int i = 0; i < 4; ++i) x += rule.points[q][i] * t[i];
    s += rule.weights[q] * vol * f(x);
  }
  return s;
}

}  // namespace

TEST(FourPointRule, WeightsAndInteriorPoints) {
  const auto r = four_point_rule();
  ASSERT_EQ(r.points.size(), 4u);
  double w = 0.0;
  for (std::size_t q = 0; q < 4; ++q) {
    EXPECT_GT(r.weights[q], 0.0);
    w += r.weights[q];
    double bsum = 0.0;
    for (double b : r.points[q]) {
      EXPECT_GE(b, 0.13);
      bsum += b;
    }
    EXPECT_NEAR(bsum, 1.0, 1e-15);
  }
  EXPECT_DOUBLE_EQ(w, 1.0);
}

TEST(FourPointRule, ExactThroughDegreeTwo) {
  const auto r = four_point_rule();
  EXPECT_NEAR(integrate(kReference, r, [](const Vec3&) { return 1.0; }), 1.0 / 6.0, 1e-14);
  EXPECT_NEAR(integrate(kReference, r, [](const Vec3& x) { return x(0); }), 1.0 / 24.0, 1e-14);
  EXPECT_NEAR(integrate(kReference, r, [](const Vec3& x) { return x(0) * x(0); }), 1.0 / 60.0,
              1e-14);
  EXPECT_NEAR(integrate(kReference, r, [](const Vec3& x) { return x(0) * x(1); }), 1.0 / 120.0,
              1e-14);
  EXPECT_NEAR(integrate(kReference, r, [](const Vec3& x) { return x(2) * x(2); }), 1.0 / 60.0,
              1e-14);
}

TEST(Subdivision, PointCountsAndVolume) {
  const TetMesh mesh({Vec3(0, 0, 0), Vec3(1.3, 0.1, 0), Vec3(0.2, 0.9, 0.1), Vec3(0.1, 0.3, 0.8)},
                     {{0, 1, 2, 3}});
  const double vol = mesh.cell_measure(0);
  for (int sub : {1, 2, 4, 8}) {
    const auto pts = generate_points(mesh, sub);
    EXPECT_EQ(pts.size(), static_cast<std::size_t>(4 * sub));
    double w = 0.0;
    for (const auto& p : pts) {
      w += p.weight;
      EXPECT_EQ(p.cell, 0);
      EXPECT_GT(mesh.barycentric(0, p.position).minCoeff(), 0.0);
    }
    EXPECT_NEAR(w, vol, 1e-12 * vol);
  }
  EXPECT_THROW(generate_points(mesh, 3), ConfigError);
}

TEST(Subdivision, ChildrenPartitionParentAndKeepOrientation) {
  const Tet t{Vec3(0, 0, 0), Vec3(2, 0.1, 0), Vec3(0.4, 1.1, 0.2), Vec3(0.3, 0.2, 0.9)};
  const auto kids = subdivide(t, 8);
  ASSERT_EQ(kids.size(), 8u);
  double v = 0.0;
  for (const auto& k : kids) {
    EXPECT_GT(tet_volume(k), 0.0);
    v += tet_volume(k);
  }
  EXPECT_NEAR(v, tet_volume(t), 1e-14);
}

TEST(Subdivision, LinearIntegralsAgree) {
  const Tet t{Vec3(0, 0, 0), Vec3(2, 0.1, 0), Vec3(0.4, 1.1, 0.2), Vec3(0.3, 0.2, 0.9)};
  const auto f = [](const Vec3& x) { return 1.5 + 2.0 * x(0) - 0.7 * x(1) + 3.1 * x(2); };
  const double base = integrate(t, four_point_rule(), f);
  for (int sub : {2, 4, 8}) {
    double s = 0.0;
    for (const auto& k : subdivide(t, sub)) s += integrate(k, four_point_rule(), f);
    EXPECT_NEAR(s, base, 1e-12 * std::abs(base));
  }
  EXPECT_NEAR(integrate(t, centroid_rule(), f), base, 1e-12 * std::abs(base));
}

TEST(Levels, MeshVolumeConservedAtEveryLevel) {
  const auto mesh = cube_mesh(150);
  for (int ppc : {1, 4, 8, 16, 32}) {
    const auto level = QuadratureLevel::from_points_per_cell(ppc);
    EXPECT_EQ(level.points_per_cell(), ppc);
    const auto pts = generate_points(mesh, level);
    EXPECT_EQ(pts.size(), static_cast<std::size_t>(ppc * mesh.num_cells()));
    double w = 0.0;
    for (const auto& p : pts) w += p.weight;
    EXPECT_NEAR(w, mesh.measure(), 1e-10 * mesh.measure());
  }
  EXPECT_THROW(QuadratureLevel::from_points_per_cell(5), ConfigError);
}
