#pragma once

#include "cme/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace cme {

/// Quadrature on a tetrahedron in barycentric form; weights are fractions of
/// the cell volume.
struct QuadratureRule {
  std::vector<std::array<double, 4>> points;
  std::vector<double> weights;
};

/// Symmetric 4-point rule, exact for total degree <= 2.
inline QuadratureRule four_point_rule() {
  const double a = (5.0 + 3.0 * std::sqrt(5.0)) / 20.0;
  const double b = (5.0 - std::sqrt(5.0)) / 20.0;
  QuadratureRule r;
  r.points = {{a, b, b, b}, {b, a, b, b}, {b, b, a, b}, {b, b, b, a}};
  r.weights = {0.25, 0.25, 0.25, 0.25};
  return r;
}

/// One point at the centroid, exact for linears.
inline QuadratureRule centroid_rule() {
  QuadratureRule r;
  r.points = {{0.25, 0.25, 0.25, 0.25}};
  r.weights = {1.0};
  return r;
}

struct QuadraturePoint {
  Vec3 position;
  double weight = 0.0;  // m^3
  Index cell = -1;      // cell of the original mesh
};

using Tet = std::array<Vec3, 4>;

/// Splits a tetrahedron at the midpoint of its longest edge (first such edge
/// in local order on ties). Both children keep the parent's orientation.
inline std::array<Tet, 2> bisect_longest_edge(const Tet& t) {
  int bi = 0, bj = 1;
  double best = -1.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) {
      const double len = (t[i] - t[j]).squaredNorm();
      if (len > best) {
        best = len;
        bi = i;
        bj = j;
      }
    }
  }
  const Vec3 mid = 0.5 * (t[bi] + t[bj]);
  Tet first = t, second = t;
  first[bj] = mid;
  second[bi] = mid;
  return {first, second};
}

/// Children of a tetrahedron after repeated longest-edge bisection into
/// `subdivisions` in {1, 2, 4, 8} pieces.
inline std::vector<Tet> subdivide(const Tet& t, int subdivisions) {
  if (subdivisions != 1 && subdivisions != 2 && subdivisions != 4 && subdivisions != 8) {
    throw ConfigError("subdivisions must be 1, 2, 4 or 8 (got " +
                      std::to_string(subdivisions) + ")");
  }
  std::vector<Tet> cur{t};
  while (static_cast<int>(cur.size()) < subdivisions) {
    std::vector<Tet> next;
    next.reserve(cur.size() * 2);
    for (const auto& c : cur) {
      const auto kids = bisect_longest_edge(c);
      next.push_back(kids[0]);
      next.push_back(kids[1]);
    }
    cur = std::move(next);
  }
  return cur;
}

inline double tet_volume(const Tet& t) {
  return (t[1] - t[0]).dot((t[2] - t[0]).cross(t[3] - t[0])) / 6.0;
}

/// Quadrature points for every cell: each cell is bisected into
/// `subdivisions` children and `rule` is applied on every child.
inline std::vector<QuadraturePoint> generate_points(const TetMesh& mesh, int subdivisions,
                                                    const QuadratureRule& rule) {
  std::vector<QuadraturePoint> out;
  out.reserve(static_cast<std::size_t>(mesh.num_cells()) * subdivisions *
              rule.points.size());
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    Tet t;
    for (int i = 0; i < 4; ++i) t[i] = mesh.node(mesh.cell(c)[i]);
    for (const auto& child : subdivide(t, subdivisions)) {
      const double vol = tet_volume(child);
      for (std::size_t q = 0; q < rule.points.size(); ++q) {
        Vec3 x = Vec3::Zero();
        for (int i = 0; i < 4; ++i) x += rule.points[q][i] * child[i];
        out.push_back({x, rule.weights[q] * vol, c});
      }
    }
  }
  return out;
}

inline std::vector<QuadraturePoint> generate_points(const TetMesh& mesh, int subdivisions) {
  return generate_points(mesh, subdivisions, four_point_rule());
}

/// Quadrature density in points per cell: 1 is the centroid rule, 4/8/16/32
/// are the 4-point rule on 1/2/4/8 bisected children.
struct QuadratureLevel {
  int subdivisions = 1;
  bool centroid = false;

  static QuadratureLevel from_points_per_cell(int points) {
    switch (points) {
      case 1: return {1, true};
      case 4: return {1, false};
      case 8: return {2, false};
      case 16: return {4, false};
      case 32: return {8, false};
      default:
        throw ConfigError("points per cell must be one of 1, 4, 8, 16, 32 (got " +
                          std::to_string(points) + ")");
    }
  }
  int points_per_cell() const { return centroid ? subdivisions : 4 * subdivisions; }
};

inline std::vector<QuadraturePoint> generate_points(const TetMesh& mesh,
                                                    const QuadratureLevel& level) {
  return generate_points(mesh, level.subdivisions,
                         level.centroid ? centroid_rule() : four_point_rule());
}

}  // namespace cme
