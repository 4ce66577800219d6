#pragma once

// Built-in structured meshes for the benchmark geometries. Hexahedral grids
// are split into six tetrahedra around a body diagonal (Kuhn split), interior
// nodes are randomly perturbed, and the whole mesh is re-validated.

#include "cme/mesh.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace cme {

struct GridDims {
  int nx = 2, ny = 2, nz = 2;  // nodes per axis
  long count() const { return static_cast<long>(nx) * ny * nz; }
};

/// Near-cubic node grid (each axis count within one of the others) with a
/// node count closest to `target`.
inline GridDims cube_grid_for(long target) {
  GridDims best;
  long best_err = std::numeric_limits<long>::max();
  for (int a = 2; a <= 200; ++a) {
    for (int extra = 0; extra <= 2; ++extra) {
      const int b = a + (extra >= 2 ? 1 : 0);
      const int c = a + (extra >= 1 ? 1 : 0);
      const long n = static_cast<long>(a) * b * c;
      const long err = std::abs(n - target);
      if (err < best_err) {
        best_err = err;
        best = {a, b, c};
      }
    }
    if (static_cast<long>(a) * a * a > 2 * target) break;
  }
  return best;
}

namespace detail {

// Six tetrahedra of the unit cube around the 000-111 diagonal; corners are
// numbered bx + 2 by + 4 bz.
inline const std::array<std::array<int, 4>, 6>& kuhn_tets() {
  static const std::array<std::array<int, 4>, 6> tets{{
      {0, 1, 3, 7},
      {0, 1, 5, 7},
      {0, 2, 3, 7},
      {0, 2, 6, 7},
      {0, 4, 5, 7},
      {0, 4, 6, 7},
  }};
  return tets;
}

// Tetrahedralizes an nx x ny x nz node grid. With `mirror_xy`, the diagonal
// direction is reflected across the mid planes in x and y so that every
// corner column is split through its outer corner.
inline std::vector<TetMesh::Cell> grid_cells(const GridDims& g, bool mirror_xy) {
  auto id = [&](int i, int j, int k) { return static_cast<Index>((k * g.ny + j) * g.nx + i); };
  std::vector<TetMesh::Cell> cells;
  cells.reserve(static_cast<std::size_t>(g.nx - 1) * (g.ny - 1) * (g.nz - 1) * 6);
  const int mid_x = (g.nx - 1) / 2;
  const int mid_y = (g.ny - 1) / 2;
  for (int k = 0; k + 1 < g.nz; ++k) {
    for (int j = 0; j + 1 < g.ny; ++j) {
      for (int i = 0; i + 1 < g.nx; ++i) {
        const bool fx = mirror_xy && i < mid_x;
        const bool fy = mirror_xy && j < mid_y;
        auto corner = [&](int c) {
          int bx = c & 1, by = (c >> 1) & 1;
          const int bz = (c >> 2) & 1;
          if (fx) bx = 1 - bx;
          if (fy) by = 1 - by;
          return id(i + bx, j + by, k + bz);
        };
        for (const auto& t : kuhn_tets()) {
          cells.push_back({corner(t[0]), corner(t[1]), corner(t[2]), corner(t[3])});
        }
      }
    }
  }
  return cells;
}

inline bool all_positive(const std::vector<Vec3>& nodes,
                         const std::vector<TetMesh::Cell>& cells,
                         const std::vector<double>& reference_sign) {
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& t = cells[c];
    const double v = (nodes[t[1]] - nodes[t[0]])
                         .dot((nodes[t[2]] - nodes[t[0]]).cross(nodes[t[3]] - nodes[t[0]]));
    if (!(v * reference_sign[c] > 0.0)) return false;
  }
  return true;
}

// Randomly moves interior nodes by up to `amplitude` times the local spacing
// per axis; halves the amplitude until no cell flips orientation.
inline void perturb_interior(std::vector<Vec3>& nodes, const std::vector<TetMesh::Cell>& cells,
                             const std::vector<char>& interior, const Vec3& spacing,
                             double amplitude, std::uint64_t seed) {
  if (amplitude <= 0.0) return;
  std::vector<double> sign(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& t = cells[c];
    sign[c] = (nodes[t[1]] - nodes[t[0]])
                      .dot((nodes[t[2]] - nodes[t[0]]).cross(nodes[t[3]] - nodes[t[0]])) > 0.0
                  ? 1.0
                  : -1.0;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<Vec3> offsets(nodes.size(), Vec3::Zero());
  for (std::size_t a = 0; a < nodes.size(); ++a) {
    const Vec3 r(dist(rng), dist(rng), dist(rng));
    if (interior[a]) offsets[a] = r.cwiseProduct(spacing);
  }
  for (int attempt = 0; attempt < 30; ++attempt, amplitude *= 0.5) {
    std::vector<Vec3> trial = nodes;
    for (std::size_t a = 0; a < nodes.size(); ++a) trial[a] += amplitude * offsets[a];
    if (all_positive(trial, cells, sign)) {
      nodes = std::move(trial);
      return;
    }
  }
}

}  // namespace detail

/// Box [0, side]^3 with about `target_nodes` nodes.
inline TetMesh cube_mesh(long target_nodes, double side = 0.1, double perturbation = 0.15,
                         std::uint64_t seed = 1) {
  const GridDims g = cube_grid_for(target_nodes);
  const Vec3 spacing(side / (g.nx - 1), side / (g.ny - 1), side / (g.nz - 1));
  std::vector<Vec3> nodes;
  std::vector<char> interior;
  nodes.reserve(g.count());
  for (int k = 0; k < g.nz; ++k) {
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        nodes.emplace_back(i * spacing(0), j * spacing(1), k * spacing(2));
        interior.push_back(i > 0 && j > 0 && k > 0 && i + 1 < g.nx && j + 1 < g.ny &&
                           k + 1 < g.nz);
      }
    }
  }
  auto cells = detail::grid_cells(g, false);
  detail::perturb_interior(nodes, cells, interior, spacing, perturbation, seed);
  return TetMesh(std::move(nodes), std::move(cells));
}

/// Cylinder of the given height along z (base at z = 0) and diameter,
/// centered on the z axis, with about `target_nodes` nodes. The cross
/// section is a square grid mapped onto the disk.
inline TetMesh cylinder_mesh(long target_nodes, double height = 0.017, double diameter = 0.030,
                             double perturbation = 0.1, std::uint64_t seed = 1) {
  GridDims best;
  long best_err = std::numeric_limits<long>::max();
  for (int n = 3; n <= 301; n += 2) {
    const int nz = std::max(2, static_cast<int>(std::lround(height / diameter * (n - 1))) + 1);
    const long count = static_cast<long>(n) * n * nz;
    const long err = std::abs(count - target_nodes);
    if (err < best_err) {
      best_err = err;
      best = {n, n, nz};
    }
    if (count > 2 * target_nodes) break;
  }
  const GridDims g = best;
  const double radius = 0.5 * diameter;
  std::vector<Vec3> nodes;
  std::vector<char> interior;
  for (int k = 0; k < g.nz; ++k) {
    for (int j = 0; j < g.ny; ++j) {
      for (int i = 0; i < g.nx; ++i) {
        const double u = -1.0 + 2.0 * i / (g.nx - 1);
        const double v = -1.0 + 2.0 * j / (g.ny - 1);
        const double x = radius * u * std::sqrt(1.0 - 0.5 * v * v);
        const double y = radius * v * std::sqrt(1.0 - 0.5 * u * u);
        nodes.emplace_back(x, y, height * k / (g.nz - 1));
        interior.push_back(i > 0 && j > 0 && k > 0 && i + 1 < g.nx && j + 1 < g.ny &&
                           k + 1 < g.nz);
      }
    }
  }
  auto cells = detail::grid_cells(g, true);
  const Vec3 spacing(diameter / (g.nx - 1), diameter / (g.ny - 1), height / (g.nz - 1));
  detail::perturb_interior(nodes, cells, interior, spacing, perturbation, seed);
  return TetMesh(std::move(nodes), std::move(cells));
}

/// Rectangle [0, lx] x [0, ly] split into right triangles on an nx x ny node
/// grid, alternating the diagonal direction in a checkerboard.
inline TriMesh rectangle_mesh(int nx, int ny, double lx, double ly) {
  if (nx < 2 || ny < 2) throw ConfigError("rectangle mesh needs at least 2x2 nodes");
  std::vector<Vec2> nodes;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) nodes.emplace_back(lx * i / (nx - 1), ly * j / (ny - 1));
  }
  auto id = [&](int i, int j) { return static_cast<Index>(j * nx + i); };
  std::vector<TriMesh::Cell> cells;
  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      const Index a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      if ((i + j) % 2 == 0) {
        cells.push_back({a, b, c});
        cells.push_back({a, c, d});
      } else {
        cells.push_back({a, b, d});
        cells.push_back({b, c, d});
      }
    }
  }
  return TriMesh(std::move(nodes), std::move(cells));
}

}  // namespace cme
