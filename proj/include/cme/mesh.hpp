#pragma once

#include "cme/common.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cme {

/// Conforming simplicial mesh: triangles for Dim = 2, tetrahedra for Dim = 3.
///
/// Cells are stored with positive signed measure. Construction derives the
/// node->cell incidence, the cell->cell face adjacency and the outward
/// oriented boundary facets. The mesh is immutable afterwards.
template <int Dim>
class SimplexMesh {
  static_assert(Dim == 2 || Dim == 3, "only triangle and tetrahedral meshes");

 public:
  static constexpr int kDim = Dim;
  static constexpr int kCellVerts = Dim + 1;
  using Point = Vec<Dim>;
  using Cell = std::array<Index, Dim + 1>;
  using Facet = std::array<Index, Dim>;

  /// Relative threshold (w.r.t. the mean cell measure) below which a cell is
  /// rejected as degenerate.
  static constexpr double kDegenerateRatio = 1e-14;

  SimplexMesh() = default;

  SimplexMesh(std::vector<Point> nodes, std::vector<Cell> cells)
      : nodes_(std::move(nodes)), cells_(std::move(cells)) {
    if (nodes_.empty()) throw MeshError("mesh has no nodes");
    if (cells_.empty()) throw MeshError("mesh has no cells");
    const auto n = static_cast<Index>(nodes_.size());
    for (std::size_t c = 0; c < cells_.size(); ++c) {
      for (Index v : cells_[c]) {
        if (v < 0 || v >= n) {
          throw MeshError("cell " + std::to_string(c) + " references node " +
                          std::to_string(v) + " but the mesh has " +
                          std::to_string(n) + " nodes");
        }
      }
      auto sorted = cells_[c];
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw MeshError("cell " + std::to_string(c) + " repeats a node");
      }
    }
    orient_cells();
    build_node_cells();
    build_adjacency();
    lo_ = hi_ = nodes_[0];
    for (const auto& p : nodes_) {
      lo_ = lo_.cwiseMin(p);
      hi_ = hi_.cwiseMax(p);
    }
  }

  Index num_nodes() const { return static_cast<Index>(nodes_.size()); }
  Index num_cells() const { return static_cast<Index>(cells_.size()); }
  const std::vector<Point>& nodes() const { return nodes_; }
  const std::vector<Cell>& cells() const { return cells_; }
  const Point& node(Index a) const { return nodes_[a]; }
  const Cell& cell(Index c) const { return cells_[c]; }

  std::span<const Index> node_cells(Index a) const {
    return {node_cell_ids_.data() + node_cell_offsets_[a],
            node_cell_ids_.data() + node_cell_offsets_[a + 1]};
  }

  /// Neighbor across the facet opposite local vertex i, or -1 on the boundary.
  Index cell_neighbor(Index c, int i) const { return neighbors_[c][i]; }
  const std::array<Index, Dim + 1>& cell_neighbors(Index c) const {
    return neighbors_[c];
  }

  /// Outward oriented boundary facets.
  const std::vector<Facet>& boundary_facets() const { return boundary_; }
  bool is_boundary_node(Index a) const { return boundary_node_[a] != 0; }

  /// True if the facet (any vertex order) is a facet of exactly one cell.
  bool is_boundary_facet(Facet f) const {
    std::sort(f.begin(), f.end());
    return std::binary_search(boundary_sorted_.begin(), boundary_sorted_.end(), f);
  }

  double cell_measure(Index c) const { return signed_measure(cells_[c]); }

  double measure() const {
    double v = 0.0;
    for (Index c = 0; c < num_cells(); ++c) v += cell_measure(c);
    return v;
  }

  Point centroid(Index c) const {
    Point x = Point::Zero();
    for (Index v : cells_[c]) x += nodes_[v];
    return x / static_cast<double>(kCellVerts);
  }

  const Point& bbox_min() const { return lo_; }
  const Point& bbox_max() const { return hi_; }
  double diameter() const { return (hi_ - lo_).norm(); }

  /// Barycentric coordinates of x with respect to cell c.
  Eigen::Matrix<double, Dim + 1, 1> barycentric(Index c, const Point& x) const {
    const auto& cl = cells_[c];
    Mat<Dim> e;
    for (int i = 0; i < Dim; ++i) e.col(i) = nodes_[cl[i + 1]] - nodes_[cl[0]];
    const Point l = e.partialPivLu().solve(x - nodes_[cl[0]]);
    Eigen::Matrix<double, Dim + 1, 1> b;
    b(0) = 1.0 - l.sum();
    b.template tail<Dim>() = l;
    return b;
  }

  /// Facet opposite local vertex i of cell c, oriented outward from c.
  Facet oriented_facet(Index c, int i) const {
    Facet f{};
    int k = 0;
    for (int j = 0; j < kCellVerts; ++j) {
      if (j != i) f[k++] = cells_[c][j];
    }
    if (i % 2 == 1) std::swap(f[0], f[1]);
    return f;
  }

  double mean_edge_length() const {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& cl : cells_) {
      for (int i = 0; i < kCellVerts; ++i) {
        for (int j = i + 1; j < kCellVerts; ++j) {
          sum += (nodes_[cl[i]] - nodes_[cl[j]]).norm();
          ++count;
        }
      }
    }
    return sum / static_cast<double>(count);
  }

 private:
  double signed_measure(const Cell& cl) const {
    Mat<Dim> e;
    for (int i = 0; i < Dim; ++i) e.col(i) = nodes_[cl[i + 1]] - nodes_[cl[0]];
    return e.determinant() / (Dim == 2 ? 2.0 : 6.0);
  }

  void orient_cells() {
    double mean = 0.0;
    for (const auto& cl : cells_) mean += std::abs(signed_measure(cl));
    mean /= static_cast<double>(cells_.size());
    for (std::size_t c = 0; c < cells_.size(); ++c) {
      const double v = signed_measure(cells_[c]);
      if (!(std::abs(v) > kDegenerateRatio * mean)) {
        throw MeshError("cell " + std::to_string(c) + " is degenerate (measure " +
                        std::to_string(v) + ")");
      }
      if (v < 0.0) std::swap(cells_[c][Dim - 1], cells_[c][Dim]);
    }
  }

  void build_node_cells() {
    node_cell_offsets_.assign(nodes_.size() + 1, 0);
    for (const auto& cl : cells_) {
      for (Index v : cl) ++node_cell_offsets_[v + 1];
    }
    for (std::size_t a = 0; a < nodes_.size(); ++a) {
      node_cell_offsets_[a + 1] += node_cell_offsets_[a];
    }
    node_cell_ids_.resize(node_cell_offsets_.back());
    auto fill = node_cell_offsets_;
    for (std::size_t c = 0; c < cells_.size(); ++c) {
      for (Index v : cells_[c]) node_cell_ids_[fill[v]++] = static_cast<Index>(c);
    }
  }

  void build_adjacency() {
    struct Entry {
      Facet key;
      Index cell;
      int local;
    };
    std::vector<Entry> entries;
    entries.reserve(cells_.size() * kCellVerts);
    for (std::size_t c = 0; c < cells_.size(); ++c) {
      for (int i = 0; i < kCellVerts; ++i) {
        Facet key{};
        int k = 0;
        for (int j = 0; j < kCellVerts; ++j) {
          if (j != i) key[k++] = cells_[c][j];
        }
        std::sort(key.begin(), key.end());
        entries.push_back({key, static_cast<Index>(c), i});
      }
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return a.key != b.key ? a.key < b.key : a.cell < b.cell;
    });

    neighbors_.assign(cells_.size(), {});
    for (auto& nb : neighbors_) nb.fill(-1);
    boundary_node_.assign(nodes_.size(), 0);
    for (std::size_t i = 0; i < entries.size();) {
      std::size_t j = i + 1;
      while (j < entries.size() && entries[j].key == entries[i].key) ++j;
      if (j - i == 1) {
        boundary_sorted_.push_back(entries[i].key);
        boundary_.push_back(oriented_facet(entries[i].cell, entries[i].local));
        for (Index v : entries[i].key) boundary_node_[v] = 1;
      } else if (j - i == 2) {
        neighbors_[entries[i].cell][entries[i].local] = entries[i + 1].cell;
        neighbors_[entries[i + 1].cell][entries[i + 1].local] = entries[i].cell;
      } else {
        throw MeshError("non-manifold facet shared by " + std::to_string(j - i) +
                        " cells");
      }
      i = j;
    }
  }

  std::vector<Point> nodes_;
  std::vector<Cell> cells_;
  std::vector<std::size_t> node_cell_offsets_;
  std::vector<Index> node_cell_ids_;
  std::vector<std::array<Index, Dim + 1>> neighbors_;
  std::vector<Facet> boundary_;
  std::vector<Facet> boundary_sorted_;
  std::vector<char> boundary_node_;
  Point lo_ = Point::Zero();
  Point hi_ = Point::Zero();
};

using TriMesh = SimplexMesh<2>;
using TetMesh = SimplexMesh<3>;

/// Tolerance on barycentric coordinates for point containment.
inline constexpr double kContainmentTol = 1e-12;

/// Cell containing x (lowest index on ties) or nullopt when x is outside.
///
/// Walks from `hint` across the facet with the most negative barycentric
/// coordinate; falls back to an exhaustive scan when the walk leaves the mesh
/// or cycles.
template <int Dim>
std::optional<Index> locate_point(const SimplexMesh<Dim>& mesh,
                                  const Vec<Dim>& x, Index hint = 0) {
  auto contains = [&](Index c) {
    return mesh.barycentric(c, x).minCoeff() >= -kContainmentTol;
  };
  auto lowest_around = [&](Index c) {
    Index best = c;
    for (Index v : mesh.cell(c)) {
      for (Index other : mesh.node_cells(v)) {
        if (other < best && contains(other)) best = other;
      }
    }
    return best;
  };

  Index c = (hint >= 0 && hint < mesh.num_cells()) ? hint : 0;
  for (Index steps = 0; steps < mesh.num_cells(); ++steps) {
    const auto b = mesh.barycentric(c, x);
    int worst = 0;
    b.minCoeff(&worst);
    if (b(worst) >= -kContainmentTol) return lowest_around(c);
    const Index next = mesh.cell_neighbor(c, worst);
    if (next < 0) break;
    c = next;
  }
  for (Index k = 0; k < mesh.num_cells(); ++k) {
    if (contains(k)) return k;
  }
  return std::nullopt;
}

}  // namespace cme
