#pragma once

#include "cme/mesh.hpp"
#include "cme/parallel.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace cme {

/// N-ring cell support of one node and the facets its prior distance is
/// measured to.
template <int Dim>
struct SupportDomain {
  using Facet = typename SimplexMesh<Dim>::Facet;

  Index node = -1;
  int ring_count = 0;
  std::vector<Index> cells;           // sorted
  std::vector<Index> neighbor_nodes;  // sorted, includes `node`
  /// Facets incident to exactly one support cell, oriented outward, minus the
  /// domain-boundary facets that contain `node`.
  std::vector<Facet> boundary_facets;

  bool contains_cell(Index c) const {
    return std::binary_search(cells.begin(), cells.end(), c);
  }
};

/// Builds the ring support of `node`. Ring 1 is the set of cells incident to
/// the node; ring k+1 adds every cell sharing a vertex with ring k.
template <int Dim>
SupportDomain<Dim> ring_support(const SimplexMesh<Dim>& mesh, Index node,
                                int ring_count) {
  if (node < 0 || node >= mesh.num_nodes()) {
    throw ConfigError("ring_support: node " + std::to_string(node) +
                      " out of range");
  }
  if (ring_count < 1) throw ConfigError("ring_support: ring count must be >= 1");

  SupportDomain<Dim> sd;
  sd.node = node;
  sd.ring_count = ring_count;
  auto incident = mesh.node_cells(node);
  sd.cells.assign(incident.begin(), incident.end());
  std::sort(sd.cells.begin(), sd.cells.end());

  auto vertices_of = [&](const std::vector<Index>& cells) {
    std::vector<Index> verts;
    verts.reserve(cells.size() * (Dim + 1));
    for (Index c : cells) {
      for (Index v : mesh.cell(c)) verts.push_back(v);
    }
    std::sort(verts.begin(), verts.end());
    verts.erase(std::unique(verts.begin(), verts.end()), verts.end());
    return verts;
  };

  for (int r = 1; r < ring_count; ++r) {
    std::vector<Index> grown;
    for (Index v : vertices_of(sd.cells)) {
      auto around = mesh.node_cells(v);
      grown.insert(grown.end(), around.begin(), around.end());
    }
    std::sort(grown.begin(), grown.end());
    grown.erase(std::unique(grown.begin(), grown.end()), grown.end());
    sd.cells = std::move(grown);
  }
  sd.neighbor_nodes = vertices_of(sd.cells);

  for (Index c : sd.cells) {
    for (int i = 0; i <= Dim; ++i) {
      const Index across = mesh.cell_neighbor(c, i);
      if (across >= 0 && sd.contains_cell(across)) continue;
      auto facet = mesh.oriented_facet(c, i);
      const bool on_domain_boundary = across < 0;
      const bool has_node =
          std::find(facet.begin(), facet.end(), node) != facet.end();
      if (on_domain_boundary && has_node) continue;
      sd.boundary_facets.push_back(facet);
    }
  }
  return sd;
}

/// Ring supports of every node with a common ring count.
template <int Dim>
std::vector<SupportDomain<Dim>> build_supports(const SimplexMesh<Dim>& mesh,
                                               int ring_count,
                                               unsigned workers = 1) {
  std::vector<SupportDomain<Dim>> out(mesh.num_nodes());
  parallel_for(out.size(), workers, [&](std::size_t a) {
    out[a] = ring_support(mesh, static_cast<Index>(a), ring_count);
  });
  return out;
}

/// Inverse of the support map: for each cell, the nodes whose support
/// contains it. Every point inside a cell uses this neighbor list.
class CellNeighborMap {
 public:
  CellNeighborMap() = default;

  template <int Dim>
  CellNeighborMap(Index num_cells, const std::vector<SupportDomain<Dim>>& supports) {
    offsets_.assign(static_cast<std::size_t>(num_cells) + 1, 0);
    for (const auto& sd : supports) {
      for (Index c : sd.cells) ++offsets_[c + 1];
    }
    for (Index c = 0; c < num_cells; ++c) offsets_[c + 1] += offsets_[c];
    ids_.resize(offsets_.back());
    auto fill = offsets_;
    // Supports are visited in node order, so each list comes out sorted.
    for (const auto& sd : supports) {
      for (Index c : sd.cells) ids_[fill[c]++] = sd.node;
    }
  }

  std::span<const Index> operator[](Index cell) const {
    return {ids_.data() + offsets_[cell], ids_.data() + offsets_[cell + 1]};
  }
  Index num_cells() const { return static_cast<Index>(offsets_.size()) - 1; }

  std::size_t max_neighbors() const {
    std::size_t m = 0;
    for (std::size_t c = 0; c + 1 < offsets_.size(); ++c) {
      m = std::max(m, offsets_[c + 1] - offsets_[c]);
    }
    return m;
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<Index> ids_;
};

/// Nodes whose support contains `cell` (equivalent to CellNeighborMap(...)[cell]).
template <int Dim>
std::vector<Index> neighbors_of_cell(const std::vector<SupportDomain<Dim>>& supports,
                                     Index cell) {
  std::vector<Index> out;
  for (const auto& sd : supports) {
    if (sd.contains_cell(cell)) out.push_back(sd.node);
  }
  return out;
}

}  // namespace cme
