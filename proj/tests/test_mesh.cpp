#include "cme/mesh.hpp"
#include "cme/mesh_gen.hpp"
#include "cme/mesh_io.hpp"
#include "cme/support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <set>

namespace fs = std::filesystem;
using namespace cme;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "cme_test_mesh";
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

TetMesh single_tet() {
  return TetMesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}, {{0, 1, 2, 3}});
}

// Unit cube split into 5 tetrahedra; corners numbered bx + 2 by + 4 bz.
TetMesh five_tet_cube() {
  std::vector<Vec3> nodes;
  for (int c = 0; c < 8; ++c) nodes.emplace_back(c & 1, (c >> 1) & 1, (c >> 2) & 1);
  return TetMesh(nodes, {{1, 2, 4, 7}, {0, 1, 2, 4}, {3, 1, 2, 7}, {5, 1, 4, 7}, {6, 2, 4, 7}});
}

// Faces with incidence one, counted by brute force.
std::size_t brute_boundary_count(const TetMesh& mesh) {
  std::map<std::array<Index, 3>, int> count;
  for (const auto& c : mesh.cells()) {
    for (int skip = 0; skip < 4; ++skip) {
      std::array<Index, 3> f{};
      int k = 0;
      for (int j = 0; j < 4; ++j) {
        if (j != skip) f[k++] = c[j];
      }
      std::sort(f.begin(), f.end());
      ++count[f];
    }
  }
  return std::count_if(count.begin(), count.end(), [](const auto& e) { return e.second == 1; });
}

// Nodes within `hops` edges of `a`.
std::set<Index> bfs_nodes(const TetMesh& mesh, Index a, int hops) {
  std::vector<std::set<Index>> adj(mesh.num_nodes());
  for (const auto& c : mesh.cells()) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        if (i != j) adj[c[i]].insert(c[j]);
      }
    }
  }
  std::map<Index, int> dist{{a, 0}};
  std::queue<Index> q;
  q.push(a);
  while (!q.empty()) {
    const Index v = q.front();
    q.pop();
    if (dist[v] == hops) continue;
    for (Index w : adj[v]) {
      if (!dist.count(w)) {
        dist[w] = dist[v] + 1;
        q.push(w);
      }
    }
  }
  std::set<Index> out;
  for (const auto& [v, d] : dist) out.insert(v);
  return out;
}

}  // namespace

TEST(MeshIo, SingleTetFileHasFourBoundaryFaces) {
  const auto dir = temp_dir();
  write_file(dir / "one.node", "# one tet\n4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n");
  write_file(dir / "one.ele", "1 4 0\n1 1 2 3 4\n");
  const auto mesh = load_mesh<3>(dir / "one.node", dir / "one.ele");
  EXPECT_EQ(mesh.num_nodes(), 4);
  EXPECT_EQ(mesh.num_cells(), 1);
  EXPECT_EQ(mesh.boundary_facets().size(), 4u);
  EXPECT_NEAR(mesh.measure(), 1.0 / 6.0, 1e-15);
}

TEST(MeshIo, CellReferencingMissingNodeIsRejected) {
  const auto dir = temp_dir();
  std::string nodes = "10 3 0 0\n";
  for (int i = 0; i < 10; ++i) nodes += std::to_string(i) + " " + std::to_string(i) + " 0 0\n";
  write_file(dir / "bad.node", nodes);
  write_file(dir / "bad.ele", "1 4 0\n0 0 1 2 99\n");
  try {
    load_mesh<3>(dir / "bad.node", dir / "bad.ele");
    FAIL() << "expected MeshError";
  } catch (const MeshError& e) {
    EXPECT_NE(std::string(e.what()).find("99"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(MeshIo, DuplicateNodeAndParseErrorsCarryLineNumbers) {
  const auto dir = temp_dir();
  write_file(dir / "dup.node", "4 3 0 0\n0 0 0 0\n1 1 0 0\n1 0 1 0\n3 0 0 1\n");
  write_file(dir / "dup.ele", "1 4 0\n0 0 1 2 3\n");
  try {
    load_mesh<3>(dir / "dup.node", dir / "dup.ele");
    FAIL();
  } catch (const MeshError& e) {
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
  }
  write_file(dir / "garbled.node", "4 3 0 0\n0 0 0 0\n1 1 zero 0\n");
  EXPECT_THROW(load_mesh<3>(dir / "garbled.node", dir / "dup.ele"), MeshError);
  EXPECT_THROW(load_mesh<3>(dir / "missing.node", dir / "dup.ele"), MeshError);
}

TEST(MeshIo, DegenerateCellIsRejected) {
  std::vector<Vec3> nodes{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1),
                          Vec3(1, 1, 0)};
  EXPECT_THROW(TetMesh(nodes, {{0, 1, 2, 3}, {0, 1, 2, 4}}), MeshError);
}

TEST(MeshIo, SaveLoadRoundTripPreservesGeometry) {
  const auto mesh = cube_mesh(60, 0.1, 0.2, 7);
  const auto dir = temp_dir();
  save_mesh(mesh, dir / "rt.node", dir / "rt.ele");
  const auto back = load_mesh<3>(dir / "rt.node", dir / "rt.ele");
  ASSERT_EQ(back.num_nodes(), mesh.num_nodes());
  ASSERT_EQ(back.num_cells(), mesh.num_cells());
  for (Index a = 0; a < mesh.num_nodes(); ++a) EXPECT_EQ(back.node(a), mesh.node(a));
  EXPECT_EQ(back.cells(), mesh.cells());
}

TEST(Mesh, InvertedCellsAreReoriented) {
  const TetMesh mesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)},
                     {{0, 2, 1, 3}});
  EXPECT_GT(mesh.cell_measure(0), 0.0);
}

TEST(Mesh, FiveTetCubeBoundaryMatchesBruteForce) {
  const auto mesh = five_tet_cube();
  EXPECT_EQ(brute_boundary_count(mesh), 12u);
  EXPECT_EQ(mesh.boundary_facets().size(), 12u);
  EXPECT_NEAR(mesh.measure(), 1.0, 1e-14);
  for (Index a = 0; a < 8; ++a) EXPECT_TRUE(mesh.is_boundary_node(a));
}

TEST(Mesh, BoundaryFacetsAreOutward) {
  const auto mesh = cube_mesh(200, 0.1, 0.2, 3);
  EXPECT_EQ(mesh.boundary_facets().size(), brute_boundary_count(mesh));
  // Divergence theorem: V = 1/3 sum_f (x_f . n_f) A_f with outward normals.
  double v = 0.0;
  for (const auto& f : mesh.boundary_facets()) {
    const Vec3 area2 = (mesh.node(f[1]) - mesh.node(f[0])).cross(mesh.node(f[2]) - mesh.node(f[0]));
    const Vec3 centroid = (mesh.node(f[0]) + mesh.node(f[1]) + mesh.node(f[2])) / 3.0;
    v += centroid.dot(area2) / 6.0;
  }
  EXPECT_NEAR(v, mesh.measure(), 1e-12 * mesh.measure());
  EXPECT_NEAR(mesh.measure(), 1e-3, 1e-15);
}

TEST(Support, CornerOfSingleTetKeepsOppositeFace) {
  const auto mesh = single_tet();
  const auto sd = ring_support(mesh, 0, 1);
  ASSERT_EQ(sd.boundary_facets.size(), 1u);
  auto f = sd.boundary_facets[0];
  std::sort(f.begin(), f.end());
  EXPECT_EQ(f, (std::array<Index, 3>{1, 2, 3}));
}

TEST(Support, InteriorNodeStarIsClosedAndExcludesNode) {
  const auto mesh = cube_mesh(125, 0.1, 0.15, 5);
  for (Index a = 0; a < mesh.num_nodes(); ++a) {
    if (mesh.is_boundary_node(a)) continue;
    for (int ring : {1, 2}) {
      const auto sd = ring_support(mesh, a, ring);
      std::map<std::pair<Index, Index>, int> edges;
      for (const auto& f : sd.boundary_facets) {
        EXPECT_EQ(std::count(f.begin(), f.end(), a), 0);
        for (int i = 0; i < 3; ++i) {
          Index p = f[i], q = f[(i + 1) % 3];
          if (p > q) std::swap(p, q);
          ++edges[{p, q}];
        }
      }
      if (ring == 1 || !std::any_of(sd.cells.begin(), sd.cells.end(), [&](Index c) {
            for (int i = 0; i < 4; ++i) {
              if (mesh.cell_neighbor(c, i) < 0) return true;
            }
            return false;
          })) {
        for (const auto& [e, n] : edges) EXPECT_EQ(n, 2);
      }
    }
  }
}

TEST(Support, BoundaryExclusionRule) {
  const auto mesh = cube_mesh(150, 0.1, 0.15, 9);
  for (Index a = 0; a < mesh.num_nodes(); ++a) {
    if (!mesh.is_boundary_node(a)) continue;
    const auto sd = ring_support(mesh, a, 2);
    std::set<std::array<Index, 3>> retained;
    for (auto f : sd.boundary_facets) {
      EXPECT_EQ(std::count(f.begin(), f.end(), a), 0);
      std::sort(f.begin(), f.end());
      retained.insert(f);
    }
    // Every domain-boundary face of a support cell not containing a is kept.
    for (Index c : sd.cells) {
      for (int i = 0; i < 4; ++i) {
        if (mesh.cell_neighbor(c, i) >= 0) continue;
        auto f = mesh.oriented_facet(c, i);
        if (std::count(f.begin(), f.end(), a)) continue;
        std::sort(f.begin(), f.end());
        EXPECT_TRUE(retained.count(f));
      }
    }
  }
}

TEST(Support, RingNodesMatchBreadthFirstSearch) {
  const auto mesh = cube_mesh(500, 0.1, 0.2, 11);
  ASSERT_EQ(mesh.num_nodes(), 512);
  for (Index a = 0; a < mesh.num_nodes(); ++a) {
    const auto r1 = ring_support(mesh, a, 1);
    const auto r2 = ring_support(mesh, a, 2);
    EXPECT_GE(r2.neighbor_nodes.size(), r1.neighbor_nodes.size());
    EXPECT_TRUE(std::includes(r2.cells.begin(), r2.cells.end(), r1.cells.begin(), r1.cells.end()));
    if (a % 7 == 0) {
      const auto b1 = bfs_nodes(mesh, a, 1);
      const auto b2 = bfs_nodes(mesh, a, 2);
      EXPECT_EQ(std::set<Index>(r1.neighbor_nodes.begin(), r1.neighbor_nodes.end()), b1);
      EXPECT_EQ(std::set<Index>(r2.neighbor_nodes.begin(), r2.neighbor_nodes.end()), b2);
    }
  }
}

TEST(Support, InvalidArgumentsThrow) {
  const auto mesh = single_tet();
  EXPECT_THROW(ring_support(mesh, 4, 1), ConfigError);
  EXPECT_THROW(ring_support(mesh, 0, 0), ConfigError);
}

TEST(CellNeighbors, SingleTetAndOwnVertices) {
  const auto mesh = single_tet();
  const auto supports = build_supports(mesh, 1);
  const CellNeighborMap map(mesh.num_cells(), supports);
  auto n = map[0];
  EXPECT_EQ(std::vector<Index>(n.begin(), n.end()), (std::vector<Index>{0, 1, 2, 3}));

  const auto cube = cube_mesh(300, 0.1, 0.2, 2);
  const auto sup2 = build_supports(cube, 2);
  const CellNeighborMap map2(cube.num_cells(), sup2);
  for (Index c = 0; c < cube.num_cells(); ++c) {
    auto list = map2[c];
    for (Index v : cube.cell(c)) EXPECT_TRUE(std::binary_search(list.begin(), list.end(), v));
    if (c % 5 == 0) {
      EXPECT_EQ(std::vector<Index>(list.begin(), list.end()), neighbors_of_cell(sup2, c));
    }
  }
}

TEST(Locate, CentroidSharedFaceAndExterior) {
  const auto mesh = cube_mesh(125, 0.1, 0.15, 4);
  for (Index c = 0; c < mesh.num_cells(); c += 13) {
    EXPECT_EQ(locate_point(mesh, mesh.centroid(c), (c * 7) % mesh.num_cells()), c);
  }
  // Point on a shared face: lowest incident cell index.
  for (Index c = 0; c < mesh.num_cells(); c += 17) {
    for (int i = 0; i < 4; ++i) {
      const Index other = mesh.cell_neighbor(c, i);
      if (other < 0) continue;
      const auto f = mesh.oriented_facet(c, i);
      const Vec3 x = (mesh.node(f[0]) + mesh.node(f[1]) + mesh.node(f[2])) / 3.0;
      EXPECT_EQ(locate_point(mesh, x, c), std::min(c, other));
      EXPECT_EQ(locate_point(mesh, x, other), std::min(c, other));
    }
  }
  EXPECT_FALSE(locate_point(mesh, Vec3(5, 5, 5)).has_value());
  EXPECT_FALSE(locate_point(mesh, Vec3(0.05, 0.05, -1e-6)).has_value());
}

TEST(Generators, CylinderAndCubeAreValid) {
  const auto cyl = cylinder_mesh(2000);
  EXPECT_EQ(cyl.num_nodes(), 2025);
  const double r = 0.015;
  EXPECT_NEAR(cyl.measure(), M_PI * r * r * 0.017, 0.03 * M_PI * r * r * 0.017);
  const auto cube = cube_mesh(150);
  EXPECT_EQ(cube.num_nodes(), 150);
  const auto fine = cube_mesh(4500);
  EXPECT_EQ(fine.num_nodes(), 16 * 17 * 17);
  const auto rect = rectangle_mesh(11, 5, 10.0, 4.0);
  EXPECT_NEAR(rect.measure(), 40.0, 1e-12);
}
