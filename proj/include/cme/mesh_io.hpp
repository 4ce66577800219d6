#pragma once

#include "cme/mesh.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace cme {

namespace detail {

struct LineReader {
  std::ifstream in;
  std::string path;
  int line_no = 0;

  explicit LineReader(const std::filesystem::path& p) : in(p), path(p.string()) {
    if (!in) throw MeshError("cannot open mesh file '" + path + "'");
  }

  // Next non-empty line with '#' comments stripped.
  bool next(std::istringstream& out) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      out.clear();
      out.str(line);
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw MeshError(path + ":" + std::to_string(line_no) + ": " + msg);
  }
};

}  // namespace detail

/// Spatial dimension declared in the header of a `.node` file.
inline int mesh_dimension(const std::filesystem::path& node_file) {
  detail::LineReader in(node_file);
  std::istringstream ls;
  if (!in.next(ls)) in.fail("missing header");
  long count = 0;
  int dim = 0;
  if (!(ls >> count >> dim)) in.fail("malformed header");
  if (dim != 2 && dim != 3) in.fail("dimension must be 2 or 3");
  return dim;
}

/// Reads a TetGen-style ASCII `.node` / `.ele` pair.
///
/// `.node`: header "N dim nattr nmarker", then "idx x y [z] [attrs] [marker]".
/// `.ele`:  header "M npc nattr", then "idx n1 .. n(dim+1) [attrs]".
/// Node numbering may start at 0 or 1; the base is taken from the first node
/// index and cell references are interpreted in that base.
template <int Dim>
SimplexMesh<Dim> load_mesh(const std::filesystem::path& node_file,
                           const std::filesystem::path& ele_file) {
  using Point = typename SimplexMesh<Dim>::Point;
  using Cell = typename SimplexMesh<Dim>::Cell;

  detail::LineReader nodes_in(node_file);
  std::istringstream ls;
  if (!nodes_in.next(ls)) nodes_in.fail("missing header");
  long count = 0;
  int dim = 0, nattr = 0, nmark = 0;
  if (!(ls >> count >> dim)) nodes_in.fail("malformed header");
  ls >> nattr >> nmark;
  if (dim != Dim) {
    nodes_in.fail("expected dimension " + std::to_string(Dim) + ", got " +
                  std::to_string(dim));
  }
  if (count <= 0) nodes_in.fail("node count must be positive");

  std::vector<Point> nodes(static_cast<std::size_t>(count));
  std::vector<char> seen(static_cast<std::size_t>(count), 0);
  long base = -1;
  for (long i = 0; i < count; ++i) {
    if (!nodes_in.next(ls)) nodes_in.fail("unexpected end of file");
    long idx = 0;
    Point p;
    if (!(ls >> idx)) nodes_in.fail("malformed node index");
    for (int d = 0; d < Dim; ++d) {
      if (!(ls >> p(d))) nodes_in.fail("malformed node coordinates");
    }
    if (base < 0) {
      if (idx != 0 && idx != 1) nodes_in.fail("first node index must be 0 or 1");
      base = idx;
    }
    const long pos = idx - base;
    if (pos < 0 || pos >= count) {
      nodes_in.fail("node index " + std::to_string(idx) + " out of range");
    }
    if (seen[pos]) nodes_in.fail("duplicate node index " + std::to_string(idx));
    seen[pos] = 1;
    nodes[pos] = p;
  }

  detail::LineReader ele_in(ele_file);
  if (!ele_in.next(ls)) ele_in.fail("missing header");
  long ncells = 0;
  int npc = 0;
  if (!(ls >> ncells >> npc)) ele_in.fail("malformed header");
  if (npc != Dim + 1) {
    ele_in.fail("expected " + std::to_string(Dim + 1) + " nodes per cell, got " +
                std::to_string(npc));
  }
  if (ncells <= 0) ele_in.fail("cell count must be positive");
  std::vector<Cell> cells(static_cast<std::size_t>(ncells));
  for (long i = 0; i < ncells; ++i) {
    if (!ele_in.next(ls)) ele_in.fail("unexpected end of file");
    long idx = 0;
    if (!(ls >> idx)) ele_in.fail("malformed cell index");
    for (int k = 0; k <= Dim; ++k) {
      long v = 0;
      if (!(ls >> v)) ele_in.fail("malformed cell connectivity");
      const long pos = v - base;
      if (pos < 0 || pos >= count) {
        ele_in.fail("cell references node " + std::to_string(v) + " of " +
                    std::to_string(count));
      }
      cells[i][k] = static_cast<Index>(pos);
    }
  }
  return SimplexMesh<Dim>(std::move(nodes), std::move(cells));
}

/// Writes the mesh as a 0-based TetGen-style `.node` / `.ele` pair.
template <int Dim>
void save_mesh(const SimplexMesh<Dim>& mesh, const std::filesystem::path& node_file,
               const std::filesystem::path& ele_file) {
  std::ofstream nodes(node_file);
  if (!nodes) throw MeshError("cannot write '" + node_file.string() + "'");
  nodes << mesh.num_nodes() << ' ' << Dim << " 0 0\n" << std::setprecision(17);
  for (Index a = 0; a < mesh.num_nodes(); ++a) {
    nodes << a;
    for (int d = 0; d < Dim; ++d) nodes << ' ' << mesh.node(a)(d);
    nodes << '\n';
  }
  std::ofstream eles(ele_file);
  if (!eles) throw MeshError("cannot write '" + ele_file.string() + "'");
  eles << mesh.num_cells() << ' ' << Dim + 1 << " 0\n";
  for (Index c = 0; c < mesh.num_cells(); ++c) {
    eles << c;
    for (Index v : mesh.cell(c)) eles << ' ' << v;
    eles << '\n';
  }
}

}  // namespace cme
