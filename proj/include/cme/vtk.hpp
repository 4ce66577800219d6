#pragma once

// Legacy ASCII VTK unstructured grid output.

#include "cme/common.hpp"
#include "cme/mesh.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <span>
#include <string>

namespace cme {

namespace detail {

// Shortest round-trip representation; independent of stream state and locale.
inline void put_double(std::ostream& os, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  os.write(buf, res.ptr - buf);
}

}  // namespace detail

/// Writes the mesh with nodal `displacement` (interleaved xyz) as POINT_DATA
/// and per-cell `strain_energy_density` as CELL_DATA. Either field may be
/// empty to omit it.
inline void write_vtk(std::ostream& os, const TetMesh& mesh, std::span<const double> displacement,
                      std::span<const double> cell_energy, const std::string& title = "cme") {
  const Index nn = mesh.num_nodes();
  const Index nc = mesh.num_cells();
  if (!displacement.empty() && displacement.size() != 3 * static_cast<std::size_t>(nn)) {
    throw ConfigError("displacement size does not match the mesh");
  }
  if (!cell_energy.empty() && cell_energy.size() != static_cast<std::size_t>(nc)) {
    throw ConfigError("cell field size does not match the mesh");
  }
  os << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << nn << " double\n";
  for (Index a = 0; a < nn; ++a) {
    const auto& x = mesh.node(a);
    for (int d = 0; d < 3; ++d) {
      if (d) os << ' ';
      detail::put_double(os, x(d));
    }
    os << '\n';
  }
  os << "CELLS " << nc << ' ' << 5 * static_cast<long>(nc) << '\n';
  for (Index c = 0; c < nc; ++c) {
    const auto& t = mesh.cell(c);
    os << 4 << ' ' << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
  }
  os << "CELL_TYPES " << nc << '\n';
  for (Index c = 0; c < nc; ++c) os << "10\n";
  if (!displacement.empty()) {
    os << "POINT_DATA " << nn << "\nVECTORS displacement double\n";
    for (Index a = 0; a < nn; ++a) {
      for (int d = 0; d < 3; ++d) {
        if (d) os << ' ';
        detail::put_double(os, displacement[3 * static_cast<std::size_t>(a) + d]);
      }
      os << '\n';
    }
  }
  if (!cell_energy.empty()) {
    os << "CELL_DATA " << nc << "\nSCALARS strain_energy_density double 1\nLOOKUP_TABLE default\n";
    for (double v : cell_energy) {
      detail::put_double(os, v);
      os << '\n';
    }
  }
}

inline void write_vtk(const std::filesystem::path& path, const TetMesh& mesh,
                      std::span<const double> displacement, std::span<const double> cell_energy) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  write_vtk(os, mesh, displacement, cell_energy);
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

}  // namespace cme
