#pragma once

// Scalar grids, marching cubes, mesh checks and OBJ / PLY (ascii) I/O.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "gen3d/detail/mc_tables.hpp"
#include "gen3d/errors.hpp"

namespace gen3d {

/// Values on the lattice bounds.min + (i, j, k) * spacing, x fastest.
struct ScalarGrid {
  std::array<int, 3> resolution{2, 2, 2};
  Eigen::AlignedBox3d bounds{Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Constant(1.0)};
  std::vector<double> values;

  void validate() const {
    for (int n : resolution) require(n >= 2, "grid: resolution must be >= 2 per axis");
    for (int a = 0; a < 3; ++a) require(bounds.max()[a] > bounds.min()[a], "grid: bounds must be non-degenerate");
    require(values.size() == size(), "grid: value count does not match the resolution");
  }

  std::size_t size() const {
    return static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2];
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution[1] + j) * resolution[0] + i;
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Eigen::Vector3d spacing() const {
    return (bounds.max() - bounds.min()).cwiseQuotient(
        Eigen::Vector3d(resolution[0] - 1, resolution[1] - 1, resolution[2] - 1));
  }
  Eigen::Vector3d point(int i, int j, int k) const {
    return bounds.min() + Eigen::Vector3d(i, j, k).cwiseProduct(spacing());
  }
};

/// Fills a grid from a batched scalar function of 3 x P positions. Points
/// are evaluated one z-slice at a time.
inline ScalarGrid sample_grid(const std::function<Eigen::VectorXd(const Eigen::Matrix3Xd&)>& fn,
                              std::array<int, 3> resolution, const Eigen::AlignedBox3d& bounds) {
  ScalarGrid g;
  g.resolution = resolution;
  g.bounds = bounds;
  for (int n : resolution) require(n >= 2, "grid: resolution must be >= 2 per axis");
  for (int a = 0; a < 3; ++a) require(bounds.max()[a] > bounds.min()[a], "grid: bounds must be non-degenerate");
  g.values.resize(g.size());
  const Eigen::Index slice = static_cast<Eigen::Index>(resolution[0]) * resolution[1];
  Eigen::Matrix3Xd xs(3, slice);
  for (int k = 0; k < resolution[2]; ++k) {
    for (int j = 0; j < resolution[1]; ++j)
      for (int i = 0; i < resolution[0]; ++i) xs.col(static_cast<Eigen::Index>(j) * resolution[0] + i) = g.point(i, j, k);
    const Eigen::VectorXd v = fn(xs);
    require(v.size() == slice, "grid: field returned the wrong number of values");
    std::copy(v.data(), v.data() + slice, g.values.begin() + static_cast<std::ptrdiff_t>(g.index(0, 0, k)));
  }
  return g;
}

/// Occupancy of `field` on the lattice.
template <class Field>
ScalarGrid sample_occupancy_grid(const Field& field, std::array<int, 3> resolution, const Eigen::AlignedBox3d& bounds) {
  return sample_grid([&](const Eigen::Matrix3Xd& xs) { return field.occupancy(xs); }, resolution, bounds);
}

/// The cube [-r, r]^3.
inline Eigen::AlignedBox3d cube_bounds(double r) {
  return {Eigen::Vector3d::Constant(-r), Eigen::Vector3d::Constant(r)};
}

struct TriangleMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Eigen::Vector3d> normals;  // per vertex

  bool empty() const { return faces.empty(); }
};

struct MarchingCubesOptions {
  /// Treat lattice points on the grid faces as lying below the level, so
  /// surfaces cut by the grid boundary are capped and the mesh stays closed.
  bool close_boundary = true;
};

namespace detail {

/// Gradient of the grid values at a lattice point (central differences,
/// one-sided on the faces).
inline Eigen::Vector3d lattice_gradient(const ScalarGrid& g, const std::vector<double>& v, int i, int j, int k) {
  const std::array<int, 3> p{i, j, k};
  const Eigen::Vector3d h = g.spacing();
  Eigen::Vector3d grad;
  for (int a = 0; a < 3; ++a) {
    std::array<int, 3> lo = p, hi = p;
    lo[a] = std::max(0, p[a] - 1);
    hi[a] = std::min(g.resolution[a] - 1, p[a] + 1);
    grad[a] = (v[g.index(hi[0], hi[1], hi[2])] - v[g.index(lo[0], lo[1], lo[2])]) / ((hi[a] - lo[a]) * h[a]);
  }
  return grad;
}

}  // namespace detail

/// Isosurface at `level`. Corners with value >= level count as inside; faces
/// are wound counter-clockwise seen from the side with lower values, and
/// normals point that way (-gradient), i.e. outward for occupancy. Vertices
/// are shared between neighbouring cells, so closed surfaces come out as
/// closed meshes.
inline TriangleMesh marching_cubes(const ScalarGrid& grid, double level, const MarchingCubesOptions& opt = {}) {
  grid.validate();
  require(std::isfinite(level), "marching_cubes: level must be finite");
  const auto [nx, ny, nz] = grid.resolution;
  std::vector<double> v = grid.values;
  if (opt.close_boundary) {
    const double below = std::nextafter(level, -std::numeric_limits<double>::infinity());
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
          if (i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1)
            v[grid.index(i, j, k)] = std::min(v[grid.index(i, j, k)], below);
  }

  TriangleMesh mesh;
  std::vector<int> edge_vertex(grid.size() * 3, -1);
  auto vertex_on_edge = [&](int i, int j, int k, int axis) {
    const std::size_t id = grid.index(i, j, k) * 3 + static_cast<std::size_t>(axis);
    if (edge_vertex[id] >= 0) return edge_vertex[id];
    std::array<int, 3> q{i, j, k};
    ++q[axis];
    const double v0 = v[grid.index(i, j, k)], v1 = v[grid.index(q[0], q[1], q[2])];
    const double t = std::clamp((level - v0) / (v1 - v0), 0.0, 1.0);
    const Eigen::Vector3d p0 = grid.point(i, j, k), p1 = grid.point(q[0], q[1], q[2]);
    const Eigen::Vector3d g0 = detail::lattice_gradient(grid, v, i, j, k);
    const Eigen::Vector3d g1 = detail::lattice_gradient(grid, v, q[0], q[1], q[2]);
    mesh.vertices.push_back(p0 + t * (p1 - p0));
    mesh.normals.push_back(-((1.0 - t) * g0 + t * g1));
    edge_vertex[id] = static_cast<int>(mesh.vertices.size()) - 1;
    return edge_vertex[id];
  };

  for (int k = 0; k + 1 < nz; ++k)
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = detail::kCornerOffset[c];
          if (v[grid.index(i + o[0], j + o[1], k + o[2])] < level) cube |= 1 << c;
        }
        if (cube == 0 || cube == 255) continue;
        const auto* row = detail::kTriTable[cube];
        for (int t = 0; row[t] >= 0; t += 3) {
          std::array<int, 3> tri{};
          for (int m = 0; m < 3; ++m) {
            const auto& ec = detail::kEdgeCorners[row[t + m]];
            const auto& a = detail::kCornerOffset[ec[0]];
            const auto& b = detail::kCornerOffset[ec[1]];
            int axis = 0;
            while (a[axis] == b[axis]) ++axis;
            const int ci = i + std::min(a[0], b[0]), cj = j + std::min(a[1], b[1]), ck = k + std::min(a[2], b[2]);
            tri[m] = vertex_on_edge(ci, cj, ck, axis);
          }
          mesh.faces.push_back({tri[0], tri[1], tri[2]});
        }
      }

  // Grid-gradient normals; fall back to area-weighted face normals where the
  // grid is flat.
  std::vector<Eigen::Vector3d> face_n(mesh.vertices.size(), Eigen::Vector3d::Zero());
  for (const auto& f : mesh.faces) {
    const Eigen::Vector3d n = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    for (int m = 0; m < 3; ++m) face_n[f[m]] += n;
  }
  for (std::size_t i = 0; i < mesh.normals.size(); ++i) {
    auto& n = mesh.normals[i];
    if (n.norm() > 1e-12)
      n.normalize();
    else if (face_n[i].norm() > 0.0)
      n = face_n[i].normalized();
    else
      n = Eigen::Vector3d::UnitZ();
  }
  return mesh;
}

struct MeshReport {
  bool watertight = false;
  long euler_characteristic = 0;
  Eigen::AlignedBox3d bbox;
  std::size_t triangles = 0;
  std::size_t degenerate = 0;       // faces with a repeated index
  std::size_t boundary_edges = 0;   // edges on exactly one face
  std::size_t nonmanifold_edges = 0;
  std::size_t inconsistent_edges = 0;  // shared edges traversed twice in the same direction
  std::size_t edges = 0;
};

/// Watertight: every edge lies on exactly two faces that traverse it in
/// opposite directions.
inline MeshReport mesh_diagnostics(const TriangleMesh& mesh) {
  MeshReport r;
  r.triangles = mesh.faces.size();
  r.bbox.setEmpty();
  for (const auto& p : mesh.vertices) r.bbox.extend(p);
  // (min, max) -> (face count, signed direction sum)
  std::map<std::pair<int, int>, std::pair<int, int>> edges;
  for (const auto& f : mesh.faces) {
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) {
      ++r.degenerate;
      continue;
    }
    for (int m = 0; m < 3; ++m) {
      const int a = f[m], b = f[(m + 1) % 3];
      auto& e = edges[{std::min(a, b), std::max(a, b)}];
      ++e.first;
      e.second += a < b ? 1 : -1;
    }
  }
  r.edges = edges.size();
  for (const auto& [key, e] : edges) {
    if (e.first == 1) ++r.boundary_edges;
    if (e.first > 2) ++r.nonmanifold_edges;
    if (e.first == 2 && e.second != 0) ++r.inconsistent_edges;
  }
  r.euler_characteristic = static_cast<long>(mesh.vertices.size()) - static_cast<long>(r.edges) +
                           static_cast<long>(mesh.faces.size()) - static_cast<long>(r.degenerate);
  r.watertight = !mesh.faces.empty() && r.degenerate == 0 && r.boundary_edges == 0 && r.nonmanifold_edges == 0 &&
                 r.inconsistent_edges == 0;
  return r;
}

// ---------------------------------------------------------------------------
// File formats

enum class MeshFormat { obj, ply };

inline MeshFormat mesh_format_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".obj") return MeshFormat::obj;
  if (ext == ".ply") return MeshFormat::ply;
  throw ContractError("unsupported mesh extension '" + ext + "' (use .obj or .ply)");
}

inline void export_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
  const MeshFormat fmt = mesh_format_for(path);
  for (const auto& f : mesh.faces)
    for (int idx : f)
      require(idx >= 0 && static_cast<std::size_t>(idx) < mesh.vertices.size(), "export_mesh: face index out of range");
  require(mesh.normals.empty() || mesh.normals.size() == mesh.vertices.size(), "export_mesh: one normal per vertex");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write mesh: " + path.string());
  const bool has_n = !mesh.normals.empty();
  char buf[160];
  if (fmt == MeshFormat::obj) {
    for (const auto& p : mesh.vertices) {
      std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", p.x(), p.y(), p.z());
      out << buf;
    }
    for (const auto& n : mesh.normals) {
      std::snprintf(buf, sizeof buf, "vn %.9g %.9g %.9g\n", n.x(), n.y(), n.z());
      out << buf;
    }
    for (const auto& f : mesh.faces) {
      if (has_n)
        out << "f " << f[0] + 1 << "//" << f[0] + 1 << ' ' << f[1] + 1 << "//" << f[1] + 1 << ' ' << f[2] + 1 << "//"
            << f[2] + 1 << '\n';
      else
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
  } else {
    out << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n";
    if (has_n) out << "property float nx\nproperty float ny\nproperty float nz\n";
    out << "element face " << mesh.faces.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      const auto& p = mesh.vertices[i];
      std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", p.x(), p.y(), p.z());
      out << buf;
      if (has_n) {
        const auto& n = mesh.normals[i];
        std::snprintf(buf, sizeof buf, " %.9g %.9g %.9g", n.x(), n.y(), n.z());
        out << buf;
      }
      out << '\n';
    }
    for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  }
  if (!out) throw IoError("failed writing mesh: " + path.string());
}

namespace detail {

inline TriangleMesh read_obj(std::istream& in, const std::string& name) {
  TriangleMesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v" || tag == "vn") {
      Eigen::Vector3d p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw IoError(name + ":" + std::to_string(lineno) + ": bad " + tag + " record");
      (tag == "v" ? mesh.vertices : mesh.normals).push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        try {
          idx.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
        } catch (const std::logic_error&) {
          throw IoError(name + ":" + std::to_string(lineno) + ": bad face index '" + tok + "'");
        }
      }
      if (idx.size() < 3) throw IoError(name + ":" + std::to_string(lineno) + ": face with fewer than 3 vertices");
      for (std::size_t m = 1; m + 1 < idx.size(); ++m) mesh.faces.push_back({idx[0], idx[m], idx[m + 1]});
    }
  }
  return mesh;
}

inline TriangleMesh read_ply(std::istream& in, const std::string& name) {
  std::string line;
  std::size_t nv = 0, nf = 0;
  int vprops = 0;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) throw IoError(name + ": not a PLY file");
  std::string element;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string f;
      ls >> f;
      if (f != "ascii") throw IoError(name + ": only ascii PLY is supported");
    } else if (tag == "element") {
      std::size_t n = 0;
      ls >> element >> n;
      if (element == "vertex") nv = n;
      if (element == "face") nf = n;
    } else if (tag == "property" && element == "vertex") {
      ++vprops;
    } else if (tag == "end_header") {
      break;
    }
  }
  if (nv > 0 && vprops < 3) throw IoError(name + ": vertices need x, y, z properties");
  TriangleMesh mesh;
  for (std::size_t i = 0; i < nv; ++i) {
    std::vector<double> vals(static_cast<std::size_t>(vprops));
    for (auto& x : vals)
      if (!(in >> x)) throw IoError(name + ": truncated vertex list");
    mesh.vertices.emplace_back(vals[0], vals[1], vals[2]);
    if (vprops >= 6) mesh.normals.emplace_back(vals[3], vals[4], vals[5]);
  }
  for (std::size_t i = 0; i < nf; ++i) {
    int count = 0;
    if (!(in >> count) || count < 3) throw IoError(name + ": bad face record");
    std::vector<int> idx(static_cast<std::size_t>(count));
    for (auto& x : idx)
      if (!(in >> x)) throw IoError(name + ": truncated face list");
    for (std::size_t m = 1; m + 1 < idx.size(); ++m) mesh.faces.push_back({idx[0], idx[m], idx[m + 1]});
  }
  return mesh;
}

}  // namespace detail

inline TriangleMesh read_mesh(const std::filesystem::path& path) {
  const MeshFormat fmt = mesh_format_for(path);
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh: " + path.string());
  auto mesh = fmt == MeshFormat::obj ? detail::read_obj(in, path.string()) : detail::read_ply(in, path.string());
  for (const auto& f : mesh.faces)
    for (int idx : f)
      if (idx < 0 || static_cast<std::size_t>(idx) >= mesh.vertices.size())
        throw IoError(path.string() + ": face index out of range");
  if (!mesh.normals.empty() && mesh.normals.size() != mesh.vertices.size())
    throw IoError(path.string() + ": normal count does not match vertex count");
  return mesh;
}

}  // namespace gen3d
