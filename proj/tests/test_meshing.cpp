#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "gen3d/analytic_fields.hpp"
#include "gen3d/meshing.hpp"
#include "test_util.hpp"

using namespace gen3d;

namespace {

ScalarGrid sphere_grid(int res, double radius = 0.5) {
  const auto f = make_sphere_field(radius, 20.0);
  return sample_occupancy_grid(f, {res, res, res}, cube_bounds(1.0));
}

double signed_volume(const TriangleMesh& m) {
  double v = 0.0;
  for (const auto& f : m.faces) v += m.vertices[f[0]].dot(m.vertices[f[1]].cross(m.vertices[f[2]])) / 6.0;
  return v;
}

TriangleMesh tetrahedron() {
  TriangleMesh m;
  m.vertices = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  m.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return m;
}

}  // namespace

TEST(ScalarGrid, TwoByTwoByTwoHasEightCorners) {
  int calls = 0;
  const auto g = sample_grid(
      [&](const Eigen::Matrix3Xd& xs) {
        calls += static_cast<int>(xs.cols());
        return Eigen::VectorXd::Constant(xs.cols(), 0.9);
      },
      {2, 2, 2}, cube_bounds(1.0));
  EXPECT_EQ(calls, 8);
  EXPECT_EQ(g.values.size(), 8u);
  for (double v : g.values) EXPECT_EQ(v, 0.9);
  EXPECT_TRUE(g.point(1, 1, 1).isApprox(Eigen::Vector3d::Ones()));
  EXPECT_TRUE(g.point(0, 0, 0).isApprox(-Eigen::Vector3d::Ones()));
}

TEST(ScalarGrid, RejectsDegenerateResolution) {
  EXPECT_THROW(sample_grid([](const Eigen::Matrix3Xd& xs) { return Eigen::VectorXd::Zero(xs.cols()); }, {1, 4, 4},
                           cube_bounds(1.0)),
               ContractError);
}

TEST(MarchingCubes, AllBelowLevelGivesEmptyMesh) {
  ScalarGrid g;
  g.resolution = {4, 4, 4};
  g.values.assign(g.size(), 0.1);
  EXPECT_TRUE(marching_cubes(g, 0.5).empty());
}

TEST(MarchingCubes, SphereVerticesNearRadius) {
  const auto g = sphere_grid(64);
  const auto mesh = marching_cubes(g, 0.5);
  ASSERT_FALSE(mesh.empty());
  const double h = g.spacing().x();
  for (const auto& v : mesh.vertices) EXPECT_NEAR(v.norm(), 0.5, 2 * h);
}

TEST(MarchingCubes, SphereIsClosedManifold) {
  const auto mesh = marching_cubes(sphere_grid(64), 0.5);
  const auto r = mesh_diagnostics(mesh);
  EXPECT_TRUE(r.watertight);
  EXPECT_EQ(r.boundary_edges, 0u);
  EXPECT_EQ(r.nonmanifold_edges, 0u);
  EXPECT_EQ(r.euler_characteristic, 2);
}

TEST(MarchingCubes, FacesWoundOutwardWithMatchingNormals) {
  const auto mesh = marching_cubes(sphere_grid(48), 0.5);
  // Positive signed volume means counter-clockwise seen from outside.
  EXPECT_NEAR(signed_volume(mesh), 4.0 / 3.0 * std::numbers::pi * 0.125, 0.02);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    EXPECT_NEAR(mesh.normals[i].norm(), 1.0, 1e-9);
    EXPECT_GT(mesh.normals[i].dot(mesh.vertices[i].normalized()), 0.99);
  }
}

TEST(MarchingCubes, TorusHasEulerCharacteristicZero) {
  const TorusField torus(TorusProfile{0.5, 0.2, 20.0});
  const auto g = sample_occupancy_grid(torus, {64, 64, 64}, cube_bounds(1.0));
  const auto r = mesh_diagnostics(marching_cubes(g, 0.5));
  EXPECT_TRUE(r.watertight);
  EXPECT_EQ(r.euler_characteristic, 0);
}

TEST(MarchingCubes, SurfaceCutByGridBoundaryIsCapped) {
  // Half-space z < 0.3 fills most of the cube and meets five of its faces.
  const PlaneField plane(PlaneProfile{-Eigen::Vector3d::UnitZ(), -0.3, 10.0});
  const auto g = sample_occupancy_grid(plane, {16, 16, 16}, cube_bounds(1.0));
  const auto closed = mesh_diagnostics(marching_cubes(g, 0.5));
  EXPECT_TRUE(closed.watertight);
  EXPECT_EQ(closed.euler_characteristic, 2);
  const auto open = mesh_diagnostics(marching_cubes(g, 0.5, {.close_boundary = false}));
  EXPECT_FALSE(open.watertight);
  EXPECT_GT(open.boundary_edges, 0u);
}

TEST(MarchingCubes, RandomFieldsStayManifold) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    ScalarGrid g;
    g.resolution = {9, 8, 7};
    g.values.resize(g.size());
    for (auto& v : g.values) v = rng.uniform();
    const auto r = mesh_diagnostics(marching_cubes(g, 0.5));
    EXPECT_EQ(r.boundary_edges, 0u) << "trial " << trial;
    EXPECT_EQ(r.nonmanifold_edges, 0u) << "trial " << trial;
    EXPECT_EQ(r.inconsistent_edges, 0u) << "trial " << trial;
    EXPECT_EQ(r.degenerate, 0u) << "trial " << trial;
  }
}

TEST(MeshDiagnostics, SingleTriangleIsOpen) {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  const auto r = mesh_diagnostics(m);
  EXPECT_FALSE(r.watertight);
  EXPECT_EQ(r.boundary_edges, 3u);
}

TEST(MeshDiagnostics, TetrahedronIsClosed) {
  const auto r = mesh_diagnostics(tetrahedron());
  EXPECT_TRUE(r.watertight);
  EXPECT_EQ(r.euler_characteristic, 2);
  EXPECT_GT(signed_volume(tetrahedron()), 0.0);
}

TEST(MeshDiagnostics, FlippedFaceIsInconsistent) {
  auto m = tetrahedron();
  std::swap(m.faces[0][1], m.faces[0][2]);
  const auto r = mesh_diagnostics(m);
  EXPECT_FALSE(r.watertight);
  EXPECT_EQ(r.inconsistent_edges, 3u);
}

class MeshFiles : public testutil::TempDirTest {};

TEST_F(MeshFiles, SingleTriangleObjLayout) {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  export_mesh(m, dir() / "tri.obj");
  std::ifstream in(dir() / "tri.obj");
  int v = 0, f = 0;
  std::string line, face;
  while (std::getline(in, line)) {
    if (line.rfind("v ", 0) == 0) ++v;
    if (line.rfind("f ", 0) == 0) {
      ++f;
      face = line;
    }
  }
  EXPECT_EQ(v, 3);
  EXPECT_EQ(f, 1);
  EXPECT_EQ(face, "f 1 2 3");
}

TEST_F(MeshFiles, EmptyMeshWritesValidFiles) {
  const TriangleMesh m;
  export_mesh(m, dir() / "e.obj");
  export_mesh(m, dir() / "e.ply");
  EXPECT_TRUE(read_mesh(dir() / "e.obj").vertices.empty());
  const auto p = read_mesh(dir() / "e.ply");
  EXPECT_TRUE(p.vertices.empty());
  EXPECT_TRUE(p.faces.empty());
}

TEST_F(MeshFiles, RoundTripPreservesGeometry) {
  const auto mesh = marching_cubes(sphere_grid(32), 0.5);
  for (const char* name : {"s.obj", "s.ply"}) {
    export_mesh(mesh, dir() / name);
    const auto back = read_mesh(dir() / name);
    ASSERT_EQ(back.vertices.size(), mesh.vertices.size()) << name;
    ASSERT_EQ(back.faces, mesh.faces) << name;
    ASSERT_EQ(back.normals.size(), mesh.normals.size()) << name;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      EXPECT_LT((back.vertices[i] - mesh.vertices[i]).cwiseAbs().maxCoeff(), 1e-5);
      EXPECT_LT((back.normals[i] - mesh.normals[i]).cwiseAbs().maxCoeff(), 1e-5);
    }
  }
}

TEST_F(MeshFiles, IndependentObjReaderAgrees) {
  const auto mesh = marching_cubes(sphere_grid(24), 0.5);
  export_mesh(mesh, dir() / "s.obj");
  // Minimal reader written against the OBJ format, not the library parser.
  std::ifstream in(dir() / "s.obj");
  std::vector<Eigen::Vector3d> vs;
  std::vector<std::array<int, 3>> fs;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Eigen::Vector3d p;
      ls >> p.x() >> p.y() >> p.z();
      vs.push_back(p);
    } else if (tag == "f") {
      std::array<int, 3> f{};
      for (int& idx : f) {
        std::string tok;
        ls >> tok;
        idx = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      fs.push_back(f);
    }
  }
  ASSERT_EQ(vs.size(), mesh.vertices.size());
  ASSERT_EQ(fs, mesh.faces);
  for (const auto& f : fs)
    for (int idx : f) EXPECT_TRUE(idx >= 0 && idx < static_cast<int>(vs.size()));
}

TEST_F(MeshFiles, BadInputsAreRejected) {
  EXPECT_THROW(export_mesh(TriangleMesh{}, dir() / "m.stl"), ContractError);
  EXPECT_THROW(read_mesh(dir() / "missing.obj"), IoError);
  {
    std::ofstream bad(dir() / "bad.obj");
    bad << "v 0 0 0\nf 1 2 3\n";
  }
  EXPECT_THROW(read_mesh(dir() / "bad.obj"), IoError);
}
