#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "mfe/surface.hpp"

using namespace mfe;

namespace {
constexpr double kPi = 3.14159265358979323846;

std::string write_temp(const std::string& name, const std::string& body) {
  std::string path = std::string("/tmp/") + name;
  std::ofstream out(path);
  out << body;
  return path;
}
}  // namespace

TEST_CASE("icosahedron combinatorics") {
  SurfaceMesh mesh = SurfaceMesh::unit_sphere(0);
  CHECK(mesh.vertex_count() == 12);
  CHECK(mesh.edge_count() == 30);
  CHECK(mesh.face_count() == 20);
  CHECK(mesh.euler_characteristic() == 2);
  CHECK(mesh.genus_hint() == 0);
}

TEST_CASE("subdivision level 2 counts") {
  SurfaceMesh mesh = SurfaceMesh::unit_sphere(2);
  // V_{n+1} = V_n + E_n, F_{n+1} = 4 F_n: 12 -> 42 -> 162, 20 -> 80 -> 320.
  CHECK(mesh.vertex_count() == 162);
  CHECK(mesh.face_count() == 320);
  CHECK(mesh.edge_count() == 480);  // chi = 2
  CHECK(mesh.euler_characteristic() == 2);
}

TEST_CASE("unit total area") {
  for (int level = 0; level <= 4; ++level) {
    SurfaceMesh mesh = SurfaceMesh::unit_sphere(level);
    CHECK(std::abs(mesh.total_area() - 1.0) <= 1e-12);
    double wsum = mesh.vertex_areas().sum();
    CHECK(std::abs(wsum - 1.0) <= 1e-12);
    CHECK(mesh.vertex_areas().minCoeff() > 0.0);
  }
  SurfaceMesh torus = SurfaceMesh::flat_torus(16, 16);
  CHECK(std::abs(torus.total_area() - 1.0) <= 1e-12);
  SurfaceMesh stretched = SurfaceMesh::flat_torus(12, 8, 2.0);
  CHECK(std::abs(stretched.total_area() - 1.0) <= 1e-12);
}

TEST_CASE("sphere antipodal distance is pi times the ideal radius") {
  const double r = 1.0 / std::sqrt(4.0 * kPi);
  SurfaceMesh mesh = SurfaceMesh::unit_sphere(3);
  // The vertex set is centrally symmetric; locate the antipode of vertex 0.
  const Eigen::Vector3d dir0 = mesh.positions()[0].normalized();
  int anti = -1;
  double best = 1e9;
  for (int v = 1; v < mesh.vertex_count(); ++v) {
    double miss = (mesh.positions()[v].normalized() + dir0).norm();
    if (miss < best) {
      best = miss;
      anti = v;
    }
  }
  REQUIRE(best < 1e-9);
  CHECK(std::abs(mesh.distance(0, anti) - kPi * r) <= 1e-10);
  CHECK(std::abs(mesh.diameter() - kPi * r) <= 1e-10);
  CHECK(mesh.distance(0, 0) == 0.0);
}

TEST_CASE("flat torus combinatorics and quotient metric") {
  SurfaceMesh mesh = SurfaceMesh::flat_torus(16, 16);
  CHECK(mesh.vertex_count() == 256);
  CHECK(mesh.face_count() == 512);
  CHECK(mesh.euler_characteristic() == 0);
  CHECK(mesh.genus_hint() == 1);

  // Unit square (aspect 1, n = m): vertex (i, j) sits at index j*n + i.
  CHECK(std::abs(mesh.distance(0, 8) - 0.5) <= 1e-12);       // offset (1/2, 0)
  CHECK(std::abs(mesh.distance(0, 15) - 1.0 / 16) <= 1e-12); // wraps around
  CHECK(std::abs(mesh.distance(0, 8 * 16 + 8) - std::sqrt(0.5)) <= 1e-12);
  CHECK(std::abs(mesh.diameter() - std::sqrt(0.5)) <= 1e-12);
}

TEST_CASE("square torus grid has three distinct edge lengths") {
  // n != m at aspect 1 gives two axis spacings plus the diagonal.
  SurfaceMesh mesh = SurfaceMesh::flat_torus(12, 16);
  std::set<long long> rounded;
  for (double len : mesh.edge_lengths())
    rounded.insert(static_cast<long long>(std::llround(len * 1e12)));
  CHECK(rounded.size() == 3);
  const double dx = 1.0 / 12, dy = 1.0 / 16;
  CHECK(rounded.count(std::llround(dx * 1e12)) == 1);
  CHECK(rounded.count(std::llround(dy * 1e12)) == 1);
  CHECK(rounded.count(std::llround(std::hypot(dx, dy) * 1e12)) == 1);
}

TEST_CASE("distance symmetry and triangle inequality") {
  SurfaceMesh sphere = SurfaceMesh::unit_sphere(2);
  SurfaceMesh torus = SurfaceMesh::flat_torus(9, 7);
  for (const SurfaceMesh& mesh : {sphere, torus}) {
    const int nv = mesh.vertex_count();
    const int a = 0, b = nv / 3, c = (2 * nv) / 3;
    CHECK(std::abs(mesh.distance(a, b) - mesh.distance(b, a)) <= 1e-12);
    CHECK(mesh.distance(a, c) <= mesh.distance(a, b) + mesh.distance(b, c) + 1e-10);
    Eigen::VectorXd from_a = mesh.distances_from(a);
    CHECK(from_a[a] == 0.0);
    CHECK(std::abs(from_a[b] - mesh.distance(a, b)) <= 1e-12);
  }
}

TEST_CASE("refinement shrinks the longest edge") {
  double prev = SurfaceMesh::unit_sphere(0).max_edge_length();
  for (int level = 1; level <= 3; ++level) {
    double cur = SurfaceMesh::unit_sphere(level).max_edge_length();
    CHECK(cur < 0.6 * prev);  // roughly halves per level
    prev = cur;
  }
  SurfaceMesh mesh = SurfaceMesh::unit_sphere(2);
  CHECK(mesh.mean_edge_length() <= mesh.max_edge_length());
}

TEST_CASE("face side lengths match the surface metric") {
  SurfaceMesh mesh = SurfaceMesh::flat_torus(10, 10);
  for (int f : {0, 57, 131}) {
    const auto& tri = mesh.faces()[static_cast<size_t>(f)];
    const auto sides = mesh.face_side_lengths(f);
    // Side k is opposite corner k: it joins the other two corners, and for
    // grid neighbors the quotient distance equals the edge length.
    for (int k = 0; k < 3; ++k) {
      int u = tri[static_cast<size_t>((k + 1) % 3)];
      int v = tri[static_cast<size_t>((k + 2) % 3)];
      CHECK(std::abs(sides[static_cast<size_t>(k)] - mesh.distance(u, v)) <= 1e-12);
    }
  }
}

TEST_CASE("OFF and OBJ round trip") {
  SurfaceMesh original = SurfaceMesh::unit_sphere(1);

  char buf[256];
  std::string off = "OFF\n";
  std::snprintf(buf, sizeof(buf), "%d %d 0\n", original.vertex_count(), original.face_count());
  off += buf;
  for (const auto& p : original.positions()) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    off += buf;
  }
  for (const auto& f : original.faces()) {
    std::snprintf(buf, sizeof(buf), "3 %d %d %d\n", f[0], f[1], f[2]);
    off += buf;
  }
  SurfaceMesh re_off = SurfaceMesh::from_file(write_temp("roundtrip.off", off));
  CHECK(re_off.vertex_count() == original.vertex_count());
  CHECK(re_off.edge_count() == original.edge_count());
  CHECK(re_off.face_count() == original.face_count());
  CHECK(std::abs(re_off.total_area() - 1.0) <= 1e-12);
  // The source already has unit area, so the rescale is a no-op.
  double max_dev = 0.0;
  for (int v = 0; v < original.vertex_count(); ++v)
    max_dev = std::max(max_dev, (re_off.positions()[static_cast<size_t>(v)] -
                                 original.positions()[static_cast<size_t>(v)]).norm());
  CHECK(max_dev <= 1e-9);
  CHECK(re_off.kind() == SurfaceMesh::Kind::General);

  std::string obj;
  for (const auto& p : original.positions()) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    obj += buf;
  }
  for (const auto& f : original.faces()) {
    std::snprintf(buf, sizeof(buf), "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    obj += buf;
  }
  SurfaceMesh re_obj = SurfaceMesh::from_file(write_temp("roundtrip.obj", obj));
  CHECK(re_obj.vertex_count() == original.vertex_count());
  CHECK(re_obj.face_count() == original.face_count());
  CHECK(std::abs(re_obj.total_area() - 1.0) <= 1e-12);
}

TEST_CASE("general meshes use graph distances that honor the axioms") {
  SurfaceMesh mesh = SurfaceMesh::from_triangles(
      SurfaceMesh::unit_sphere(1).positions(), SurfaceMesh::unit_sphere(1).faces());
  const int nv = mesh.vertex_count();
  CHECK(mesh.distance(3, 3) == 0.0);
  CHECK(std::abs(mesh.distance(2, nv - 1) - mesh.distance(nv - 1, 2)) <= 1e-12);
  CHECK(mesh.distance(0, nv / 2) <=
        mesh.distance(0, nv / 4) + mesh.distance(nv / 4, nv / 2) + 1e-10);
  // Graph distance can only overestimate the embedded great-circle length.
  const double r = 1.0 / std::sqrt(4.0 * kPi);
  const Eigen::Vector3d a = mesh.positions()[0].normalized();
  const Eigen::Vector3d b = mesh.positions()[static_cast<size_t>(nv / 2)].normalized();
  const double arc = r * std::acos(std::clamp(a.dot(b), -1.0, 1.0));
  CHECK(mesh.distance(0, nv / 2) >= arc * (1.0 - 1e-9));
}

TEST_CASE("ball and farthest point sampling") {
  SurfaceMesh mesh = SurfaceMesh::unit_sphere(2);
  auto tiny = mesh.ball(5, 1e-14);
  REQUIRE(tiny.size() == 1);
  CHECK(tiny[0] == 5);

  const double radius = 3.0 * mesh.mean_edge_length();
  auto ball = mesh.ball(5, radius);
  CHECK(ball.size() > 1);
  Eigen::VectorXd dist = mesh.distances_from(5);
  for (int v : ball) CHECK(dist[v] <= radius + 1e-12);
  for (const auto& [w, len] : mesh.adjacency()[5]) {
    (void)len;
    CHECK(std::find(ball.begin(), ball.end(), w) != ball.end());
  }

  auto fps = mesh.farthest_point_sample(4, 7);
  REQUIRE(fps.size() == 4);
  CHECK(fps[0] == 7);
  std::set<int> uniq(fps.begin(), fps.end());
  CHECK(uniq.size() == 4);
  CHECK(mesh.farthest_point_sample(4, 7) == fps);  // deterministic
  // The second site is the metric farthest point from the first.
  Eigen::VectorXd from_start = mesh.distances_from(7);
  int arg = 0;
  from_start.maxCoeff(&arg);
  CHECK(std::abs(from_start[fps[1]] - from_start[arg]) <= 1e-12);
}

TEST_CASE("summary json schema") {
  auto j = SurfaceMesh::flat_torus(8, 8).summary_json();
  CHECK(j.at("V").get<int>() == 64);
  CHECK(j.at("E").get<int>() == 192);
  CHECK(j.at("F").get<int>() == 128);
  CHECK(j.at("chi").get<int>() == 0);
  CHECK(std::abs(j.at("total_area").get<double>() - 1.0) <= 1e-12);
  CHECK(j.at("max_edge").get<double>() > 0.0);
}

TEST_CASE("construction rejects bad input") {
  CHECK_THROWS_AS(SurfaceMesh::unit_sphere(9), std::invalid_argument);
  CHECK_THROWS_AS(SurfaceMesh::unit_sphere(-1), std::invalid_argument);
  CHECK_THROWS_AS(SurfaceMesh::flat_torus(2, 5), std::invalid_argument);
  CHECK_THROWS_AS(SurfaceMesh::flat_torus(5, 5, 0.0), std::invalid_argument);
  CHECK_THROWS(SurfaceMesh::from_file("/tmp/definitely_missing_mesh.off"));
  CHECK_THROWS(SurfaceMesh::from_file(write_temp("bad_header.off", "NOPE\n1 2 3\n")));

  // A duplicated vertex inside face 1 is reported by index.
  std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::vector<std::array<int, 3>> tris = {{0, 1, 2}, {0, 3, 3}, {1, 3, 2}, {0, 2, 3}};
  try {
    SurfaceMesh::from_triangles(pts, tris);
    FAIL("expected a validation error");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("face 1") != std::string::npos);
  }

  // A geometrically degenerate face is also named. Replace one tetrahedron
  // corner with a point collinear with its base edge.
  std::vector<Eigen::Vector3d> flat_pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {0, 1, 0}};
  std::vector<std::array<int, 3>> flat_tris = {{0, 1, 2}, {0, 2, 3}, {0, 3, 1}, {1, 3, 2}};
  try {
    SurfaceMesh::from_triangles(flat_pts, flat_tris);
    FAIL("expected a degeneracy error");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("degenerate") != std::string::npos);
  }

  // An open surface (boundary edge shared by one face) is refused.
  SurfaceMesh icosa = SurfaceMesh::unit_sphere(0);
  auto open_tris = icosa.faces();
  open_tris.pop_back();
  CHECK_THROWS_AS(SurfaceMesh::from_triangles(icosa.positions(), open_tris),
                  std::invalid_argument);
}
