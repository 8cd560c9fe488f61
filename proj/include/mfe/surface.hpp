#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mfe/util.hpp"

namespace mfe {

// Triangulated closed surface with unit total area. Geometry is carried
// intrinsically (per-edge lengths, per-face side lengths); embedding
// positions are kept for construction and output only.
//
// Built-in kinds have analytic geodesic oracles:
//  - Sphere: great-circle distance on the ideal unit-area round sphere of
//    radius 1/sqrt(4*pi). The embedding is scaled so the summed polyhedral
//    face area is exactly 1, so its circumradius differs from the ideal
//    radius by O(h^2); distances use the ideal model.
//  - FlatTorus: quotient metric on [0,Lx) x [0,Ly), Lx*Ly = 1.
//  - General (loaded meshes): Dijkstra on the edge graph. This is an upper
//    bound on the polyhedral geodesic distance with O(h) relative
//    overestimate; acceptable where distances feed test functions and
//    clustering.
class SurfaceMesh {
 public:
  enum class Kind { Sphere, FlatTorus, General };

  // Icosahedral subdivision projected to the round sphere, rescaled to unit
  // area. Level 0 is the icosahedron (V=12, E=30, F=20); each level
  // quadruples the face count. Levels above 8 (655362 vertices) are refused.
  static SurfaceMesh unit_sphere(int subdivision_level);

  // n x m periodic grid on [0,Lx) x [0,Ly), Lx/Ly = aspect, Lx*Ly = 1, each
  // cell split into two triangles. Requires n, m >= 3 (no duplicate edges).
  static SurfaceMesh flat_torus(int n, int m, double aspect = 1.0);

  // ASCII OFF or OBJ (by extension), triangles only, closed. Rescaled to
  // unit area.
  static SurfaceMesh from_file(const std::string& path);

  static SurfaceMesh from_triangles(std::vector<Eigen::Vector3d> positions,
                                    std::vector<std::array<int, 3>> faces,
                                    Kind kind = Kind::General);

  Kind kind() const { return kind_; }
  int vertex_count() const { return static_cast<int>(positions_.size()); }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  int face_count() const { return static_cast<int>(faces_.size()); }
  int euler_characteristic() const { return vertex_count() - edge_count() + face_count(); }
  int genus_hint() const { return (2 - euler_characteristic()) / 2; }

  const std::vector<Eigen::Vector3d>& positions() const { return positions_; }
  const std::vector<std::array<int, 3>>& faces() const { return faces_; }
  const std::vector<std::array<int, 2>>& edges() const { return edges_; }
  const std::vector<double>& edge_lengths() const { return edge_lengths_; }
  const std::vector<double>& face_areas() const { return face_areas_; }

  // Barycentric (one third of incident face areas) vertex weights; they sum
  // to the total area, i.e. to 1 within 1e-12.
  const Eigen::VectorXd& vertex_areas() const { return vertex_areas_; }
  double total_area() const;
  double max_edge_length() const;
  double mean_edge_length() const;
  // Metric diameter: analytic for built-ins, farthest-point estimate for
  // loaded meshes.
  double diameter() const;

  // Side lengths of face f opposite each of its three corners, in the
  // surface metric (quotient metric for the torus, chords for embeddings).
  std::array<double, 3> face_side_lengths(int f) const;

  // Geodesic distance between vertices (see class comment for the per-kind
  // semantics). Symmetric, zero on the diagonal, triangle inequality within
  // 1e-10.
  double distance(int a, int b) const;
  // All distances from one source; same semantics as distance().
  Eigen::VectorXd distances_from(int source) const;
  // Vertices within radius of center in the edge-graph metric (used for
  // clustering; O(ball) via truncated Dijkstra).
  std::vector<int> ball(int center, double radius) const;
  // Greedy geodesic farthest-point sample of size n, deterministic given
  // the start vertex.
  std::vector<int> farthest_point_sample(int n, int start = 0) const;

  const std::vector<std::vector<std::pair<int, double>>>& adjacency() const { return adjacency_; }

  // {V, E, F, chi, total_area, max_edge}
  nlohmann::ordered_json summary_json() const;

 private:
  SurfaceMesh() = default;
  void finalize(double torus_lx, double torus_ly);

  Kind kind_ = Kind::General;
  std::vector<Eigen::Vector3d> positions_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<std::array<int, 2>> edges_;
  std::vector<double> edge_lengths_;
  std::vector<double> face_areas_;
  Eigen::VectorXd vertex_areas_;
  std::vector<std::vector<std::pair<int, double>>> adjacency_;  // (neighbor, edge length)
  double sphere_radius_ = 0.0;  // ideal unit-area radius, Sphere only
  double torus_lx_ = 0.0, torus_ly_ = 0.0;
};

}  // namespace mfe
