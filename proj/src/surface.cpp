#include "mfe/surface.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace mfe {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Numerically stable Heron (Kahan's ordering). Sides need not be sorted.
double triangle_area_from_sides(double a, double b, double c) {
  double s[3] = {a, b, c};
  std::sort(s, s + 3);  // s[2] >= s[1] >= s[0]
  const double big = s[2], mid = s[1], small = s[0];
  const double t = (big + (mid + small)) * (small - (big - mid)) * (small + (big - mid)) *
                   (big + (mid - small));
  if (!(t > 0.0)) return 0.0;
  return 0.25 * std::sqrt(t);
}

double wrap_delta(double d, double period) {
  d = std::abs(d);
  return std::min(d, period - d);
}

struct DijkstraQueueEntry {
  double dist;
  int vertex;
  bool operator>(const DijkstraQueueEntry& o) const { return dist > o.dist; }
};

}  // namespace

void SurfaceMesh::finalize(double torus_lx, double torus_ly) {
  const int nv = vertex_count();
  const int nf = face_count();
  if (nv < 4 || nf < 4) throw std::invalid_argument("mesh: too few vertices or faces");
  torus_lx_ = torus_lx;
  torus_ly_ = torus_ly;

  std::map<std::pair<int, int>, int> edge_use;
  for (int f = 0; f < nf; ++f) {
    const auto& tri = faces_[f];
    for (int c = 0; c < 3; ++c) {
      int a = tri[c], b = tri[(c + 1) % 3];
      if (a < 0 || a >= nv || b < 0 || b >= nv)
        throw std::invalid_argument("mesh: face " + std::to_string(f) + " has out-of-range vertex");
      if (a == b) throw std::invalid_argument("mesh: face " + std::to_string(f) + " repeats a vertex");
      if (a > b) std::swap(a, b);
      edge_use[{a, b}] += 1;
    }
  }
  edges_.clear();
  edges_.reserve(edge_use.size());
  for (const auto& [key, count] : edge_use) {
    if (count != 2)
      throw std::invalid_argument("mesh: edge (" + std::to_string(key.first) + "," +
                                  std::to_string(key.second) + ") is shared by " +
                                  std::to_string(count) + " faces; surface must be closed");
    edges_.push_back({key.first, key.second});
  }

  // Raw intrinsic geometry, then one uniform rescale to unit total area.
  face_areas_.assign(nf, 0.0);
  for (int f = 0; f < nf; ++f) {
    const auto s = face_side_lengths(f);
    const double area = triangle_area_from_sides(s[0], s[1], s[2]);
    const double scale = std::max({s[0], s[1], s[2]});
    if (!(area > 1e-14 * scale * scale))
      throw std::invalid_argument("mesh: face " + std::to_string(f) + " is degenerate");
    face_areas_[f] = area;
  }
  const double total = kahan_sum(face_areas_.data(), face_areas_.size());
  const double area_scale = 1.0 / total;
  const double length_scale = 1.0 / std::sqrt(total);
  for (auto& p : positions_) p *= length_scale;
  for (auto& a : face_areas_) a *= area_scale;
  torus_lx_ *= length_scale;
  torus_ly_ *= length_scale;

  vertex_areas_ = Eigen::VectorXd::Zero(nv);
  for (int f = 0; f < nf; ++f)
    for (int c = 0; c < 3; ++c) vertex_areas_[faces_[f][c]] += face_areas_[f] / 3.0;

  edge_lengths_.assign(edges_.size(), 0.0);
  adjacency_.assign(nv, {});
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const int a = edges_[e][0], b = edges_[e][1];
    double len;
    if (kind_ == Kind::FlatTorus) {
      const double dx = wrap_delta(positions_[a].x() - positions_[b].x(), torus_lx_);
      const double dy = wrap_delta(positions_[a].y() - positions_[b].y(), torus_ly_);
      len = std::hypot(dx, dy);
    } else {
      len = (positions_[a] - positions_[b]).norm();
    }
    edge_lengths_[e] = len;
    adjacency_[a].push_back({b, len});
    adjacency_[b].push_back({a, len});
  }

  // Connectivity: Dijkstra-based oracles assume one component.
  std::vector<char> seen(nv, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int reached = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (const auto& [w, len] : adjacency_[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++reached;
        stack.push_back(w);
      }
  }
  if (reached != nv) throw std::invalid_argument("mesh: surface is not connected");
}

std::array<double, 3> SurfaceMesh::face_side_lengths(int f) const {
  const auto& tri = faces_[f];
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const int a = tri[(c + 1) % 3], b = tri[(c + 2) % 3];
    if (kind_ == Kind::FlatTorus) {
      const double dx = wrap_delta(positions_[a].x() - positions_[b].x(), torus_lx_);
      const double dy = wrap_delta(positions_[a].y() - positions_[b].y(), torus_ly_);
      out[c] = std::hypot(dx, dy);
    } else {
      out[c] = (positions_[a] - positions_[b]).norm();
    }
  }
  return out;
}

SurfaceMesh SurfaceMesh::unit_sphere(int subdivision_level) {
  if (subdivision_level < 0) throw std::invalid_argument("unit_sphere: negative subdivision level");
  if (subdivision_level > 8)
    throw std::invalid_argument("unit_sphere: level " + std::to_string(subdivision_level) +
                                " exceeds the supported maximum of 8 (655362 vertices)");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> pts = {
      {-1, t, 0},  {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> tris = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (auto& p : pts) p.normalize();

  for (int level = 0; level < subdivision_level; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Eigen::Vector3d m = (pts[a] + pts[b]).normalized();
      pts.push_back(m);
      int idx = static_cast<int>(pts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(tris.size() * 4);
    for (const auto& tri : tris) {
      const int a = mid(tri[0], tri[1]);
      const int b = mid(tri[1], tri[2]);
      const int c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    tris = std::move(next);
  }

  SurfaceMesh mesh;
  mesh.kind_ = Kind::Sphere;
  mesh.positions_ = std::move(pts);
  mesh.faces_ = std::move(tris);
  mesh.sphere_radius_ = 1.0 / (2.0 * std::sqrt(kPi));  // unit-area round sphere
  mesh.finalize(0.0, 0.0);
  return mesh;
}

SurfaceMesh SurfaceMesh::flat_torus(int n, int m, double aspect) {
  if (n < 3 || m < 3) throw std::invalid_argument("flat_torus: need n, m >= 3");
  if (!(aspect > 0.0) || !std::isfinite(aspect)) throw std::invalid_argument("flat_torus: aspect must be positive");
  const double lx = std::sqrt(aspect);
  const double ly = 1.0 / std::sqrt(aspect);
  const double dx = lx / n, dy = ly / m;

  SurfaceMesh mesh;
  mesh.kind_ = Kind::FlatTorus;
  mesh.positions_.reserve(static_cast<std::size_t>(n) * m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) mesh.positions_.push_back({i * dx, j * dy, 0.0});
  auto vid = [&](int i, int j) { return ((j % m + m) % m) * n + ((i % n + n) % n); };
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < n; ++i) {
      const int v00 = vid(i, j), v10 = vid(i + 1, j), v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
      mesh.faces_.push_back({v00, v10, v11});
      mesh.faces_.push_back({v00, v11, v01});
    }
  mesh.finalize(lx, ly);
  return mesh;
}

SurfaceMesh SurfaceMesh::from_triangles(std::vector<Eigen::Vector3d> positions,
                                        std::vector<std::array<int, 3>> faces, Kind kind) {
  SurfaceMesh mesh;
  mesh.kind_ = kind;
  if (kind == Kind::Sphere) mesh.sphere_radius_ = 1.0 / (2.0 * std::sqrt(kPi));
  mesh.positions_ = std::move(positions);
  mesh.faces_ = std::move(faces);
  mesh.finalize(0.0, 0.0);
  return mesh;
}

namespace {

std::string next_content_line(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find_first_not_of(" \t\r\n");
    if (pos == std::string::npos) continue;
    if (line[pos] == '#') continue;
    return line;
  }
  return {};
}

SurfaceMesh load_off(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh file: " + path);
  std::string header = next_content_line(in);
  if (header.substr(0, 3) != "OFF") throw std::runtime_error(path + ": missing OFF header");
  std::istringstream counts(next_content_line(in));
  long nv = 0, nf = 0, ne = 0;
  if (!(counts >> nv >> nf >> ne) || nv <= 0 || nf <= 0)
    throw std::runtime_error(path + ": bad OFF counts");
  std::vector<Eigen::Vector3d> pts(static_cast<std::size_t>(nv));
  for (long i = 0; i < nv; ++i) {
    std::istringstream ls(next_content_line(in));
    if (!(ls >> pts[i].x() >> pts[i].y() >> pts[i].z()))
      throw std::runtime_error(path + ": bad vertex line " + std::to_string(i));
  }
  std::vector<std::array<int, 3>> tris(static_cast<std::size_t>(nf));
  for (long f = 0; f < nf; ++f) {
    std::istringstream ls(next_content_line(in));
    int k = 0;
    if (!(ls >> k) || k != 3)
      throw std::runtime_error(path + ": face " + std::to_string(f) + " is not a triangle");
    if (!(ls >> tris[f][0] >> tris[f][1] >> tris[f][2]))
      throw std::runtime_error(path + ": bad face line " + std::to_string(f));
  }
  return SurfaceMesh::from_triangles(std::move(pts), std::move(tris));
}

SurfaceMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mesh file: " + path);
  std::vector<Eigen::Vector3d> pts;
  std::vector<std::array<int, 3>> tris;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Eigen::Vector3d p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw std::runtime_error(path + ": bad vertex line");
      pts.push_back(p);
    } else if (tag == "f") {
      std::array<int, 3> tri{};
      std::string tok;
      int got = 0;
      while (ls >> tok) {
        if (got >= 3) throw std::runtime_error(path + ": non-triangle face");
        tri[got++] = std::stoi(tok.substr(0, tok.find('/'))) - 1;  // 1-based
      }
      if (got != 3) throw std::runtime_error(path + ": non-triangle face");
      tris.push_back(tri);
    }
  }
  if (pts.empty() || tris.empty()) throw std::runtime_error(path + ": no mesh data found");
  return SurfaceMesh::from_triangles(std::move(pts), std::move(tris));
}

}  // namespace

SurfaceMesh SurfaceMesh::from_file(const std::string& path) {
  auto dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == "off") return load_off(path);
  if (ext == "obj") return load_obj(path);
  throw std::runtime_error("unsupported mesh format (want .off or .obj): " + path);
}

double SurfaceMesh::total_area() const { return kahan_sum(vertex_areas_); }

double SurfaceMesh::max_edge_length() const {
  return *std::max_element(edge_lengths_.begin(), edge_lengths_.end());
}

double SurfaceMesh::mean_edge_length() const {
  return kahan_sum(edge_lengths_.data(), edge_lengths_.size()) / static_cast<double>(edge_lengths_.size());
}

double SurfaceMesh::diameter() const {
  switch (kind_) {
    case Kind::Sphere:
      return kPi * sphere_radius_;
    case Kind::FlatTorus:
      return std::hypot(torus_lx_ / 2.0, torus_ly_ / 2.0);
    case Kind::General: {
      // Two sweeps of farthest-point search give a sharp lower estimate.
      Eigen::VectorXd d0 = distances_from(0);
      int far1 = 0;
      d0.maxCoeff(&far1);
      Eigen::VectorXd d1 = distances_from(far1);
      return d1.maxCoeff();
    }
  }
  return 0.0;
}

double SurfaceMesh::distance(int a, int b) const {
  const int nv = vertex_count();
  if (a < 0 || a >= nv || b < 0 || b >= nv) throw std::invalid_argument("distance: vertex out of range");
  if (a == b) return 0.0;
  switch (kind_) {
    case Kind::Sphere: {
      const Eigen::Vector3d u = positions_[a].normalized(), v = positions_[b].normalized();
      return sphere_radius_ * std::atan2(u.cross(v).norm(), u.dot(v));
    }
    case Kind::FlatTorus: {
      const double dx = wrap_delta(positions_[a].x() - positions_[b].x(), torus_lx_);
      const double dy = wrap_delta(positions_[a].y() - positions_[b].y(), torus_ly_);
      return std::hypot(dx, dy);
    }
    case Kind::General:
      return distances_from(a)[b];
  }
  return 0.0;
}

Eigen::VectorXd SurfaceMesh::distances_from(int source) const {
  const int nv = vertex_count();
  if (source < 0 || source >= nv) throw std::invalid_argument("distances_from: vertex out of range");
  Eigen::VectorXd dist(nv);
  if (kind_ == Kind::Sphere || kind_ == Kind::FlatTorus) {
    for (int v = 0; v < nv; ++v) dist[v] = v == source ? 0.0 : distance(source, v);
    return dist;
  }
  dist.setConstant(std::numeric_limits<double>::infinity());
  dist[source] = 0.0;
  std::priority_queue<DijkstraQueueEntry, std::vector<DijkstraQueueEntry>, std::greater<>> queue;
  queue.push({0.0, source});
  while (!queue.empty()) {
    auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const auto& [w, len] : adjacency_[v]) {
      const double nd = d + len;
      if (nd < dist[w]) {
        dist[w] = nd;
        queue.push({nd, w});
      }
    }
  }
  return dist;
}

std::vector<int> SurfaceMesh::ball(int center, double radius) const {
  const int nv = vertex_count();
  if (center < 0 || center >= nv) throw std::invalid_argument("ball: vertex out of range");
  std::vector<double> dist(nv, std::numeric_limits<double>::infinity());
  dist[center] = 0.0;
  std::priority_queue<DijkstraQueueEntry, std::vector<DijkstraQueueEntry>, std::greater<>> queue;
  queue.push({0.0, center});
  std::vector<int> members;
  while (!queue.empty()) {
    auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    members.push_back(v);
    for (const auto& [w, len] : adjacency_[v]) {
      const double nd = d + len;
      if (nd <= radius && nd < dist[w]) {
        dist[w] = nd;
        queue.push({nd, w});
      }
    }
  }
  std::sort(members.begin(), members.end());
  return members;
}

std::vector<int> SurfaceMesh::farthest_point_sample(int n, int start) const {
  const int nv = vertex_count();
  if (n < 1 || n > nv) throw std::invalid_argument("farthest_point_sample: bad sample size");
  if (start < 0 || start >= nv) throw std::invalid_argument("farthest_point_sample: bad start");
  std::vector<int> sample{start};
  Eigen::VectorXd mindist = distances_from(start);
  while (static_cast<int>(sample.size()) < n) {
    int best = 0;
    double bestd = -1.0;
    for (int v = 0; v < nv; ++v)
      if (mindist[v] > bestd) {
        bestd = mindist[v];
        best = v;
      }
    sample.push_back(best);
    mindist = mindist.cwiseMin(distances_from(best));
  }
  return sample;
}

nlohmann::ordered_json SurfaceMesh::summary_json() const {
  nlohmann::ordered_json j;
  j["V"] = vertex_count();
  j["E"] = edge_count();
  j["F"] = face_count();
  j["chi"] = euler_characteristic();
  j["total_area"] = total_area();
  j["max_edge"] = max_edge_length();
  return j;
}

}  // namespace mfe
