#include "pdssl/convex_hull.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>

namespace pdssl {
namespace {

struct Face {
  std::array<std::uint32_t, 3> v{};
  Vec3 normal = Vec3::Zero();
  double offset = 0.0;
  std::vector<std::uint32_t> outside;
  bool alive = true;
};

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

class Quickhull {
 public:
  explicit Quickhull(std::span<const Vec3> pts) : pts_(pts) {
    double extent = 0.0;
    for (const auto& p : pts_) extent = std::max(extent, p.cwiseAbs().maxCoeff());
    eps_ = std::max(extent, 1.0) * 1e-11;
  }

  ConvexHull run() {
    if (pts_.size() < 4) throw Error("degenerate hull");
    build_simplex();
    while (!pending_.empty()) {
      const std::uint32_t f = pending_.back();
      pending_.pop_back();
      if (!faces_[f].alive || faces_[f].outside.empty()) continue;
      add_point(f);
    }
    return collect();
  }

 private:
  double distance(const Face& f, std::uint32_t p) const { return f.normal.dot(pts_[p]) - f.offset; }

  std::uint32_t make_face(std::uint32_t a, std::uint32_t b, std::uint32_t c) {
    Face f;
    f.v = {a, b, c};
    Vec3 n = (pts_[b] - pts_[a]).cross(pts_[c] - pts_[a]);
    const double len = n.norm();
    if (len > 0.0) n /= len;
    f.normal = n;
    f.offset = n.dot(pts_[a]);
    const auto id = static_cast<std::uint32_t>(faces_.size());
    faces_.push_back(std::move(f));
    edges_[edge_key(a, b)] = id;
    edges_[edge_key(b, c)] = id;
    edges_[edge_key(c, a)] = id;
    return id;
  }

  void build_simplex() {
    const std::size_t n = pts_.size();
    // Extreme points along the axes seed the farthest pair.
    std::array<std::uint32_t, 6> ext{};
    for (int axis = 0; axis < 3; ++axis) {
      for (std::uint32_t i = 0; i < n; ++i) {
        if (pts_[i][axis] < pts_[ext[2 * axis]][axis]) ext[2 * axis] = i;
        if (pts_[i][axis] > pts_[ext[2 * axis + 1]][axis]) ext[2 * axis + 1] = i;
      }
    }
    std::uint32_t i0 = 0, i1 = 0;
    double best = -1.0;
    for (auto a : ext)
      for (auto b : ext) {
        const double d = (pts_[a] - pts_[b]).squaredNorm();
        if (d > best) best = d, i0 = a, i1 = b;
      }
    if (std::sqrt(best) <= eps_) throw Error("degenerate hull");

    const Vec3 dir = (pts_[i1] - pts_[i0]).normalized();
    std::uint32_t i2 = 0;
    best = -1.0;
    for (std::uint32_t i = 0; i < n; ++i) {
      const Vec3 r = pts_[i] - pts_[i0];
      const double d = (r - r.dot(dir) * dir).squaredNorm();
      if (d > best) best = d, i2 = i;
    }
    if (std::sqrt(best) <= eps_) throw Error("degenerate hull");

    const Vec3 normal = (pts_[i1] - pts_[i0]).cross(pts_[i2] - pts_[i0]).normalized();
    std::uint32_t i3 = 0;
    best = -1.0;
    for (std::uint32_t i = 0; i < n; ++i) {
      const double d = std::abs(normal.dot(pts_[i] - pts_[i0]));
      if (d > best) best = d, i3 = i;
    }
    if (best <= eps_) throw Error("degenerate hull");

    const Vec3 center = (pts_[i0] + pts_[i1] + pts_[i2] + pts_[i3]) / 4.0;
    const std::array<std::array<std::uint32_t, 3>, 4> tris{{{i0, i1, i2}, {i0, i3, i1}, {i0, i2, i3}, {i1, i3, i2}}};
    for (auto t : tris) {
      const Vec3 nrm = (pts_[t[1]] - pts_[t[0]]).cross(pts_[t[2]] - pts_[t[0]]);
      if (nrm.dot(center - pts_[t[0]]) > 0.0) std::swap(t[1], t[2]);
      make_face(t[0], t[1], t[2]);
    }

    for (std::uint32_t i = 0; i < n; ++i) {
      if (i == i0 || i == i1 || i == i2 || i == i3) continue;
      assign(i, 0, 4);
    }
    for (std::uint32_t f = 0; f < 4; ++f)
      if (!faces_[f].outside.empty()) pending_.push_back(f);
  }

  // Puts p into the outside set of the first face in [first, last) it lies
  // strictly above; interior points are dropped.
  void assign(std::uint32_t p, std::uint32_t first, std::uint32_t last) {
    for (std::uint32_t f = first; f < last; ++f) {
      if (faces_[f].alive && distance(faces_[f], p) > eps_) {
        faces_[f].outside.push_back(p);
        return;
      }
    }
  }

  void add_point(std::uint32_t start) {
    Face& seed = faces_[start];
    std::uint32_t eye = seed.outside.front();
    double far = -1.0;
    for (auto p : seed.outside) {
      const double d = distance(seed, p);
      if (d > far) far = d, eye = p;
    }

    // Flood the faces visible from the eye; record the horizon as directed
    // edges of visible faces whose twin is hidden.
    std::vector<std::uint32_t> visible{start};
    std::unordered_map<std::uint32_t, bool> seen{{start, true}};
    std::vector<std::pair<std::uint32_t, std::uint32_t>> horizon;
    for (std::size_t k = 0; k < visible.size(); ++k) {
      const auto& fv = faces_[visible[k]].v;
      for (int e = 0; e < 3; ++e) {
        const std::uint32_t a = fv[e], b = fv[(e + 1) % 3];
        const auto twin = edges_.find(edge_key(b, a));
        if (twin == edges_.end()) throw Error("convex hull: broken edge adjacency");
        const std::uint32_t g = twin->second;
        auto it = seen.find(g);
        if (it == seen.end()) {
          const bool vis = distance(faces_[g], eye) > eps_;
          it = seen.emplace(g, vis).first;
          if (vis) visible.push_back(g);
        }
        if (!it->second) horizon.emplace_back(a, b);
      }
    }

    std::vector<std::uint32_t> orphans;
    for (auto f : visible) {
      Face& face = faces_[f];
      for (auto p : face.outside)
        if (p != eye) orphans.push_back(p);
      face.outside.clear();
      face.outside.shrink_to_fit();
      face.alive = false;
      for (int e = 0; e < 3; ++e) {
        const auto key = edge_key(face.v[e], face.v[(e + 1) % 3]);
        const auto it = edges_.find(key);
        if (it != edges_.end() && it->second == f) edges_.erase(it);
      }
    }

    const auto first_new = static_cast<std::uint32_t>(faces_.size());
    for (const auto& [a, b] : horizon) make_face(a, b, eye);
    const auto last_new = static_cast<std::uint32_t>(faces_.size());
    for (auto p : orphans) assign(p, first_new, last_new);
    for (auto f = first_new; f < last_new; ++f)
      if (!faces_[f].outside.empty()) pending_.push_back(f);
  }

  ConvexHull collect() const {
    ConvexHull hull;
    std::vector<char> used(pts_.size(), 0);
    for (const auto& f : faces_) {
      if (!f.alive) continue;
      hull.faces.push_back({f.v[0], f.v[1], f.v[2]});
      for (auto v : f.v) used[v] = 1;
    }
    for (std::size_t i = 0; i < used.size(); ++i)
      if (used[i]) hull.vertices.push_back(i);
    return hull;
  }

  std::span<const Vec3> pts_;
  double eps_ = 0.0;
  std::vector<Face> faces_;
  std::unordered_map<std::uint64_t, std::uint32_t> edges_;
  std::vector<std::uint32_t> pending_;
};

}  // namespace

ConvexHull quickhull(std::span<const Vec3> points) {
  for (const auto& p : points)
    if (!p.allFinite()) throw Error("convex hull: non-finite point");
  return Quickhull(points).run();
}

std::vector<std::size_t> convex_hull_3d(const PointCloud& points) {
  return quickhull(points.points).vertices;
}

}  // namespace pdssl
