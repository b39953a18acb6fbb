#ifndef PDSSL_CONVEX_HULL_HPP
#define PDSSL_CONVEX_HULL_HPP

#include "pdssl/core_types.hpp"

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace pdssl {

struct ConvexHull {
  /// Sorted indices of the input points that are hull vertices.
  std::vector<std::size_t> vertices;
  /// Outward-oriented (counter-clockwise seen from outside) triangles.
  std::vector<std::array<std::size_t, 3>> faces;
};

/// Quickhull over the given points. Points within a scale-relative tolerance
/// of a face count as inside. Throws Error("degenerate hull") when the input
/// has fewer than 4 points or is (numerically) coplanar.
ConvexHull quickhull(std::span<const Vec3> points);

/// Indices of the hull vertices of `points`, sorted ascending.
std::vector<std::size_t> convex_hull_3d(const PointCloud& points);

}  // namespace pdssl

#endif  // PDSSL_CONVEX_HULL_HPP
