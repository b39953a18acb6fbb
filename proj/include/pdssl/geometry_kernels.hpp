// Numerical kernels behind the training objectives: earth mover's distance
// (exact Hungarian and epsilon-scaling auction), its fixed-assignment
// gradient, Chamfer distance, Prim MST, the MST expansion penalty, and k-NN.
//
// EMD values are mean matched distances: (1/n) * sum_i |P_i - Q_map(i)|.

#ifndef PDSSL_GEOMETRY_KERNELS_HPP
#define PDSSL_GEOMETRY_KERNELS_HPP

#include "pdssl/core_types.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace pdssl {

/// Bijection from points of P onto points of Q with its mean matched cost.
struct Assignment {
  std::vector<std::size_t> mapping;  // P_i -> Q_mapping[i]
  double cost = 0.0;
};

struct AuctionParams {
  /// Absolute terminal epsilon; when <= 0 it is eps_final_relative * diameter,
  /// the diameter being the largest P-Q distance.
  double eps_final = 0.0;
  double eps_final_relative = 1e-4;
  double eps_scale = 4.0;
  std::size_t max_rounds = 1'000'000;
};

/// Mean matched distance of `mapping` between P and Q.
double assignment_cost(const PointCloud& p, const PointCloud& q, std::span<const std::size_t> mapping);

/// Optimal assignment by the Hungarian method (O(n^3); intended for n <= 256).
Assignment emd_exact(const PointCloud& p, const PointCloud& q);

/// Epsilon-scaling forward auction. The mean cost is within eps_final of the
/// optimum. Throws Error("auction stalled ...") after max_rounds bid rounds.
Assignment emd_auction(const PointCloud& p, const PointCloud& q, const AuctionParams& params = {});

/// Gradient of the mean matched distance w.r.t. each P_i with the assignment
/// held fixed; zero for pairs closer than 1e-12.
std::vector<Vec3> emd_gradient(const PointCloud& p, const PointCloud& q, const Assignment& a);

double chamfer_distance(const PointCloud& p, const PointCloud& q);

struct Edge {
  std::size_t a = 0;  // a < b
  std::size_t b = 0;
  double length = 0.0;
};

/// Prim's MST over Euclidean distances, rooted at point 0; ties go to the
/// smaller index pair. Edges are returned in insertion order.
std::vector<Edge> minimum_spanning_tree(std::span<const Vec3> points);
inline std::vector<Edge> minimum_spanning_tree(const PointCloud& cloud) {
  return minimum_spanning_tree(std::span<const Vec3>(cloud.points));
}

/// Expansion penalty over patches: edges of each patch's MST at least
/// lambda_edge times that patch's mean edge length are flagged, and the
/// penalty is the flagged length total divided by the total edge count.
double expansion_penalty(const std::vector<PointCloud>& patches, double lambda_edge);

/// Flagged edges of the expansion penalty over a cloud made of consecutive
/// equal-size patches; indices refer to the whole cloud.
struct ExpansionTerms {
  std::vector<Edge> flagged;
  std::size_t edge_count = 0;
  double value = 0.0;
};

ExpansionTerms expansion_terms(const PointCloud& cloud, std::size_t patch_count, double lambda_edge);

/// Penalty value for a fixed set of flagged edges (lengths re-measured).
double expansion_value(const PointCloud& cloud, const ExpansionTerms& terms);

/// Adds scale * d(expansion_value)/d(point) into grad (fixed flagged set).
void add_expansion_gradient(const PointCloud& cloud, const ExpansionTerms& terms, double scale,
                            std::vector<Vec3>& grad);

struct KnnGraph {
  std::size_t k = 0;
  std::vector<std::size_t> neighbors;  // row-major n x k, nearest first

  std::size_t size() const { return k == 0 ? 0 : neighbors.size() / k; }
  /// Directed edges (i -> neighbor), n * k of them.
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;
};

/// k nearest neighbors of every point (self excluded, ties to smaller index).
KnnGraph knn_graph(std::span<const Vec3> points, std::size_t k);
inline KnnGraph knn_graph(const PointCloud& cloud, std::size_t k) {
  return knn_graph(std::span<const Vec3>(cloud.points), k);
}

}  // namespace pdssl

#endif  // PDSSL_GEOMETRY_KERNELS_HPP
