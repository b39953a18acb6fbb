// pdssl - self-supervised point cloud features via pose/content disentanglement.
//
// Canonical data types shared by every module: point clouds, labeled shapes,
// feature vectors, plus unit-sphere normalization and seeded resampling.

#ifndef PDSSL_CORE_TYPES_HPP
#define PDSSL_CORE_TYPES_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdssl {

/// Error raised by every pdssl operation on contract violations and bad input.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec3 = Eigen::Vector3d;

/// Ordered list of 3D points in normalized object coordinates.
struct PointCloud {
  std::vector<Vec3> points;

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Vec3& operator[](std::size_t i) const { return points[i]; }
  Vec3& operator[](std::size_t i) { return points[i]; }

  Vec3 centroid() const;
  double max_norm() const;
  /// True when every coordinate is finite.
  bool finite() const;

  bool operator==(const PointCloud& other) const { return points == other.points; }
};

enum class Split { train, test };

const char* to_string(Split split);
Split split_from_string(const std::string& s);

/// Dataset record: a dense source cloud with its class label and split.
struct LabeledShape {
  std::string id;
  int class_label = 0;
  Split split = Split::train;
  PointCloud cloud;
};

enum class FeatureRole { content, pose };

const char* to_string(FeatureRole role);

struct FeatureVector {
  Eigen::VectorXd values;
  FeatureRole role = FeatureRole::content;
};

/// Centers at the centroid and scales so the farthest point has norm 1.
/// Throws Error("zero extent") for clouds whose points all coincide.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

/// Draws exactly `m` points: without replacement when the cloud has at least
/// `m` points, otherwise uniformly with replacement. Deterministic per seed.
PointCloud resample(const PointCloud& cloud, std::size_t m, std::uint64_t seed);

/// Derives an independent child seed (splitmix64 finalizer over both words).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Rounds every coordinate through single precision, the on-disk precision.
PointCloud quantize_to_float(const PointCloud& cloud);

/// Rows of an (n x 3) matrix, one per point.
Eigen::MatrixXd to_matrix(const PointCloud& cloud);
PointCloud from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& rows);

}  // namespace pdssl

#endif  // PDSSL_CORE_TYPES_HPP
