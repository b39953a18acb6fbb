#include "pdssl/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace pdssl {

Vec3 PointCloud::centroid() const {
  Vec3 sum = Vec3::Zero();
  for (const auto& p : points) sum += p;
  return points.empty() ? sum : Vec3(sum / static_cast<double>(points.size()));
}

double PointCloud::max_norm() const {
  double m = 0.0;
  for (const auto& p : points) m = std::max(m, p.norm());
  return m;
}

bool PointCloud::finite() const {
  return std::all_of(points.begin(), points.end(),
                     [](const Vec3& p) { return p.allFinite(); });
}

const char* to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + s + "'");
}

const char* to_string(FeatureRole role) {
  return role == FeatureRole::content ? "content" : "pose";
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.empty()) throw Error("normalize_unit_sphere: empty cloud");
  if (!cloud.finite()) throw Error("normalize_unit_sphere: non-finite coordinate");
  const Vec3 c = cloud.centroid();
  double scale = 0.0;
  for (const auto& p : cloud.points) scale = std::max(scale, (p - c).norm());
  if (!(scale > 0.0)) throw Error("zero extent");

  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.emplace_back((p - c) / scale);
  return out;
}

PointCloud resample(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
  if (m == 0) throw Error("resample: m must be at least 1");
  if (cloud.empty()) throw Error("resample: empty cloud");

  std::mt19937_64 rng(seed);
  PointCloud out;
  out.points.reserve(m);
  const std::size_t n = cloud.size();
  if (n >= m) {
    // Partial Fisher-Yates: the first m slots become a uniform m-subset.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.points.push_back(cloud.points[idx[i]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < m; ++i) out.points.push_back(cloud.points[pick(rng)]);
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

PointCloud quantize_to_float(const PointCloud& cloud) {
  PointCloud out = cloud;
  // volatile: g++ 11 at -O3 drops the narrowing round trip in this loop.
  for (auto& p : out.points)
    for (int k = 0; k < 3; ++k) {
      volatile float f = static_cast<float>(p[k]);
      p[k] = f;
    }
  return out;
}

Eigen::MatrixXd to_matrix(const PointCloud& cloud) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(cloud.size()), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = cloud[i].transpose();
  return m;
}

PointCloud from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& rows) {
  PointCloud out;
  out.points.reserve(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out.points.emplace_back(rows(i, 0), rows(i, 1), rows(i, 2));
  return out;
}

}  // namespace pdssl
