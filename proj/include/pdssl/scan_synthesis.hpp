// Pretext data generation: the fixed viewing sphere, occlusion-aware partial
// scans via hidden point removal, a procedural shape corpus and mesh/cloud
// file ingestion.

#ifndef PDSSL_SCAN_SYNTHESIS_HPP
#define PDSSL_SCAN_SYNTHESIS_HPP

#include "pdssl/core_types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pdssl {

inline constexpr std::size_t kViewpointCount = 26;
inline constexpr std::size_t kShapeFamilyCount = 8;

struct Viewpoint {
  int index = 0;  // 1-based
  Vec3 direction = Vec3::UnitZ();
  double radius = 2.0;
  Vec3 position = Vec3(0, 0, 2);
  double theta_deg = 0.0;  // polar, [0, 180]
  double phi_deg = 0.0;    // azimuth, [0, 360)
};

/// The 26 normalized nonzero directions of {-1,0,1}^3, indexed 1..26 in
/// lexicographic order of the integer triples, placed at distance `gamma`.
std::vector<Viewpoint> viewpoint_set(double gamma = 2.0);

/// Indices of the points visible from `camera` under spherical flipping with
/// radius R = r_factor * max |q - camera|. Sorted ascending.
std::vector<std::size_t> hidden_point_removal(const PointCloud& cloud, const Vec3& camera,
                                              double r_factor = 100.0);

struct PartialScan {
  std::string object_id;
  int viewpoint_index = 0;
  PointCloud cloud;
};

/// Hidden point removal from the viewpoint's position followed by resampling
/// to exactly m points. The scan stays in the object's frame.
PartialScan make_partial_scan(const LabeledShape& shape, const Viewpoint& vp, std::size_t m,
                              std::uint64_t seed, double r_factor = 100.0);

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> triangles;

  double area() const;
};

/// Area-weighted uniform surface sampling.
PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

const std::array<const char*, kShapeFamilyCount>& shape_family_names();

/// One random member of a procedural family (0..7), as a triangle mesh.
TriangleMesh make_family_mesh(int family, std::uint64_t seed);

/// Eight procedural families with per-shape random dimensions, each sampled
/// densely and normalized; the first 80% of each class (floor, at least one
/// test shape) go to the train split.
std::vector<LabeledShape> generate_procedural_dataset(std::uint64_t seed, std::size_t n_per_class,
                                                      std::size_t dense_points = 4096);

/// Reads .off / ascii .ply / .xyz. Meshes are surface-sampled to
/// `mesh_samples` points; point files come back verbatim. Not normalized.
PointCloud load_shape_file(const std::filesystem::path& path, std::size_t mesh_samples = 4096,
                           std::uint64_t seed = 0);

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_per_class = 50;
  std::size_t dense_points = 4096;
  std::size_t points_per_scan = 1024;
  double gamma = 2.0;
  double hpr_r_factor = 100.0;
};

struct Corpus {
  std::vector<LabeledShape> shapes;
  std::vector<PartialScan> scans;  // shape-major, viewpoint-minor
  double gamma = 2.0;
};

/// Procedural shapes plus one scan per (shape, viewpoint). All coordinates are
/// rounded to single precision so an on-disk round trip is exact.
Corpus synthesize_corpus(const SynthConfig& config);

/// Scan for (shape, viewpoint) given the corpus seed.
std::uint64_t scan_seed(std::uint64_t corpus_seed, std::size_t shape_index, int viewpoint_index);

}  // namespace pdssl

#endif  // PDSSL_SCAN_SYNTHESIS_HPP
