// Dataset directory layout:
//
//   manifest.json      [{id, class_label, split, file}, ...]   one per shape
//   scans.json         [{object_id, viewpoint_index, file}, ...]
//   dataset_info.json  {gamma, class_names, ...}
//   shapes/*.pcd, scans/*.pcd
//
// PCD1 cloud files: "PCD1", u32 LE point count n, then n*3 f32 LE coordinates.

#ifndef PDSSL_DATASET_IO_HPP
#define PDSSL_DATASET_IO_HPP

#include "pdssl/core_types.hpp"
#include "pdssl/scan_synthesis.hpp"

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace pdssl {

void write_pcd1(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_pcd1(const std::filesystem::path& path);

/// Writes the corpus in the dataset directory layout (creating `dir`).
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);

/// Reads a directory written by save_corpus. Every referenced file must exist.
Corpus load_corpus(const std::filesystem::path& dir);

/// Read-only index over a corpus: shape lookup by id and scans per shape.
class CorpusIndex {
 public:
  explicit CorpusIndex(const Corpus& corpus);

  const Corpus& corpus() const { return *corpus_; }
  std::size_t shape_index(const std::string& id) const;
  /// Scan indices (into corpus().scans) of shape `shape`, ordered by viewpoint.
  const std::vector<std::size_t>& scans_of(std::size_t shape) const { return scans_by_shape_[shape]; }
  /// Shape indices in the given split, ascending.
  std::vector<std::size_t> shapes_in(Split split) const;
  const Viewpoint& viewpoint(int index) const;

 private:
  const Corpus* corpus_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::vector<std::size_t>> scans_by_shape_;
  std::vector<Viewpoint> views_;
};

}  // namespace pdssl

#endif  // PDSSL_DATASET_IO_HPP
