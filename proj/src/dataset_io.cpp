#include "pdssl/dataset_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace pdssl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "PCD1 I/O assumes a little-endian host");

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace

void write_pcd1(const fs::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  const auto n = static_cast<std::uint32_t>(cloud.size());
  out.write("PCD1", 4);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  std::vector<float> buf;
  buf.reserve(cloud.size() * 3);
  for (const auto& p : cloud.points)
    for (int k = 0; k < 3; ++k) buf.push_back(static_cast<float>(p[k]));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw Error("write failed: " + path.string());
}

PointCloud read_pcd1(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::array<char, 4> magic{};
  std::uint32_t n = 0;
  in.read(magic.data(), 4);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::memcmp(magic.data(), "PCD1", 4) != 0) throw Error(path.string() + ": not a PCD1 file");
  std::vector<float> buf(static_cast<std::size_t>(n) * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw Error(path.string() + ": truncated PCD1 payload");
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) cloud.points.emplace_back(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]);
  return cloud;
}

void save_corpus(const fs::path& dir, const Corpus& corpus) {
  fs::create_directories(dir / "shapes");
  fs::create_directories(dir / "scans");

  json manifest = json::array();
  for (const auto& s : corpus.shapes) {
    const std::string file = "shapes/" + s.id + ".pcd";
    write_pcd1(dir / file, s.cloud);
    manifest.push_back({{"id", s.id}, {"class_label", s.class_label}, {"split", to_string(s.split)}, {"file", file}});
  }
  json scans = json::array();
  for (const auto& sc : corpus.scans) {
    char name[32];
    std::snprintf(name, sizeof name, "_v%02d.pcd", sc.viewpoint_index);
    const std::string file = "scans/" + sc.object_id + name;
    write_pcd1(dir / file, sc.cloud);
    scans.push_back({{"object_id", sc.object_id}, {"viewpoint_index", sc.viewpoint_index}, {"file", file}});
  }
  json names = json::array();
  for (const char* n : shape_family_names()) names.push_back(n);

  write_json(dir / "manifest.json", manifest);
  write_json(dir / "scans.json", scans);
  write_json(dir / "dataset_info.json", {{"gamma", corpus.gamma}, {"class_names", names}, {"format", "PCD1"}});
}

Corpus load_corpus(const fs::path& dir) {
  Corpus corpus;
  const json info = read_json(dir / "dataset_info.json");
  corpus.gamma = info.value("gamma", 2.0);
  try {
    for (const auto& e : read_json(dir / "manifest.json")) {
      LabeledShape s;
      s.id = e.at("id").get<std::string>();
      s.class_label = e.at("class_label").get<int>();
      s.split = split_from_string(e.at("split").get<std::string>());
      s.cloud = read_pcd1(dir / e.at("file").get<std::string>());
      corpus.shapes.push_back(std::move(s));
    }
    for (const auto& e : read_json(dir / "scans.json")) {
      PartialScan sc;
      sc.object_id = e.at("object_id").get<std::string>();
      sc.viewpoint_index = e.at("viewpoint_index").get<int>();
      sc.cloud = read_pcd1(dir / e.at("file").get<std::string>());
      corpus.scans.push_back(std::move(sc));
    }
  } catch (const json::exception& e) {
    throw Error(dir.string() + ": malformed manifest: " + e.what());
  }
  return corpus;
}

CorpusIndex::CorpusIndex(const Corpus& corpus) : corpus_(&corpus), views_(viewpoint_set(corpus.gamma)) {
  for (std::size_t i = 0; i < corpus.shapes.size(); ++i) {
    if (!by_id_.emplace(corpus.shapes[i].id, i).second)
      throw Error("duplicate shape id '" + corpus.shapes[i].id + "'");
  }
  scans_by_shape_.resize(corpus.shapes.size());
  for (std::size_t k = 0; k < corpus.scans.size(); ++k) {
    const auto& sc = corpus.scans[k];
    if (sc.viewpoint_index < 1 || sc.viewpoint_index > static_cast<int>(views_.size()))
      throw Error("scan of '" + sc.object_id + "' has invalid viewpoint index");
    scans_by_shape_[shape_index(sc.object_id)].push_back(k);
  }
  for (auto& list : scans_by_shape_)
    std::stable_sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) {
      return corpus.scans[a].viewpoint_index < corpus.scans[b].viewpoint_index;
    });
}

std::size_t CorpusIndex::shape_index(const std::string& id) const {
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) throw Error("unknown shape id '" + id + "'");
  return it->second;
}

std::vector<std::size_t> CorpusIndex::shapes_in(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus_->shapes.size(); ++i)
    if (corpus_->shapes[i].split == split) out.push_back(i);
  return out;
}

const Viewpoint& CorpusIndex::viewpoint(int index) const {
  if (index < 1 || index > static_cast<int>(views_.size())) throw Error("viewpoint index out of range");
  return views_[static_cast<std::size_t>(index - 1)];
}

}  // namespace pdssl
