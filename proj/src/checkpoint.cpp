#include "pdssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace pdssl {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct TensorRef {
  std::string name;
  nn::Matrix* value;
};

std::vector<TensorRef> tensors_of(ModelParams& params) {
  std::vector<TensorRef> out;
  params.visit([&](const std::string& name, nn::Param& p) { out.push_back({name, &p.value}); });
  params.visit_buffers([&](const std::string& name, nn::Matrix& m) { out.push_back({name, &m}); });
  return out;
}

}  // namespace

json dims_to_json(const ModelDims& d) {
  return {{"backbone", to_string(d.backbone)},
          {"feature_dim", d.feature_dim},
          {"encoder_hidden1", d.encoder_hidden1},
          {"encoder_hidden2", d.encoder_hidden2},
          {"knn_k", d.knn_k},
          {"decoder_hidden1", d.decoder_hidden1},
          {"decoder_hidden2", d.decoder_hidden2},
          {"regressor_hidden1", d.regressor_hidden1},
          {"regressor_hidden2", d.regressor_hidden2},
          {"completion_patches", d.completion_patches},
          {"partial_patches", d.partial_patches},
          {"complete_points", d.complete_points},
          {"scan_points", d.scan_points}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  d.feature_dim = j.at("feature_dim").get<std::size_t>();
  d.encoder_hidden1 = j.at("encoder_hidden1").get<std::size_t>();
  d.encoder_hidden2 = j.at("encoder_hidden2").get<std::size_t>();
  d.knn_k = j.at("knn_k").get<std::size_t>();
  d.decoder_hidden1 = j.at("decoder_hidden1").get<std::size_t>();
  d.decoder_hidden2 = j.at("decoder_hidden2").get<std::size_t>();
  d.regressor_hidden1 = j.at("regressor_hidden1").get<std::size_t>();
  d.regressor_hidden2 = j.at("regressor_hidden2").get<std::size_t>();
  d.completion_patches = j.at("completion_patches").get<std::size_t>();
  d.partial_patches = j.at("partial_patches").get<std::size_t>();
  d.complete_points = j.at("complete_points").get<std::size_t>();
  d.scan_points = j.at("scan_points").get<std::size_t>();
  return d;
}

void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta, const fs::path& path) {
  // Visiting only reads through the references.
  auto tensors = tensors_of(const_cast<ModelParams&>(params));
  json header;
  header["dims"] = dims_to_json(params.dims);
  header["variant"] = meta.variant;
  header["epoch"] = meta.epoch;
  json list = json::array();
  for (const auto& t : tensors) list.push_back({{"name", t.name}, {"rows", t.value->rows()}, {"cols", t.value->cols()}});
  header["tensors"] = list;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    const std::uint64_t header_len = text.size();
    out.write("PDCK", 4);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (const auto& t : tensors) {
      // Column-major storage order.
      const auto* bytes = reinterpret_cast<const char*>(t.value->data());
      const std::size_t n = static_cast<std::size_t>(t.value->size()) * sizeof(double);
      out.write(bytes, static_cast<std::streamsize>(n));
      hash = fnv1a(bytes, n, hash);
    }
    out.write(reinterpret_cast<const char*>(&hash), sizeof hash);
    if (!out) throw Error("write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PDCK", 4) != 0) throw Error(path.string() + ": bad magic");
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in) throw Error(path.string() + ": truncated at field 'version'");
  if (version != kCheckpointVersion)
    throw Error(path.string() + ": field 'version' is " + std::to_string(version) + ", expected " +
                std::to_string(kCheckpointVersion));
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || header_len > (1u << 26)) throw Error(path.string() + ": corrupt field 'header_length'");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw Error(path.string() + ": truncated at field 'header'");

  json header;
  LoadedCheckpoint out;
  try {
    header = json::parse(text);
    out.meta.variant = header.at("variant").get<std::string>();
    out.meta.epoch = header.at("epoch").get<std::size_t>();
    out.params = init_params(0, dims_from_json(header.at("dims")));
  } catch (const json::exception& e) {
    throw Error(path.string() + ": corrupt field 'header': " + e.what());
  }

  auto tensors = tensors_of(out.params);
  const json& list = header.at("tensors");
  if (list.size() != tensors.size())
    throw Error(path.string() + ": field 'tensors' lists " + std::to_string(list.size()) + " entries, expected " +
                std::to_string(tensors.size()));
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    const auto& entry = list[i];
    if (entry.at("name").get<std::string>() != t.name || entry.at("rows").get<Eigen::Index>() != t.value->rows() ||
        entry.at("cols").get<Eigen::Index>() != t.value->cols())
      throw Error(path.string() + ": tensor '" + t.name + "' does not match the model layout");
    auto* bytes = reinterpret_cast<char*>(t.value->data());
    const std::size_t n = static_cast<std::size_t>(t.value->size()) * sizeof(double);
    in.read(bytes, static_cast<std::streamsize>(n));
    if (!in) throw Error(path.string() + ": truncated while reading tensor '" + t.name + "'");
    hash = fnv1a(bytes, n, hash);
  }
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof stored);
  if (!in) throw Error(path.string() + ": truncated at field 'checksum'");
  if (stored != hash) throw Error(path.string() + ": field 'checksum' mismatch (corrupt payload)");
  return out;
}

}  // namespace pdssl
