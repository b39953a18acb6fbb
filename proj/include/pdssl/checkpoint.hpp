// Versioned checkpoint container.
//
//   "PDCK" | u32 version | u64 header length | header JSON
//   | f64 LE tensor payload (header order) | u64 FNV-1a of the payload
//
// The header records model dims, backbone, variant tag, epoch and the
// name/shape of every tensor (trainable parameters and norm statistics).

#ifndef PDSSL_CHECKPOINT_HPP
#define PDSSL_CHECKPOINT_HPP

#include "pdssl/networks.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace pdssl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string variant = "full";
  std::size_t epoch = 0;
};

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointMeta meta;
};

void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta, const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json dims_to_json(const ModelDims& dims);
ModelDims dims_from_json(const nlohmann::json& j);

}  // namespace pdssl

#endif  // PDSSL_CHECKPOINT_HPP
