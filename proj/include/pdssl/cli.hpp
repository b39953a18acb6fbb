// Command-line driver: synth, pretrain, probe, report, export-plots.
//
// Configuration is a flat JSON object with dotted keys ("train.lambda_c",
// "model.feature_dim", ...). Flags override file values; unknown keys are
// rejected. Each run writes resolved_config.json next to its outputs.

#ifndef PDSSL_CLI_HPP
#define PDSSL_CLI_HPP

#include "pdssl/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace pdssl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Every recognised key with its default value.
nlohmann::json default_config();

/// Parses and validates a config file against default_config() (unknown
/// keys and type mismatches are errors). Returns only the keys present.
nlohmann::json read_config_file(const std::string& path);

SynthConfig synth_config(const nlohmann::json& resolved);
TrainConfig train_config(const nlohmann::json& resolved);
ProbeParams probe_params(const nlohmann::json& resolved);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace pdssl::cli

#endif  // PDSSL_CLI_HPP
