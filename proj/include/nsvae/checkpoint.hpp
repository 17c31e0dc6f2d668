// SPDX-License-Identifier: Apache-2.0
//
// A checkpoint is a directory: manifest.json names the network kind, carries
// an arbitrary config object, and tables every tensor; tensors.bin holds the
// values as little-endian 8-byte doubles in table order.
#ifndef NSVAE_CHECKPOINT_HPP
#define NSVAE_CHECKPOINT_HPP

#include <filesystem>
#include <string>

#include "json.hpp"
#include "nsvae/networks.hpp"

namespace nsvae {

void save_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                     const nlohmann::json& config, const ParamStore& ps);

// Parses manifest.json; throws CheckpointError when dir is not a checkpoint.
nlohmann::json load_manifest(const std::filesystem::path& dir);

// Fills an existing store. The manifest tensor table and the registered
// parameters must agree exactly in names and shapes.
void load_checkpoint(const std::filesystem::path& dir, const std::string& kind, ParamStore& ps);

nlohmann::json network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);

}  // namespace nsvae

#endif
