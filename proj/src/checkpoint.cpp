// SPDX-License-Identifier: Apache-2.0
#include "nsvae/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "nsvae/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint tensors are written as native doubles");

namespace nsvae {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const fs::path& dir, const std::string& kind, const json& config,
                     const ParamStore& ps) {
  fs::create_directories(dir);
  json tensors = json::array();
  std::int64_t offset = 0;
  for (int h = 0; h < ps.count(); ++h) {
    const Tensor& v = ps.value(h);
    tensors.push_back({{"name", ps.name(h)},
                       {"rank", v.rank},
                       {"dims", {v.d[0], v.d[1], v.d[2]}},
                       {"offset", offset},
                       {"count", v.size()}});
    offset += v.size();
  }
  const json manifest = {
      {"format", 1}, {"kind", kind}, {"config", config}, {"tensors", tensors}};

  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
  require(mf.good(), "checkpoint: cannot write manifest to " + dir.string());

  std::ofstream bf(dir / "tensors.bin", std::ios::binary);
  for (int h = 0; h < ps.count(); ++h) {
    const Tensor& v = ps.value(h);
    bf.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  require(bf.good(), "checkpoint: cannot write tensors to " + dir.string());
}

json load_manifest(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw CheckpointError("no checkpoint manifest in " + dir.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", 0) != 1)
    throw CheckpointError("unsupported checkpoint format in " + dir.string());
  return manifest;
}

void load_checkpoint(const fs::path& dir, const std::string& kind, ParamStore& ps) {
  const json manifest = load_manifest(dir);
  try {
    if (manifest.at("kind").get<std::string>() != kind)
      throw CheckpointError("checkpoint in " + dir.string() + " holds a " +
                            manifest.at("kind").get<std::string>() + ", expected " + kind);
    const json& tensors = manifest.at("tensors");
    if (static_cast<int>(tensors.size()) != ps.count())
      throw CheckpointError("checkpoint tensor count mismatch in " + dir.string());

    std::ifstream bf(dir / "tensors.bin", std::ios::binary);
    if (!bf) throw CheckpointError("no tensor data in " + dir.string());
    for (const json& entry : tensors) {
      const std::string name = entry.at("name").get<std::string>();
      const int h = ps.handle(name);
      if (h < 0) throw CheckpointError("checkpoint tensor " + name + " has no parameter");
      Tensor& v = ps.value(h);
      const auto dims = entry.at("dims");
      if (entry.at("rank").get<int>() != v.rank || dims.at(0).get<int>() != v.d[0] ||
          dims.at(1).get<int>() != v.d[1] || dims.at(2).get<int>() != v.d[2])
        throw CheckpointError("checkpoint tensor " + name + " shape mismatch");
      bf.seekg(entry.at("offset").get<std::int64_t>() *
               static_cast<std::int64_t>(sizeof(double)));
      bf.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
      if (!bf) throw CheckpointError("checkpoint tensor " + name + " data truncated");
    }
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

json network_config_to_json(const NetworkConfig& cfg) {
  return {{"channels", cfg.channels},
          {"latent_dim", cfg.latent_dim},
          {"lstm_hidden", cfg.lstm_hidden},
          {"bins", cfg.bins}};
}

NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig cfg;
  try {
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.latent_dim = j.at("latent_dim").get<int>();
    cfg.lstm_hidden = j.at("lstm_hidden").get<int>();
    cfg.bins = j.at("bins").get<int>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed network config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace nsvae
