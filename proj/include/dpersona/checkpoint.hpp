#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dpersona/model.hpp"
#include "json.hpp"

// Checkpoint file layout (version 1):
//   line 1: "DPERSONA-CHECKPOINT"
//   line 2: byte length L of the JSON header, in decimal
//   L bytes: JSON header {version, arch, latent_dim, config_hash, upstream_hash,
//            meta, components: [{name, frozen, checksum, parameters: [{name, shape}]}]}
//   then the raw little-endian float32 values of every parameter, in header order.
namespace dpersona::io {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  model::ModelBundle<float> bundle;
  std::string config_hash;
  /// Hash of the configuration sections that later stages must agree with.
  std::string upstream_hash;
  nlohmann::json meta = nlohmann::json::object();
  /// Checksums recorded at save time (verified on load).
  std::map<std::string, std::uint64_t> checksums;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Verifies the magic line, version, parameter shapes and every component
/// checksum; throws std::runtime_error on any mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json to_json(const model::ArchitectureConfig& arch);
model::ArchitectureConfig architecture_from_json(const nlohmann::json& j);

}  // namespace dpersona::io
