#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "garden/adam.hpp"
#include "garden/parameters.hpp"

namespace garden {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

struct AdapterSpec {
  std::string target;
  std::size_t rank = 0;
  double alpha = 0.0;

  bool operator==(const AdapterSpec&) const = default;
};

/// Everything needed to resume a run bit-exactly.
///
/// On disk: magic "GRDNCKPT", u32 format version, u64 header length, a JSON
/// header (metadata plus a tensor table of names, shapes and float offsets),
/// then every tensor as little-endian f32 in table order.
struct Checkpoint {
  std::string stage;
  std::uint64_t step = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> vocab;
  double latent_scale = 1.0;
  std::string rng_state;
  std::vector<AdapterSpec> adapters;
  std::vector<NamedTensor> params;
  std::vector<std::string> trainable;
  AdamConfig adam_config;
  std::uint64_t adam_steps = 0;
  std::vector<NamedTensor> adam_m;
  std::vector<NamedTensor> adam_v;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// VersionError on an unknown format version, CorruptionError (with the
/// byte offset) on bad magic, truncation or an inconsistent header.
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& what = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameter values, trainable flags and Adam moments out of a live set.
void capture_parameters(const ParameterSet<float>& params, const AdamState<float>& adam, Checkpoint& ckpt);
/// Writes checkpoint values into a live set whose names and shapes must
/// match exactly (ConfigError otherwise), then restores trainable flags and
/// the Adam state.
void restore_parameters(const Checkpoint& ckpt, ParameterSet<float>& params, AdamState<float>& adam);

}  // namespace garden
