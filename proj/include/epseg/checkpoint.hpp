#pragma once

#include "epseg/unet.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace epseg {

inline constexpr char kCheckpointMagic[] = "EPSEG1\n";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  double val_aiou = 0;
  std::uint64_t seed = 0;
};

struct LoadedCheckpoint {
  Network<float> network;
  CheckpointMeta meta;
  std::size_t header_bytes = 0;  // magic + length prefix + JSON header
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string config_to_json(const UNetConfig& config);
UNetConfig config_from_json(const std::string& text);

/// Layout: magic "EPSEG1\n", little-endian u32 header length, UTF-8 JSON header
/// (version, config, tensor manifest with byte offsets, metadata), then every
/// parameter as little-endian float32 in manifest order.
std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net, const CheckpointMeta& meta);
LoadedCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Network<float>& net, const CheckpointMeta& meta, const std::filesystem::path& path);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace epseg
