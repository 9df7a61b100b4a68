#include "epseg/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace epseg {

using json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

json config_json(const UNetConfig& c) {
  return {{"base_width", c.base_width},         {"levels", c.levels},
          {"input_channels", c.input_channels}, {"conv_block", to_string(c.conv_block)},
          {"input_size", c.input_size},         {"seed", c.seed},
          {"convs_per_level", c.convs_per_level}};
}

UNetConfig parse_config(const nlohmann::json& j) {
  UNetConfig c;
  c.base_width = j.at("base_width").get<int>();
  c.levels = j.at("levels").get<int>();
  c.input_channels = j.at("input_channels").get<int>();
  c.conv_block = conv_block_from_string(j.at("conv_block").get<std::string>());
  c.input_size = j.at("input_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.convs_per_level = j.value("convs_per_level", 2);
  c.validate();
  return c;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

}  // namespace

std::string config_to_json(const UNetConfig& config) { return config_json(config).dump(); }

UNetConfig config_from_json(const std::string& text) { return parse_config(nlohmann::json::parse(text)); }

std::vector<std::uint8_t> serialize_checkpoint(const Network<float>& net, const CheckpointMeta& meta) {
  json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = config_json(net.config());
  header["param_count"] = net.param_count();
  header["tensors"] = json::array();
  std::size_t offset = 0;
  for (const auto& p : net.parameters()) {
    const Shape& s = p.value.shape();
    header["tensors"].push_back({{"name", p.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}});
    offset += 4 * p.value.size();
  }
  header["meta"] = {{"epoch", meta.epoch}, {"val_aiou", meta.val_aiou}, {"seed", meta.seed}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicLen);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& p : net.parameters()) {
    for (Eigen::Index i = 0; i < p.value.data().size(); ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(p.value.data()[i]));
    }
  }
  return out;
}

LoadedCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen + 4 || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t header_len = get_u32(bytes.data() + kMagicLen);
  const std::size_t header_end = kMagicLen + 4 + std::size_t(header_len);
  if (bytes.size() < header_end) throw CheckpointError("truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kMagicLen + 4, bytes.begin() + header_end);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    LoadedCheckpoint ck{Network<float>(parse_config(header.at("config"))), {}, header_end};
    const auto& m = header.at("meta");
    ck.meta = {m.at("epoch").get<int>(), m.at("val_aiou").get<double>(), m.at("seed").get<std::uint64_t>()};

    auto& params = ck.network.parameters();
    const auto& manifest = header.at("tensors");
    if (manifest.size() != params.size()) {
      throw CheckpointError("manifest lists " + std::to_string(manifest.size()) + " tensors, config implies " +
                            std::to_string(params.size()));
    }
    const std::size_t blob = bytes.size() - header_end;
    const std::size_t expected_blob = 4 * static_cast<std::size_t>(count_params(ck.network.config()));
    if (blob != expected_blob) {
      throw CheckpointError("weight blob has " + std::to_string(blob) + " bytes, expected " +
                            std::to_string(expected_blob));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& t = manifest[i];
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<std::vector<int>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const Shape& want = params[i].value.shape();
      if (name != params[i].name || shape != std::vector<int>{want.n, want.c, want.h, want.w}) {
        throw CheckpointError("manifest entry '" + name + "' disagrees with config tensor '" + params[i].name +
                              "' of shape " + to_string(want));
      }
      if (offset + 4 * params[i].value.size() > blob) throw CheckpointError("tensor '" + name + "' overruns blob");
      const std::uint8_t* src = bytes.data() + header_end + offset;
      auto& data = params[i].value.data();
      for (Eigen::Index k = 0; k < data.size(); ++k) data[k] = std::bit_cast<float>(get_u32(src + 4 * k));
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid checkpoint config: ") + e.what());
  }
}

void save_checkpoint(const Network<float>& net, const CheckpointMeta& meta, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(net, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace epseg
