#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "metaci/cinet.hpp"
#include "metaci/io.hpp"

namespace metaci {

inline constexpr int kCheckpointFormatVersion = 1;

struct SeedRecord {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string config_hash(const CIConfig& cfg) { return fnv1a_hex(cfg.to_json().dump()); }

struct Checkpoint {
  NetParams params;
  CIConfig config;
  SeedRecord seed;
  std::uint64_t meta_iteration = 0;
};

inline json checkpoint_to_json(const Checkpoint& ck) {
  json layers = json::array();
  auto dump_block = [&](const std::vector<DenseLayer>& block, const char* name) {
    for (const auto& layer : block) {
      layers.push_back(json{{"block", name},
                            {"rows", layer.W.rows()},
                            {"cols", layer.W.cols()},
                            {"relu", layer.relu},
                            {"W", layer.W.data()},
                            {"b", layer.b}});
    }
  };
  dump_block(ck.params.phi, "phi");
  dump_block(ck.params.head, "head");
  return json{{"format_version", kCheckpointFormatVersion},
              {"kind", "checkpoint"},
              {"config_hash", config_hash(ck.config)},
              {"config", ck.config.to_json()},
              {"seed", json{{"seed", ck.seed.seed}, {"stream_id", ck.seed.stream_id}}},
              {"meta_iteration", ck.meta_iteration},
              {"input_dim", ck.params.input_dim},
              {"layers", layers}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (!j.is_object() || j.value("kind", "") != "checkpoint") {
    throw std::runtime_error("checkpoint: not a checkpoint document");
  }
  const int ver = j.value("format_version", -1);
  if (ver != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format_version " + std::to_string(ver));
  }
  Checkpoint ck;
  ck.config = CIConfig::from_json(j.at("config"));
  if (j.at("config_hash").get<std::string>() != config_hash(ck.config)) {
    throw std::runtime_error("checkpoint: config_hash does not match embedded config");
  }
  ck.seed.seed = j.at("seed").at("seed").get<std::uint64_t>();
  ck.seed.stream_id = j.at("seed").at("stream_id").get<std::uint64_t>();
  ck.meta_iteration = j.at("meta_iteration").get<std::uint64_t>();
  ck.params.input_dim = j.at("input_dim").get<std::size_t>();
  for (const auto& lj : j.at("layers")) {
    const std::size_t rows = lj.at("rows").get<std::size_t>();
    const std::size_t cols = lj.at("cols").get<std::size_t>();
    DenseLayer layer(rows, cols, lj.at("relu").get<bool>());
    const auto w = lj.at("W").get<std::vector<double>>();
    if (w.size() != rows * cols) throw std::runtime_error("checkpoint: weight size mismatch");
    layer.W = Matrix(rows, cols, w);
    layer.b = lj.at("b").get<std::vector<double>>();
    if (layer.b.size() != cols) throw std::runtime_error("checkpoint: bias size mismatch");
    const std::string block = lj.at("block").get<std::string>();
    if (block == "phi") {
      ck.params.phi.push_back(std::move(layer));
    } else if (block == "head") {
      ck.params.head.push_back(std::move(layer));
    } else {
      throw std::runtime_error("checkpoint: unknown block '" + block + "'");
    }
  }
  if (ck.params.head.empty()) throw std::runtime_error("checkpoint: head block missing");
  return ck;
}

// Refuses to overwrite unless force is set; the write lands atomically.
inline void save_checkpoint(const Checkpoint& ck, const std::string& path, bool force = false) {
  if (!force && std::filesystem::exists(path)) {
    throw std::runtime_error("save_checkpoint: " + path + " exists (use force to replace)");
  }
  atomic_write_file(path, checkpoint_to_json(ck).dump(2) + "\n");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace metaci
