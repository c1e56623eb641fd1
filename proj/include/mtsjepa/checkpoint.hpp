#pragma once

// Versioned binary checkpoint: an 8-byte magic, a little-endian u64 manifest
// length, a JSON manifest (config, counters, array directory), then the raw
// f64 payload in directory order. Serialization is deterministic, so equal
// states produce byte-identical files.

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtsjepa/config.hpp"
#include "mtsjepa/io.hpp"
#include "mtsjepa/trainer.hpp"

namespace mtsjepa {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

constexpr const char* kCheckpointMagic = "MTSJEPA1";
constexpr int kCheckpointVersion = 1;

inline void append_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
  }
}

inline std::uint64_t read_u64(const std::string& s, std::size_t off) {
  if (off + 8 > s.size()) throw CheckpointError("checkpoint truncated");
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) {
    x |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[off + i]))
         << (8 * i);
  }
  return x;
}

inline void append_f64(std::string& out, double d) {
  append_u64(out, std::bit_cast<std::uint64_t>(d));
}

inline double read_f64(const std::string& s, std::size_t off) {
  return std::bit_cast<double>(read_u64(s, off));
}

inline void append_array(std::string& out, const std::vector<double>& v) {
  for (double d : v) append_f64(out, d);
}

}  // namespace detail

inline std::string serialize_checkpoint(
    const TrainerState& st, const std::vector<std::size_t>& removed_channels) {
  nlohmann::json manifest;
  manifest["format_version"] = detail::kCheckpointVersion;
  manifest["config"] = train_config_to_json(st.cfg);
  manifest["removed_channels"] = removed_channels;
  manifest["epoch"] = st.epoch;
  manifest["adam_t"] = st.adam.t;
  manifest["rng_state"] = st.rng.state();

  nlohmann::json arrays = nlohmann::json::array();
  std::string payload;
  auto push = [&](const std::string& name, const Shape& shape,
                  const std::vector<double>& vals) {
    nlohmann::json a;
    a["name"] = name;
    a["shape"] = shape;
    arrays.push_back(a);
    detail::append_array(payload, vals);
  };
  for (const auto& [name, t] : st.model.reg.entries) {
    push("online/" + name, t.shape(), t.values());
  }
  for (const auto& [name, t] : st.targets.reg.entries) {
    push("shadow/" + name, t.shape(), t.values());
  }
  for (std::size_t e = 0; e < st.model.reg.entries.size(); ++e) {
    const auto& [name, t] = st.model.reg.entries[e];
    push("adam_m/" + name, t.shape(), st.adam.m[e]);
  }
  for (std::size_t e = 0; e < st.model.reg.entries.size(); ++e) {
    const auto& [name, t] = st.model.reg.entries[e];
    push("adam_v/" + name, t.shape(), st.adam.v[e]);
  }
  manifest["arrays"] = arrays;

  std::string mtext = manifest.dump();
  std::string out = detail::kCheckpointMagic;
  detail::append_u64(out, mtext.size());
  out += mtext;
  out += payload;
  return out;
}

struct LoadedCheckpoint {
  TrainerState state;
  std::vector<std::size_t> removed_channels;
};

inline LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 8, detail::kCheckpointMagic) != 0) {
    throw CheckpointError("not a checkpoint file");
  }
  std::uint64_t mlen = detail::read_u64(bytes, 8);
  if (16 + mlen > bytes.size()) throw CheckpointError("checkpoint truncated");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }

  LoadedCheckpoint out;
  try {
    if (manifest.at("format_version").get<int>() !=
        detail::kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint format version");
    }
    TrainConfig cfg = train_config_from_json(manifest.at("config"));
    out.state = make_trainer(cfg);
    out.state.epoch = manifest.at("epoch").get<std::size_t>();
    out.state.adam.t = manifest.at("adam_t").get<std::uint64_t>();
    out.state.rng.set_state(manifest.at("rng_state").get<std::uint64_t>());
    out.removed_channels =
        manifest.at("removed_channels").get<std::vector<std::size_t>>();

    const nlohmann::json& arrays = manifest.at("arrays");
    std::size_t expected =
        out.state.model.reg.entries.size() * 3 +
        out.state.targets.reg.entries.size();
    if (!arrays.is_array() || arrays.size() != expected) {
      throw CheckpointError("checkpoint array directory does not match model");
    }

    std::size_t off = 16 + mlen;
    std::size_t ai = 0;
    auto take = [&](const std::string& want_name, const Shape& want_shape,
                    std::vector<double>& dst) {
      const nlohmann::json& a = arrays.at(ai++);
      if (a.at("name").get<std::string>() != want_name ||
          a.at("shape").get<Shape>() != want_shape) {
        throw CheckpointError("checkpoint array mismatch at " + want_name);
      }
      std::size_t n = 1;
      for (std::size_t d : want_shape) n *= d;
      if (off + 8 * n > bytes.size()) {
        throw CheckpointError("checkpoint truncated");
      }
      dst.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        dst[i] = detail::read_f64(bytes, off);
        off += 8;
      }
    };
    for (auto& [name, t] : out.state.model.reg.entries) {
      take("online/" + name, t.shape(), t.mutable_values());
    }
    for (auto& [name, t] : out.state.targets.reg.entries) {
      take("shadow/" + name, t.shape(), t.mutable_values());
    }
    for (std::size_t e = 0; e < out.state.model.reg.entries.size(); ++e) {
      auto& [name, t] = out.state.model.reg.entries[e];
      take("adam_m/" + name, t.shape(), out.state.adam.m[e]);
    }
    for (std::size_t e = 0; e < out.state.model.reg.entries.size(); ++e) {
      auto& [name, t] = out.state.model.reg.entries[e];
      take("adam_v/" + name, t.shape(), out.state.adam.v[e]);
    }
    if (off != bytes.size()) {
      throw CheckpointError("checkpoint has trailing bytes");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const TrainerState& st,
                            const std::vector<std::size_t>& removed_channels) {
  atomic_write_file(path, serialize_checkpoint(st, removed_channels));
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace mtsjepa
