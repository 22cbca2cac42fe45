#pragma once

// Self-describing binary checkpoint container: JSON header (config, version
// tag, free-form metadata) followed by named float32 tensors.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmq/errors.hpp"
#include "pmq/model.hpp"

namespace pmq {

inline constexpr const char* kCheckpointMagic = "PMQCKPT";
inline constexpr uint32_t kCheckpointFormatVersion = 1;
inline constexpr const char* kCheckpointVersionTag = "pmq-ckpt-1";

inline void to_json(nlohmann::json& j, const QuantileSpec& q) {
  j = {{"lower", q.lower}, {"median", q.median}, {"upper", q.upper}};
}
inline void from_json(const nlohmann::json& j, QuantileSpec& q) {
  q.lower = j.at("lower").get<double>();
  q.median = j.at("median").get<double>();
  q.upper = j.at("upper").get<double>();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"depth", c.depth},
       {"base_features", c.base_features},
       {"kernel_size", c.kernel_size},
       {"dropout_rate", c.dropout_rate},
       {"in_bands", c.in_bands},
       {"quantiles", c.quantiles},
       {"activation", c.activation}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.depth = j.at("depth").get<int>();
  c.base_features = j.at("base_features").get<int>();
  c.kernel_size = j.at("kernel_size").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.in_bands = j.at("in_bands").get<int>();
  c.quantiles = j.at("quantiles").get<QuantileSpec>();
  c.activation = j.at("activation").get<std::string>();
}

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, std::string> metadata;
  std::vector<nn::ParamTensor> tensors;

  const nn::ParamTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint: truncated file");
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  uint32_t n = 0;
  read_pod(is, n);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw FormatError("checkpoint: truncated string");
  return s;
}

}  // namespace detail

inline void save_checkpoint_file(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path.string());
  os.write(kCheckpointMagic, 8);
  detail::write_pod(os, kCheckpointFormatVersion);
  nlohmann::json header = {{"version_tag", kCheckpointVersionTag},
                           {"config", ckpt.config},
                           {"metadata", ckpt.metadata}};
  detail::write_string(os, header.dump());
  detail::write_pod(os, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    detail::write_string(os, t.name);
    detail::write_pod(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::write_pod(os, static_cast<int32_t>(d));
    detail::write_pod(os, static_cast<uint64_t>(t.v.size()));
    os.write(reinterpret_cast<const char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * sizeof(float)));
  }
  if (!os) throw IoError("checkpoint: write failed: " + path.string());
}

inline Checkpoint load_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path.string());
  char magic[8] = {};
  is.read(magic, 8);
  if (!is || std::string(magic, 7) != kCheckpointMagic)
    throw FormatError("checkpoint: bad magic in " + path.string());
  uint32_t fmt = 0;
  detail::read_pod(is, fmt);
  if (fmt != kCheckpointFormatVersion)
    throw IncompatibleCheckpointError("checkpoint: unsupported format version " +
                                      std::to_string(fmt));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(detail::read_string(is));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header json: ") + e.what());
  }
  if (header.value("version_tag", "") != kCheckpointVersionTag)
    throw IncompatibleCheckpointError("checkpoint: version tag mismatch");
  Checkpoint ckpt;
  ckpt.config = header.at("config").get<ModelConfig>();
  ckpt.metadata = header.value("metadata", std::map<std::string, std::string>{});
  uint32_t ntensors = 0;
  detail::read_pod(is, ntensors);
  ckpt.tensors.resize(ntensors);
  for (auto& t : ckpt.tensors) {
    t.name = detail::read_string(is);
    uint32_t ndims = 0;
    detail::read_pod(is, ndims);
    t.shape.resize(ndims);
    for (auto& d : t.shape) {
      int32_t v = 0;
      detail::read_pod(is, v);
      d = v;
    }
    uint64_t n = 0;
    detail::read_pod(is, n);
    if (n != t.count()) throw FormatError("checkpoint: tensor size/shape mismatch for " + t.name);
    t.v.resize(n);
    is.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw FormatError("checkpoint: truncated tensor data for " + t.name);
  }
  return ckpt;
}

inline void save_model(const UNet& model, const std::filesystem::path& path,
                       std::map<std::string, std::string> metadata = {}) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.metadata = std::move(metadata);
  ckpt.tensors = model.params().tensors();
  save_checkpoint_file(ckpt, path);
}

// Restores a model from a checkpoint. When `expected` is given its structural
// fields must match the stored config.
inline UNet load_model(const Checkpoint& ckpt, const ModelConfig* expected = nullptr) {
  if (expected && !expected->compatible_with(ckpt.config))
    throw IncompatibleCheckpointError("checkpoint: stored model config incompatible with request");
  UNet model(ckpt.config, /*seed=*/0);
  for (auto& t : model.params().tensors()) {
    const nn::ParamTensor* src = ckpt.find(t.name);
    if (!src) throw IncompatibleCheckpointError("checkpoint: missing tensor " + t.name);
    if (src->shape != t.shape)
      throw IncompatibleCheckpointError("checkpoint: shape mismatch for tensor " + t.name);
    t.v = src->v;
  }
  return model;
}

inline UNet load_model(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  return load_model(load_checkpoint_file(path), expected);
}

}  // namespace pmq
