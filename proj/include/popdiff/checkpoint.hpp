#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "popdiff/config.hpp"
#include "popdiff/csv.hpp"
#include "popdiff/error.hpp"
#include "popdiff/network.hpp"
#include "popdiff/schema.hpp"

/// Checkpoint directory layout:
///   manifest.json  format version, schema and its hash, configs, seed, epoch,
///                  and a tensor index (name, shape, dtype, offset, length)
///   params.bin     16-byte header ("PDCK", u32 version, u64 schema hash)
///                  followed by little-endian IEEE-754 tensors, row-major, at
///                  the byte offsets listed in the index
namespace popdiff {

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::size_t kBlobHeaderSize = 16;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobName = "params.bin";
inline constexpr const char* kLossHistoryName = "loss_history.csv";

struct CheckpointMeta {
  SchemaPtr schema;
  RunConfig config;
  std::uint64_t seed = 0;
  long epoch = 0;
};

template <typename T>
struct LoadedCheckpoint {
  CheckpointMeta meta;
  NetworkParams<T> params;
};

inline std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const std::string& in, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  }
  return v;
}

template <typename T>
void put_value(std::string& out, T value, Dtype dtype) {
  if (dtype == Dtype::kFloat32) {
    const float f = static_cast<float>(value);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_le(out, bits, 4);
  } else {
    const double d = static_cast<double>(value);
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_le(out, bits, 8);
  }
}

inline double get_value(const std::string& in, std::size_t off, Dtype dtype) {
  if (dtype == Dtype::kFloat32) {
    const auto bits = static_cast<std::uint32_t>(get_le(in, off, 4));
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  const std::uint64_t bits = get_le(in, off, 8);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

inline std::size_t dtype_size(Dtype d) { return d == Dtype::kFloat32 ? 4 : 8; }

}  // namespace detail

/// Writes manifest, blob and any `extra_files` (name -> content) into `dir`.
/// Files are assembled in a sibling staging directory that replaces `dir`
/// only once complete.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const NetworkParams<T>& params,
                     const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, std::string>>& extra_files = {}) {
  namespace fs = std::filesystem;
  const Dtype dtype = meta.config.dtype;
  const std::uint64_t schema_hash = meta.schema->hash();

  std::string blob = "PDCK";
  detail::put_le(blob, kCheckpointVersion, 4);
  detail::put_le(blob, schema_hash, 8);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& t : params.tensors()) {
    const std::size_t offset = blob.size();
    for (T v : t.value.data()) detail::put_value(blob, v, dtype);
    index.push_back({{"name", t.name},
                     {"shape", t.value.shape()},
                     {"dtype", dtype_name(dtype)},
                     {"offset", offset},
                     {"length", blob.size() - offset}});
  }

  nlohmann::json manifest{{"format_version", kCheckpointVersion},
                          {"schema", meta.schema->to_json()},
                          {"schema_hash", hash_hex(schema_hash)},
                          {"config", to_json(meta.config)},
                          {"seed", meta.seed},
                          {"epoch", meta.epoch},
                          {"num_attributes", params.num_attributes()},
                          {"vocab_size", params.vocab_size()},
                          {"tensors", index}};

  fs::path staging = dir;
  staging += ".staging";
  fs::remove_all(staging);
  fs::create_directories(staging);
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(staging / name, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) {
      fs::remove_all(staging);
      throw IoError("cannot write " + (staging / name).string());
    }
  };
  write(kManifestName, manifest.dump(2) + "\n");
  write(kBlobName, blob);
  for (const auto& [name, content] : extra_files) write(name, content);
  fs::remove_all(dir);
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  fs::rename(staging, dir);
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / kManifestName;
  if (!std::filesystem::exists(path)) throw CheckpointError("missing " + path.string());
  try {
    return nlohmann::json::parse(csv::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(path.string() + ": corrupt manifest (" + e.what() + ")");
  }
}

/// Loads and verifies a checkpoint; stored values are converted to T.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_manifest(dir);
  const auto blob_path = dir / kBlobName;
  if (!std::filesystem::exists(blob_path)) throw CheckpointError("missing " + blob_path.string());
  const std::string blob = csv::read_file(blob_path);

  LoadedCheckpoint<T> out;
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint format version");
    }
    out.meta.schema = std::make_shared<const AttributeSchema>(
        AttributeSchema::from_json(manifest.at("schema")));
    out.meta.config = run_config_from_json(manifest.at("config"));
    out.meta.seed = manifest.at("seed").get<std::uint64_t>();
    out.meta.epoch = manifest.at("epoch").get<long>();

    const std::uint64_t schema_hash = out.meta.schema->hash();
    if (manifest.at("schema_hash").get<std::string>() != hash_hex(schema_hash)) {
      throw CheckpointError("schema hash mismatch between manifest and schema");
    }
    if (blob.size() < kBlobHeaderSize || blob.compare(0, 4, "PDCK") != 0) {
      throw CheckpointError("corrupt parameter blob header");
    }
    if (detail::get_le(blob, 8, 8) != schema_hash) {
      throw CheckpointError("schema hash mismatch between manifest and parameter blob");
    }

    const auto& cfg = out.meta.config.network;
    const std::size_t D = out.meta.schema->num_attributes();
    const std::size_t K = out.meta.schema->vocab_size();
    const auto layout = param_layout(cfg, D, K);
    const auto& index = manifest.at("tensors");
    if (index.size() != layout.size()) throw CheckpointError("tensor index does not match network layout");

    std::vector<NamedTensor<T>> tensors;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& entry = index[i];
      const std::string name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      if (name != layout[i].name || shape != layout[i].shape) {
        throw CheckpointError("tensor '" + name + "' does not match the expected layout");
      }
      const Dtype dtype = parse_dtype(entry.at("dtype").get<std::string>(), "tensor dtype");
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t length = entry.at("length").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (length != n * detail::dtype_size(dtype) || offset < kBlobHeaderSize ||
          offset + length > blob.size()) {
        throw CheckpointError("tensor '" + name + "' has an invalid byte range");
      }
      NdArray<T> value(shape);
      for (std::size_t k = 0; k < n; ++k) {
        value[k] = static_cast<T>(detail::get_value(blob, offset + k * detail::dtype_size(dtype), dtype));
      }
      if (!value.all_finite()) throw CheckpointError("tensor '" + name + "' holds non-finite values");
      tensors.push_back({name, std::move(value)});
    }
    out.params = NetworkParams<T>(cfg, D, K, std::move(tensors));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("corrupt manifest: ") + e.what());
  } catch (const SchemaError& e) {
    throw CheckpointError(std::string("corrupt manifest: ") + e.what());
  }
  return out;
}

}  // namespace popdiff
