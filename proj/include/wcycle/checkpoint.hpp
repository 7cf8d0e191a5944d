#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "wcycle/nn.hpp"

namespace wcycle {

// Checkpoint directory layout:
//   <dir>/manifest.json   schema version, kind, seed, per-blob shapes+hashes
//   <dir>/blobs/<param-name>.bin   raw little-endian float32 values
// The format is deliberately framework-free and diffable.

inline constexpr int kCheckpointSchemaVersion = 1;

struct CheckpointMeta {
  std::string kind;
  uint64_t seed = 0;
  nlohmann::json extra;                 // free-form, command specific
  std::vector<std::string> parents;     // hashes of upstream checkpoints
  std::string params_hash;              // filled on save/load
};

namespace detail {

inline void write_blob(const std::string& path, const std::vector<float>& v) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "checkpoint: cannot write " + path);
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_blob(const std::string& path, size_t expect) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  require(f.good(), "checkpoint: missing blob " + path);
  auto bytes = static_cast<size_t>(f.tellg());
  require(bytes == expect * sizeof(float),
          "checkpoint: blob size mismatch at " + path + ": got " + std::to_string(bytes) +
              " bytes, expected " + std::to_string(expect * sizeof(float)));
  std::vector<float> v(expect);
  f.seekg(0);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& dir, const ParamStore<T>& params,
                     CheckpointMeta meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/blobs");
  nlohmann::json man;
  man["schema_version"] = kCheckpointSchemaVersion;
  man["kind"] = meta.kind;
  man["seed"] = meta.seed;
  man["parents"] = meta.parents;
  if (!meta.extra.is_null()) man["extra"] = meta.extra;
  uint64_t all_hash = 0xcbf29ce484222325ull;
  nlohmann::json pj = nlohmann::json::object();
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    const auto& p = params.param(i);
    std::vector<float> v(p.val().begin(), p.val().end());
    detail::write_blob(dir + "/blobs/" + name + ".bin", v);
    uint64_t h = fnv1a(v.data(), v.size() * sizeof(float));
    all_hash = fnv1a(name, all_hash);
    all_hash = fnv1a(&h, sizeof(h), all_hash);
    pj[name] = {{"shape", p.shape()}, {"hash", hex64(h)}};
  }
  man["params"] = pj;
  man["params_hash"] = hex64(all_hash);
  std::ofstream f(dir + "/manifest.json");
  require(f.good(), "checkpoint: cannot write manifest in " + dir);
  f << man.dump(2) << "\n";
}

// Loads values into an already-constructed store; shapes and names must
// match the architecture the caller built.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& dir, ParamStore<T>& params) {
  std::ifstream f(dir + "/manifest.json");
  require(f.good(), "checkpoint: missing manifest.json in " + dir +
                        " (produce it with the corresponding train command)");
  nlohmann::json man = nlohmann::json::parse(f);
  require(man.value("schema_version", -1) == kCheckpointSchemaVersion,
          "checkpoint: unsupported schema version in " + dir);
  CheckpointMeta meta;
  meta.kind = man.value("kind", "");
  meta.seed = man.value("seed", 0ull);
  if (man.contains("extra")) meta.extra = man["extra"];
  if (man.contains("parents")) meta.parents = man["parents"].get<std::vector<std::string>>();
  meta.params_hash = man.value("params_hash", "");
  const auto& pj = man["params"];
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    auto& p = params.param(i);
    require(pj.contains(name), "checkpoint: " + dir + " lacks parameter '" + name + "'");
    auto shape = pj[name]["shape"].template get<Shape>();
    require(shape == p.shape(), "checkpoint: shape mismatch for '" + name + "': file has " +
                                    shape_str(shape) + ", model has " + shape_str(p.shape()));
    auto v = detail::read_blob(dir + "/blobs/" + name + ".bin",
                               static_cast<size_t>(p.size()));
    for (long j = 0; j < p.size(); ++j) p.val()[j] = static_cast<T>(v[j]);
  }
  return meta;
}

inline bool checkpoint_exists(const std::string& dir) {
  return std::filesystem::exists(dir + "/manifest.json");
}

inline std::string checkpoint_hash(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  require(f.good(), "checkpoint: missing manifest.json in " + dir);
  nlohmann::json man = nlohmann::json::parse(f);
  return man.value("params_hash", "");
}

}  // namespace wcycle
