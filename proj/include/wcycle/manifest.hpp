#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>

#include "wcycle/common.hpp"

namespace wcycle {

// Every CLI command writes one of these next to its outputs so a run can be
// replayed exactly: the resolved configuration, the seeds, the hashes of the
// checkpoints it read, and the files it wrote.
struct CommandManifest {
  std::string command;
  std::map<std::string, std::string> config;   // resolved key -> value
  std::string config_hash;
  std::map<std::string, std::string> inputs;   // logical name -> checkpoint hash
  std::vector<std::string> outputs;            // paths relative to the manifest dir
  nlohmann::json metrics;                      // optional summary numbers

  void add_output(const std::string& rel) { outputs.push_back(rel); }

  void write(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["schema_version"] = 1;
    j["command"] = command;
    j["config"] = config;
    j["config_hash"] = config_hash;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    if (!metrics.is_null()) j["metrics"] = metrics;
    std::ofstream f(dir + "/manifest.json");
    require(f.good(), "manifest: cannot write to " + dir);
    f << j.dump(2) << "\n";
  }

  static CommandManifest read(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    require(f.good(), "manifest: missing manifest.json in " + dir);
    nlohmann::json j = nlohmann::json::parse(f);
    CommandManifest m;
    m.command = j.value("command", "");
    if (j.contains("config"))
      m.config = j["config"].get<std::map<std::string, std::string>>();
    m.config_hash = j.value("config_hash", "");
    if (j.contains("inputs"))
      m.inputs = j["inputs"].get<std::map<std::string, std::string>>();
    if (j.contains("outputs")) m.outputs = j["outputs"].get<std::vector<std::string>>();
    if (j.contains("metrics")) m.metrics = j["metrics"];
    return m;
  }
};

// Orphan detection: every regular file under the directory must be the
// manifest itself or covered by one of its declared outputs (a declared
// directory covers its whole subtree).
inline std::vector<std::string> find_orphans(const std::string& dir) {
  namespace fs = std::filesystem;
  auto manifest = CommandManifest::read(dir);
  std::vector<std::string> orphans;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string rel = fs::relative(e.path(), dir).string();
    if (rel == "manifest.json") continue;
    bool covered = false;
    for (const auto& out : manifest.outputs) {
      if (rel == out || rel.rfind(out + "/", 0) == 0) {
        covered = true;
        break;
      }
    }
    if (!covered) orphans.push_back(rel);
  }
  return orphans;
}

}  // namespace wcycle
