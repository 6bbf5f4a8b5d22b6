#include "milreg/manifest.hpp"

#include <json.hpp>

#include <filesystem>

#include "milreg/common.hpp"

namespace milreg {

void RunManifest::add_input(const std::string& path) {
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(hash_file(path)));
  input_digests[path] = hex;
}

void RunManifest::write(const std::string& dir) const {
  nlohmann::json j;
  j["command"] = command;
  j["tool_version"] = kToolVersion;
  j["seed"] = seed;
  j["config"] = config_snapshot;
  j["inputs"] = input_digests;
  j["outputs"] = outputs;
  j["wall_time_s"] = wall_time_s;
  const auto path = std::filesystem::path(dir) / "manifest.json";
  write_file_bytes(path.string(), j.dump(2) + "\n");
}

}  // namespace milreg
