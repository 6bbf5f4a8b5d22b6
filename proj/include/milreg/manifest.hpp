#pragma once
// Run manifest: records command, config snapshot, seed, input digests and
// outputs so deterministic stages can be re-verified bit for bit.
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "milreg/config.hpp"

namespace milreg {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config_snapshot;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_digests;  // path -> 64-bit hash, hex
  std::vector<std::string> outputs;
  double wall_time_s = 0.0;

  void add_input(const std::string& path);
  void write(const std::string& dir) const;  // dir/manifest.json
};

}  // namespace milreg
