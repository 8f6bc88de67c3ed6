#pragma once

#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace koopquad::bench {

inline constexpr const char* kToolVersion = "0.1.0";

/// FNV-1a over the canonical (sorted-key, compact) serialisation.
[[nodiscard]] inline std::string config_hash(const nlohmann::json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;  // relative to the output directory
  nlohmann::json extra = nlohmann::json::object();

  void write(const std::filesystem::path& dir) const {
    nlohmann::json j;
    j["command"] = command;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["tool_version"] = kToolVersion;
    j["outputs"] = outputs;
    j["details"] = extra;
    std::ofstream(dir / ("manifest_" + command + ".json")) << j.dump(2) << '\n';
  }
};

}  // namespace koopquad::bench
