#pragma once

// Run manifests: the resolved command line plus content hashes of inputs and
// outputs. No timestamps, so equal runs produce equal manifests.

#include <json.hpp>

#include "lsm/common.hpp"

namespace lsm {

inline constexpr std::string_view kToolVersion = "1.0.0";

struct FileDigest {
  std::string path;
  std::string fnv1a;
  std::uint64_t bytes = 0;
  bool operator==(const FileDigest&) const = default;
};

inline FileDigest digest_file(const std::filesystem::path& path) {
  const auto data = read_file(path);
  return {path.string(), hex64(fnv1a(data)), data.size()};
}

struct RunManifest {
  std::string command;
  std::string tool_version{kToolVersion};
  nlohmann::ordered_json flags = nlohmann::ordered_json::object();
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;

  nlohmann::ordered_json to_json() const {
    auto files = [](const std::vector<FileDigest>& v) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& f : v) arr.push_back({{"path", f.path}, {"fnv1a", f.fnv1a}, {"bytes", f.bytes}});
      return arr;
    };
    nlohmann::ordered_json j;
    j["tool"] = "lsm";
    j["tool_version"] = tool_version;
    j["command"] = command;
    j["flags"] = flags;
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.tool_version = j.at("tool_version").get<std::string>();
      m.flags = nlohmann::ordered_json::parse(j.at("flags").dump());
      for (const char* key : {"inputs", "outputs"}) {
        auto& dst = std::string_view(key) == "inputs" ? m.inputs : m.outputs;
        for (const auto& f : j.at(key))
          dst.push_back({f.at("path").get<std::string>(), f.at("fnv1a").get<std::string>(),
                         f.at("bytes").get<std::uint64_t>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad manifest: ") + e.what(), 0);
    }
    return m;
  }

  void save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

  static RunManifest load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("manifest is not JSON: ") + e.what(), e.byte);
    }
  }
};

}  // namespace lsm
