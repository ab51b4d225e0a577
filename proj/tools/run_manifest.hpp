#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace darkforge::cli {

/// Provenance record written as run_manifest.json next to every command's outputs.
class RunManifest {
 public:
  RunManifest(std::string command, int argc, char** argv);

  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void set_config(nlohmann::json config) { config_ = std::move(config); }
  void add_input(const std::filesystem::path& p) { inputs_.push_back(p.string()); }
  void add_output(const std::filesystem::path& p) { outputs_.push_back(p.string()); }

  /// Stamps the finish time and writes `<dir>/run_manifest.json`.
  void write(const std::filesystem::path& dir) const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::uint64_t seed_ = 0;
  nlohmann::json config_ = nlohmann::json::object();
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::chrono::system_clock::time_point started_;
};

}  // namespace darkforge::cli
