#include "run_manifest.hpp"

#include <Eigen/Core>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "darkforge/parallel.hpp"

#ifndef DARKFORGE_VERSION
#define DARKFORGE_VERSION "0.0.0"
#endif

namespace darkforge::cli {

namespace {

std::string iso_utc(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

RunManifest::RunManifest(std::string command, int argc, char** argv)
    : command_(std::move(command)), argv_(argv, argv + argc), started_(std::chrono::system_clock::now()) {}

void RunManifest::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const nlohmann::json j = {
      {"command", command_},
      {"argv", argv_},
      {"seed", seed_},
      {"config", config_},
      {"inputs", inputs_},
      {"outputs", outputs_},
      {"started_utc", iso_utc(started_)},
      {"finished_utc", iso_utc(std::chrono::system_clock::now())},
      {"threads", thread_limit()},
      {"versions",
       {{"darkforge", DARKFORGE_VERSION},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"compiler", __VERSION__}}},
  };
  const auto path = dir / "run_manifest.json";
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace darkforge::cli
