#include "darkforge/parallel.hpp"

#include <Eigen/Core>
#include <cstdlib>
#include <string>
#include <thread>

namespace darkforge {

int thread_limit() {
  if (const char* env = std::getenv("DARKFORGE_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
      // fall through to the hardware default
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void apply_thread_limit() { Eigen::setNbThreads(thread_limit()); }

}  // namespace darkforge
