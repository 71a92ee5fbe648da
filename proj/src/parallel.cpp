#include "parallel.hpp"

#include <cstdlib>
#include <string>

namespace mixr {

std::size_t default_workers() {
  if (const char* env = std::getenv("MIXR_WORKERS")) {
    try {
      const auto n = std::stoul(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  const auto hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

}  // namespace mixr
