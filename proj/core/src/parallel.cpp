#include "flowvip/parallel.hpp"

#include <cstdlib>
#include <string>

namespace flowvip {

int worker_count() {
  static const int count = [] {
    if (const char* env = std::getenv("FLOWVIP_THREADS")) {
      try {
        const int v = std::stoi(env);
        if (v >= 1) return v;
      } catch (...) {
      }
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  }();
  return count;
}

}  // namespace flowvip
