#include "cforge/parallel.hpp"

#include <atomic>

namespace cforge {

namespace {
std::atomic<unsigned> g_workers{0};
}

void set_worker_count(unsigned n) { g_workers = n; }

unsigned worker_count() {
  const unsigned n = g_workers.load();
  if (n != 0) return n;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace cforge
