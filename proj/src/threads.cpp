#include "cra/threads.hpp"

#include <cstdlib>

namespace cra {

namespace {
int g_threads = 0;  // 0 = unset

int env_threads() {
  static int cached = [] {
    const char* v = std::getenv("CRA_KIT_THREADS");
    if (!v) return 0;
    int n = std::atoi(v);
    return n > 0 ? n : 0;
  }();
  return cached;
}
}  // namespace

int thread_count() {
  if (int n = env_threads(); n > 0) return n;
  if (g_threads > 0) return g_threads;
  return 1;
}

void set_thread_count(int n) { g_threads = n > 0 ? n : 0; }

}  // namespace cra
