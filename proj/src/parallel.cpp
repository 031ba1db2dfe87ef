#include "arc/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace arc {

namespace {

int env_thread_cap() {
  const char* env = std::getenv("ARC_THREADS");
  if (env == nullptr || *env == '\0') return 0;
  try {
    return std::max(1, std::stoi(env));
  } catch (...) {
    return 0;
  }
}

}  // namespace

int worker_count() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  const int cap = env_thread_cap();
  return cap > 0 ? std::min(n, cap) : n;
}

void configure_threads_from_env() {
#ifdef _OPENMP
  const int cap = env_thread_cap();
  if (cap > 0) omp_set_num_threads(std::min(cap, omp_get_num_procs()));
#endif
}

void set_worker_count(int n) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

}  // namespace arc
