#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace auctioncert {

// Execution policy for the batch kernels. Every parallel kernel in this
// project writes to per-index slots and reduces in index order afterwards,
// so the serial and OpenMP paths produce bit-identical results; the serial
// path is kept as the reference implementation and for deterministic mode.
struct ExecPolicy {
  int threads = 0;  // 0 = library default (all hardware threads)

  static ExecPolicy serial() { return ExecPolicy{1}; }

  int effective_threads() const {
#ifdef _OPENMP
    return threads > 0 ? threads : omp_get_max_threads();
#else
    return 1;
#endif
  }
};

// Serial reference: plain index loop.
template <typename Fn>
void for_each_index_serial(std::int64_t n, Fn&& fn) {
  for (std::int64_t i = 0; i < n; ++i) fn(i);
}

// OpenMP twin of for_each_index_serial. fn(i) must only touch state owned
// by index i.
template <typename Fn>
void for_each_index_parallel(std::int64_t n, Fn&& fn, int threads) {
#ifdef _OPENMP
  if (threads != 1) {
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads > 0 ? threads : omp_get_max_threads())
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#endif
  for_each_index_serial(n, fn);
}

template <typename Fn>
void for_each_index(std::int64_t n, Fn&& fn, const ExecPolicy& policy) {
  if (policy.effective_threads() == 1) {
    for_each_index_serial(n, fn);
  } else {
    for_each_index_parallel(n, fn, policy.threads);
  }
}

}  // namespace auctioncert
