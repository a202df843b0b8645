#pragma once

#include <cstddef>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace rf {

// Selects between the OpenMP kernels and the serial reference path. Both
// paths visit work items in the same order and reduce in the same order, so
// their results are bit-identical.
enum class Exec { Serial, Parallel };

inline int max_threads() {
#if defined(_OPENMP)
    return omp_get_max_threads();
#else
    return 1;
#endif
}

template <typename F>
void parallel_for(std::ptrdiff_t n, Exec exec, F&& f) {
#if defined(_OPENMP)
    if (exec == Exec::Parallel && n > 1 && max_threads() > 1) {
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) f(i);
}

}  // namespace rf
