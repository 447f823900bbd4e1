#pragma once

#include <exception>
#include <mutex>

namespace riskgraph {

enum class Exec { Serial, Parallel };

// Runs f(0..n-1), optionally across OpenMP threads. Callers own determinism:
// each index must write only its own slots. Exceptions cannot unwind out of
// an OpenMP region, so the first one is captured and rethrown afterwards.
template <typename F>
void run_indexed(int n, Exec exec, F&& f) {
    if (exec == Exec::Parallel) {
        std::exception_ptr err;
        std::mutex err_mu;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 8)
#endif
        for (int i = 0; i < n; ++i) {
            try {
                f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
            }
        }
        if (err) std::rethrow_exception(err);
    } else {
        for (int i = 0; i < n; ++i) f(i);
    }
}

}  // namespace riskgraph
