#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>

namespace cdlab {

/// Execution mode for the data-parallel kernels. `serial` is the reference
/// path kept for testing and benchmarking; both modes produce identical
/// numbers because every sample owns its RNG stream and reductions run in
/// fixed index order.
enum class Exec { serial, parallel };

/// Cap on OpenMP threads used by `Exec::parallel` kernels (0 = runtime default).
void set_thread_cap(int threads);
int thread_cap();

/// Fixed chunk length used for chunked reductions. Chunk boundaries never
/// depend on the thread count.
inline constexpr std::size_t kReductionChunk = 256;

inline std::size_t chunk_count(std::size_t n, std::size_t chunk = kReductionChunk) {
  return (n + chunk - 1) / chunk;
}

template <class Fn>
void for_each_index(std::size_t n, Exec exec, Fn&& fn) {
  if (exec == Exec::parallel) {
    // Exceptions cannot cross the OpenMP region; the one from the lowest
    // index is rethrown afterwards so error reports match the serial path.
    const auto count = static_cast<std::int64_t>(n);
    std::exception_ptr error;
    std::int64_t error_index = count;
#pragma omp parallel for schedule(static) num_threads(thread_cap())
    for (std::int64_t i = 0; i < count; ++i) {
      try {
        fn(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical(cdlab_for_each_error)
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::size_t i = 0; i < n; ++i) fn(i);
  }
}

}  // namespace cdlab
