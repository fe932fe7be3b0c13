#include "cdlab/parallel.hpp"

#include <omp.h>

namespace cdlab {

namespace {
int g_thread_cap = 0;
}

void set_thread_cap(int threads) { g_thread_cap = threads < 0 ? 0 : threads; }

int thread_cap() { return g_thread_cap > 0 ? g_thread_cap : omp_get_max_threads(); }

}  // namespace cdlab
