#include "vidswap/numcore/kernels.hpp"

#include <omp.h>

#include <algorithm>

namespace vidswap::numcore::kern {

namespace {
int g_jobs = 1;
}

int jobs() { return g_jobs; }

void set_jobs(int n) {
  g_jobs = std::max(1, n);
  omp_set_num_threads(g_jobs);
}

}  // namespace vidswap::numcore::kern
