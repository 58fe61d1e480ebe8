#include "fedvc/kernels.hpp"

#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedvc {
namespace kern {

namespace {
std::atomic<int> g_thread_cap{0};

// Below this many output cells the parallel dispatch falls back to serial;
// spawning a team costs more than the loop.
constexpr long kParallelCutoff = 4096;
}  // namespace

void set_thread_cap(int n) { g_thread_cap.store(n < 0 ? 0 : n); }

int thread_cap() { return g_thread_cap.load(); }

int effective_threads() {
#ifdef _OPENMP
  int cap = g_thread_cap.load();
  int hw = omp_get_max_threads();
  return cap == 0 ? hw : std::min(cap, hw);
#else
  return 1;
#endif
}

template <typename S>
void matmul_serial(const S* a, const S* b, S* out, int r, int k, int c) {
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += double(a[i * k + t]) * double(b[t * c + j]);
      out[i * c + j] = S(acc);
    }
  }
}

template <typename S>
void matmul_parallel(const S* a, const S* b, S* out, int r, int k, int c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads())
#endif
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += double(a[i * k + t]) * double(b[t * c + j]);
      out[i * c + j] = S(acc);
    }
  }
}

template <typename S>
void matmul(const S* a, const S* b, S* out, int r, int k, int c) {
  if (long(r) * c >= kParallelCutoff && effective_threads() > 1)
    matmul_parallel(a, b, out, r, k, c);
  else
    matmul_serial(a, b, out, r, k, c);
}

template <typename S>
void matmul_nt_serial(const S* a, const S* b, S* out, int r, int k, int c) {
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += double(a[i * k + t]) * double(b[j * k + t]);
      out[i * c + j] = S(acc);
    }
  }
}

template <typename S>
void matmul_nt_parallel(const S* a, const S* b, S* out, int r, int k, int c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads())
#endif
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += double(a[i * k + t]) * double(b[j * k + t]);
      out[i * c + j] = S(acc);
    }
  }
}

template <typename S>
void matmul_nt(const S* a, const S* b, S* out, int r, int k, int c) {
  if (long(r) * c >= kParallelCutoff && effective_threads() > 1)
    matmul_nt_parallel(a, b, out, r, k, c);
  else
    matmul_nt_serial(a, b, out, r, k, c);
}

template <typename S>
void matmul_tn_serial(const S* a, const S* b, S* out, int r, int k, int c) {
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += double(a[t * r + i]) * double(b[t * c + j]);
      out[i * c + j] = S(acc);
    }
  }
}

template <typename S>
void matmul_tn_parallel(const S* a, const S* b, S* out, int r, int k, int c) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads())
#endif
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += double(a[t * r + i]) * double(b[t * c + j]);
      out[i * c + j] = S(acc);
    }
  }
}

template <typename S>
void matmul_tn(const S* a, const S* b, S* out, int r, int k, int c) {
  if (long(r) * c >= kParallelCutoff && effective_threads() > 1)
    matmul_tn_parallel(a, b, out, r, k, c);
  else
    matmul_tn_serial(a, b, out, r, k, c);
}

template <typename S>
void pairwise_sqdist_serial(const S* z, const S* c, S* out, int n, int m, int d) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        double diff = double(z[i * d + t]) - double(c[j * d + t]);
        acc += diff * diff;
      }
      out[i * m + j] = S(acc);
    }
  }
}

template <typename S>
void pairwise_sqdist_parallel(const S* z, const S* c, S* out, int n, int m, int d) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(effective_threads())
#endif
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        double diff = double(z[i * d + t]) - double(c[j * d + t]);
        acc += diff * diff;
      }
      out[i * m + j] = S(acc);
    }
  }
}

template <typename S>
void pairwise_sqdist(const S* z, const S* c, S* out, int n, int m, int d) {
  if (long(n) * m >= kParallelCutoff && effective_threads() > 1)
    pairwise_sqdist_parallel(z, c, out, n, m, d);
  else
    pairwise_sqdist_serial(z, c, out, n, m, d);
}

#define FEDVC_INSTANTIATE(S)                                                        \
  template void matmul_serial<S>(const S*, const S*, S*, int, int, int);            \
  template void matmul_parallel<S>(const S*, const S*, S*, int, int, int);          \
  template void matmul<S>(const S*, const S*, S*, int, int, int);                   \
  template void matmul_nt_serial<S>(const S*, const S*, S*, int, int, int);         \
  template void matmul_nt_parallel<S>(const S*, const S*, S*, int, int, int);       \
  template void matmul_nt<S>(const S*, const S*, S*, int, int, int);                \
  template void matmul_tn_serial<S>(const S*, const S*, S*, int, int, int);         \
  template void matmul_tn_parallel<S>(const S*, const S*, S*, int, int, int);       \
  template void matmul_tn<S>(const S*, const S*, S*, int, int, int);                \
  template void pairwise_sqdist_serial<S>(const S*, const S*, S*, int, int, int);   \
  template void pairwise_sqdist_parallel<S>(const S*, const S*, S*, int, int, int); \
  template void pairwise_sqdist<S>(const S*, const S*, S*, int, int, int);

FEDVC_INSTANTIATE(float)
FEDVC_INSTANTIATE(double)
#undef FEDVC_INSTANTIATE

}  // namespace kern
}  // namespace fedvc
