#pragma once

#include <cstddef>

namespace fedvc {
namespace kern {

// Thread cap for the parallel kernels and the round loop. 0 means "use the
// OpenMP default". Set once at startup from FEDVC_THREADS or config.
void set_thread_cap(int n);
int thread_cap();
int effective_threads();

// All kernels accumulate each output cell in double, in a fixed traversal
// order, so the serial and parallel variants produce bitwise-identical
// results: the parallel versions only split independent output cells across
// threads.

// out[r x c] = a[r x k] * b[k x c]
template <typename S>
void matmul_serial(const S* a, const S* b, S* out, int r, int k, int c);
template <typename S>
void matmul_parallel(const S* a, const S* b, S* out, int r, int k, int c);
template <typename S>
void matmul(const S* a, const S* b, S* out, int r, int k, int c);

// out[r x c] = a[r x k] * b[c x k]^T
template <typename S>
void matmul_nt_serial(const S* a, const S* b, S* out, int r, int k, int c);
template <typename S>
void matmul_nt_parallel(const S* a, const S* b, S* out, int r, int k, int c);
template <typename S>
void matmul_nt(const S* a, const S* b, S* out, int r, int k, int c);

// out[r x c] = a[k x r]^T * b[k x c]
template <typename S>
void matmul_tn_serial(const S* a, const S* b, S* out, int r, int k, int c);
template <typename S>
void matmul_tn_parallel(const S* a, const S* b, S* out, int r, int k, int c);
template <typename S>
void matmul_tn(const S* a, const S* b, S* out, int r, int k, int c);

// out[n x m], out[i][j] = ||z_i - c_j||^2
template <typename S>
void pairwise_sqdist_serial(const S* z, const S* c, S* out, int n, int m, int d);
template <typename S>
void pairwise_sqdist_parallel(const S* z, const S* c, S* out, int n, int m, int d);
template <typename S>
void pairwise_sqdist(const S* z, const S* c, S* out, int n, int m, int d);

}  // namespace kern
}  // namespace fedvc
