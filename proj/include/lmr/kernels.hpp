#pragma once
#include <cstddef>

// Low-level numeric kernels behind the tensor ops.  Every kernel has a scalar
// reference implementation and an AVX2 variant; the active backend is chosen
// once at startup (cpuid + LMR_KERNELS env override) and can be switched
// explicitly, which the equivalence tests use.  Within one backend all loops
// have a fixed accumulation order, so repeated runs are bit-identical.

namespace lmr::kernels {

enum class Backend { scalar, avx2 };

Backend active();
void set_backend(Backend b);  // throws if the backend is not available
bool avx2_supported();

// elementwise
template <class T> void add(size_t n, const T* x, const T* y, T* out);
template <class T> void mul(size_t n, const T* x, const T* y, T* out);
template <class T> void scale(size_t n, T a, const T* x, T* out);
template <class T> void axpy(size_t n, T a, const T* x, T* y);  // y += a*x

// reductions
template <class T> T dot(size_t n, const T* x, const T* y);
template <class T> T reduce_sum(size_t n, const T* x);
template <class T> T reduce_max(size_t n, const T* x);  // n >= 1

// row-major matrix products, C is m x n, k is the contraction extent
// nn: A[m x k] * B[k x n];  nt: A[m x k] * B[n x k]^T;  tn: A[k x m]^T * B[k x n]
template <class T> void gemm_nn(bool acc, int m, int k, int n, const T* A, const T* B, T* C);
template <class T> void gemm_nt(bool acc, int m, int k, int n, const T* A, const T* B, T* C);
template <class T> void gemm_tn(bool acc, int m, int k, int n, const T* A, const T* B, T* C);

}  // namespace lmr::kernels
