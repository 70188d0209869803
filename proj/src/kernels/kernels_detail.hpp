#pragma once
#include <cstddef>

// Backend entry points shared between the dispatch TU and the AVX2 TU.
// The avx2_* symbols are always defined; on non-x86 builds they forward to
// scalar and set_backend(avx2) is rejected before they can be reached.

namespace lmr::kernels::detail {

template <class T> void scalar_add(size_t n, const T* x, const T* y, T* out);
template <class T> void scalar_mul(size_t n, const T* x, const T* y, T* out);
template <class T> void scalar_scale(size_t n, T a, const T* x, T* out);
template <class T> void scalar_axpy(size_t n, T a, const T* x, T* y);
template <class T> T scalar_dot(size_t n, const T* x, const T* y);
template <class T> T scalar_sum(size_t n, const T* x);
template <class T> T scalar_max(size_t n, const T* x);
template <class T> void scalar_gemm_nn(bool acc, int m, int k, int n, const T* A, const T* B, T* C);
template <class T> void scalar_gemm_nt(bool acc, int m, int k, int n, const T* A, const T* B, T* C);
template <class T> void scalar_gemm_tn(bool acc, int m, int k, int n, const T* A, const T* B, T* C);

void avx2_add(size_t n, const float* x, const float* y, float* out);
void avx2_add(size_t n, const double* x, const double* y, double* out);
void avx2_mul(size_t n, const float* x, const float* y, float* out);
void avx2_mul(size_t n, const double* x, const double* y, double* out);
void avx2_scale(size_t n, float a, const float* x, float* out);
void avx2_scale(size_t n, double a, const double* x, double* out);
void avx2_axpy(size_t n, float a, const float* x, float* y);
void avx2_axpy(size_t n, double a, const double* x, double* y);
float avx2_dot(size_t n, const float* x, const float* y);
double avx2_dot(size_t n, const double* x, const double* y);
float avx2_sum(size_t n, const float* x);
double avx2_sum(size_t n, const double* x);
float avx2_max(size_t n, const float* x);
double avx2_max(size_t n, const double* x);
void avx2_gemm_nn(bool acc, int m, int k, int n, const float* A, const float* B, float* C);
void avx2_gemm_nn(bool acc, int m, int k, int n, const double* A, const double* B, double* C);
void avx2_gemm_nt(bool acc, int m, int k, int n, const float* A, const float* B, float* C);
void avx2_gemm_nt(bool acc, int m, int k, int n, const double* A, const double* B, double* C);
void avx2_gemm_tn(bool acc, int m, int k, int n, const float* A, const float* B, float* C);
void avx2_gemm_tn(bool acc, int m, int k, int n, const double* A, const double* B, double* C);

}  // namespace lmr::kernels::detail
