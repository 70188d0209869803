#include <cstring>

#include "kernels_detail.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace lmr::kernels::detail {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

inline float hmax(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_max_ps(lo, hi);
  lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
  lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
  return _mm_cvtss_f32(lo);
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

}  // namespace

void avx2_add(size_t n, const float* x, const float* y, float* out) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void avx2_add(size_t n, const double* x, const double* y, double* out) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void avx2_mul(size_t n, const float* x, const float* y, float* out) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void avx2_mul(size_t n, const double* x, const double* y, double* out) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void avx2_scale(size_t n, float a, const float* x, float* out) {
  __m256 va = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = a * x[i];
}

void avx2_scale(size_t n, double a, const double* x, double* out) {
  __m256d va = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = a * x[i];
}

void avx2_axpy(size_t n, float a, const float* x, float* y) {
  __m256 va = _mm256_set1_ps(a);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void avx2_axpy(size_t n, double a, const double* x, double* y) {
  __m256d va = _mm256_set1_pd(a);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

float avx2_dot(size_t n, const float* x, const float* y) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double avx2_dot(size_t n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

float avx2_sum(size_t n, const float* x) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double avx2_sum(size_t n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

float avx2_max(size_t n, const float* x) {
  if (n < 8) return scalar_max(n, x);
  __m256 acc = _mm256_loadu_ps(x);
  size_t i = 8;
  for (; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
  float m = hmax(acc);
  for (; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

double avx2_max(size_t n, const double* x) {
  if (n < 4) return scalar_max(n, x);
  __m256d acc = _mm256_loadu_pd(x);
  size_t i = 4;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  double m = hmax(acc);
  for (; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

void avx2_gemm_nn(bool acc, int m, int k, int n, const float* A, const float* B, float* C) {
  for (int i = 0; i < m; ++i) {
    float* c = C + size_t(i) * n;
    if (!acc) std::memset(c, 0, sizeof(float) * size_t(n));
    for (int p = 0; p < k; ++p) {
      float a = A[size_t(i) * k + p];
      if (a == 0.0f) continue;
      avx2_axpy(size_t(n), a, B + size_t(p) * n, c);
    }
  }
}

void avx2_gemm_nn(bool acc, int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    double* c = C + size_t(i) * n;
    if (!acc) std::memset(c, 0, sizeof(double) * size_t(n));
    for (int p = 0; p < k; ++p) {
      double a = A[size_t(i) * k + p];
      if (a == 0.0) continue;
      avx2_axpy(size_t(n), a, B + size_t(p) * n, c);
    }
  }
}

void avx2_gemm_nt(bool acc, int m, int k, int n, const float* A, const float* B, float* C) {
  for (int i = 0; i < m; ++i) {
    const float* a = A + size_t(i) * k;
    float* c = C + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      float s = avx2_dot(size_t(k), a, B + size_t(j) * k);
      c[j] = acc ? c[j] + s : s;
    }
  }
}

void avx2_gemm_nt(bool acc, int m, int k, int n, const double* A, const double* B, double* C) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + size_t(i) * k;
    double* c = C + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      double s = avx2_dot(size_t(k), a, B + size_t(j) * k);
      c[j] = acc ? c[j] + s : s;
    }
  }
}

void avx2_gemm_tn(bool acc, int m, int k, int n, const float* A, const float* B, float* C) {
  if (!acc) std::memset(C, 0, sizeof(float) * size_t(m) * size_t(n));
  for (int p = 0; p < k; ++p) {
    const float* b = B + size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      float a = A[size_t(p) * m + i];
      if (a == 0.0f) continue;
      avx2_axpy(size_t(n), a, b, C + size_t(i) * n);
    }
  }
}

void avx2_gemm_tn(bool acc, int m, int k, int n, const double* A, const double* B, double* C) {
  if (!acc) std::memset(C, 0, sizeof(double) * size_t(m) * size_t(n));
  for (int p = 0; p < k; ++p) {
    const double* b = B + size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      double a = A[size_t(p) * m + i];
      if (a == 0.0) continue;
      avx2_axpy(size_t(n), a, b, C + size_t(i) * n);
    }
  }
}

}  // namespace lmr::kernels::detail

#else  // non-x86 fallback: symbols exist but set_backend(avx2) is unreachable

namespace lmr::kernels::detail {

void avx2_add(size_t n, const float* x, const float* y, float* out) { scalar_add(n, x, y, out); }
void avx2_add(size_t n, const double* x, const double* y, double* out) { scalar_add(n, x, y, out); }
void avx2_mul(size_t n, const float* x, const float* y, float* out) { scalar_mul(n, x, y, out); }
void avx2_mul(size_t n, const double* x, const double* y, double* out) { scalar_mul(n, x, y, out); }
void avx2_scale(size_t n, float a, const float* x, float* out) { scalar_scale(n, a, x, out); }
void avx2_scale(size_t n, double a, const double* x, double* out) { scalar_scale(n, a, x, out); }
void avx2_axpy(size_t n, float a, const float* x, float* y) { scalar_axpy(n, a, x, y); }
void avx2_axpy(size_t n, double a, const double* x, double* y) { scalar_axpy(n, a, x, y); }
float avx2_dot(size_t n, const float* x, const float* y) { return scalar_dot(n, x, y); }
double avx2_dot(size_t n, const double* x, const double* y) { return scalar_dot(n, x, y); }
float avx2_sum(size_t n, const float* x) { return scalar_sum(n, x); }
double avx2_sum(size_t n, const double* x) { return scalar_sum(n, x); }
float avx2_max(size_t n, const float* x) { return scalar_max(n, x); }
double avx2_max(size_t n, const double* x) { return scalar_max(n, x); }
void avx2_gemm_nn(bool acc, int m, int k, int n, const float* A, const float* B, float* C) { scalar_gemm_nn(acc, m, k, n, A, B, C); }
void avx2_gemm_nn(bool acc, int m, int k, int n, const double* A, const double* B, double* C) { scalar_gemm_nn(acc, m, k, n, A, B, C); }
void avx2_gemm_nt(bool acc, int m, int k, int n, const float* A, const float* B, float* C) { scalar_gemm_nt(acc, m, k, n, A, B, C); }
void avx2_gemm_nt(bool acc, int m, int k, int n, const double* A, const double* B, double* C) { scalar_gemm_nt(acc, m, k, n, A, B, C); }
void avx2_gemm_tn(bool acc, int m, int k, int n, const float* A, const float* B, float* C) { scalar_gemm_tn(acc, m, k, n, A, B, C); }
void avx2_gemm_tn(bool acc, int m, int k, int n, const double* A, const double* B, double* C) { scalar_gemm_tn(acc, m, k, n, A, B, C); }

}  // namespace lmr::kernels::detail

#endif
