#include "lmr/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "kernels_detail.hpp"

namespace lmr::kernels {
namespace detail {

template <class T>
void scalar_add(size_t n, const T* x, const T* y, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <class T>
void scalar_mul(size_t n, const T* x, const T* y, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <class T>
void scalar_scale(size_t n, T a, const T* x, T* out) {
  for (size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

template <class T>
void scalar_axpy(size_t n, T a, const T* x, T* y) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
T scalar_dot(size_t n, const T* x, const T* y) {
  T s = T(0);
  for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class T>
T scalar_sum(size_t n, const T* x) {
  T s = T(0);
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <class T>
T scalar_max(size_t n, const T* x) {
  T m = x[0];
  for (size_t i = 1; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

// ikj order with an axpy inner loop: C rows accumulate B rows scaled by A[i,p].
template <class T>
void scalar_gemm_nn(bool acc, int m, int k, int n, const T* A, const T* B, T* C) {
  for (int i = 0; i < m; ++i) {
    T* c = C + size_t(i) * n;
    if (!acc) std::memset(c, 0, sizeof(T) * size_t(n));
    for (int p = 0; p < k; ++p) {
      T a = A[size_t(i) * k + p];
      if (a == T(0)) continue;
      const T* b = B + size_t(p) * n;
      for (int j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

template <class T>
void scalar_gemm_nt(bool acc, int m, int k, int n, const T* A, const T* B, T* C) {
  for (int i = 0; i < m; ++i) {
    const T* a = A + size_t(i) * k;
    T* c = C + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      T s = scalar_dot(size_t(k), a, B + size_t(j) * k);
      c[j] = acc ? c[j] + s : s;
    }
  }
}

template <class T>
void scalar_gemm_tn(bool acc, int m, int k, int n, const T* A, const T* B, T* C) {
  if (!acc) std::memset(C, 0, sizeof(T) * size_t(m) * size_t(n));
  for (int p = 0; p < k; ++p) {
    const T* b = B + size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      T a = A[size_t(p) * m + i];
      if (a == T(0)) continue;
      T* c = C + size_t(i) * n;
      for (int j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

template void scalar_add<float>(size_t, const float*, const float*, float*);
template void scalar_add<double>(size_t, const double*, const double*, double*);
template void scalar_mul<float>(size_t, const float*, const float*, float*);
template void scalar_mul<double>(size_t, const double*, const double*, double*);
template void scalar_scale<float>(size_t, float, const float*, float*);
template void scalar_scale<double>(size_t, double, const double*, double*);
template void scalar_axpy<float>(size_t, float, const float*, float*);
template void scalar_axpy<double>(size_t, double, const double*, double*);
template float scalar_dot<float>(size_t, const float*, const float*);
template double scalar_dot<double>(size_t, const double*, const double*);
template float scalar_sum<float>(size_t, const float*);
template double scalar_sum<double>(size_t, const double*);
template float scalar_max<float>(size_t, const float*);
template double scalar_max<double>(size_t, const double*);
template void scalar_gemm_nn<float>(bool, int, int, int, const float*, const float*, float*);
template void scalar_gemm_nn<double>(bool, int, int, int, const double*, const double*, double*);
template void scalar_gemm_nt<float>(bool, int, int, int, const float*, const float*, float*);
template void scalar_gemm_nt<double>(bool, int, int, int, const double*, const double*, double*);
template void scalar_gemm_tn<float>(bool, int, int, int, const float*, const float*, float*);
template void scalar_gemm_tn<double>(bool, int, int, int, const double*, const double*, double*);

}  // namespace detail

namespace {

std::atomic<Backend> g_backend{Backend::scalar};

Backend initial_backend() {
  const char* env = std::getenv("LMR_KERNELS");
  std::string want = env ? env : "auto";
  if (want == "scalar") return Backend::scalar;
  if (want == "avx2") {
    if (!avx2_supported()) throw std::runtime_error("kernels: LMR_KERNELS=avx2 but cpu lacks avx2/fma");
    return Backend::avx2;
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

struct Init {
  Init() { g_backend.store(initial_backend()); }
} g_init;

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active() { return g_backend.load(); }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported())
    throw std::runtime_error("kernels: avx2 backend not available on this cpu");
  g_backend.store(b);
}

#define LMR_DISPATCH(fn, ...)                                      \
  do {                                                             \
    if (g_backend.load(std::memory_order_relaxed) == Backend::avx2) \
      return detail::avx2_##fn(__VA_ARGS__);                       \
    return detail::scalar_##fn(__VA_ARGS__);                       \
  } while (0)

template <class T> void add(size_t n, const T* x, const T* y, T* out) { LMR_DISPATCH(add, n, x, y, out); }
template <class T> void mul(size_t n, const T* x, const T* y, T* out) { LMR_DISPATCH(mul, n, x, y, out); }
template <class T> void scale(size_t n, T a, const T* x, T* out) { LMR_DISPATCH(scale, n, a, x, out); }
template <class T> void axpy(size_t n, T a, const T* x, T* y) { LMR_DISPATCH(axpy, n, a, x, y); }
template <class T> T dot(size_t n, const T* x, const T* y) { LMR_DISPATCH(dot, n, x, y); }
template <class T> T reduce_sum(size_t n, const T* x) { LMR_DISPATCH(sum, n, x); }
template <class T> T reduce_max(size_t n, const T* x) { LMR_DISPATCH(max, n, x); }
template <class T> void gemm_nn(bool acc, int m, int k, int n, const T* A, const T* B, T* C) {
  LMR_DISPATCH(gemm_nn, acc, m, k, n, A, B, C);
}
template <class T> void gemm_nt(bool acc, int m, int k, int n, const T* A, const T* B, T* C) {
  LMR_DISPATCH(gemm_nt, acc, m, k, n, A, B, C);
}
template <class T> void gemm_tn(bool acc, int m, int k, int n, const T* A, const T* B, T* C) {
  LMR_DISPATCH(gemm_tn, acc, m, k, n, A, B, C);
}

#undef LMR_DISPATCH

template void add<float>(size_t, const float*, const float*, float*);
template void add<double>(size_t, const double*, const double*, double*);
template void mul<float>(size_t, const float*, const float*, float*);
template void mul<double>(size_t, const double*, const double*, double*);
template void scale<float>(size_t, float, const float*, float*);
template void scale<double>(size_t, double, const double*, double*);
template void axpy<float>(size_t, float, const float*, float*);
template void axpy<double>(size_t, double, const double*, double*);
template float dot<float>(size_t, const float*, const float*);
template double dot<double>(size_t, const double*, const double*);
template float reduce_sum<float>(size_t, const float*);
template double reduce_sum<double>(size_t, const double*);
template float reduce_max<float>(size_t, const float*);
template double reduce_max<double>(size_t, const double*);
template void gemm_nn<float>(bool, int, int, int, const float*, const float*, float*);
template void gemm_nn<double>(bool, int, int, int, const double*, const double*, double*);
template void gemm_nt<float>(bool, int, int, int, const float*, const float*, float*);
template void gemm_nt<double>(bool, int, int, int, const double*, const double*, double*);
template void gemm_tn<float>(bool, int, int, int, const float*, const float*, float*);
template void gemm_tn<double>(bool, int, int, int, const double*, const double*, double*);

}  // namespace lmr::kernels
