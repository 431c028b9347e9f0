#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <type_traits>

#include "kernels_impl.hpp"

// AVX2+FMA variants. Compiled with -mavx2 -mfma; only reached when runtime
// dispatch selected Isa::avx2, so no further CPU checks here.
namespace poseg::kernels::avx2_impl {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

inline void axpy_lanes(int64_t n, float alpha, const float* x, float* y) {
  __m256 va = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

inline void axpy_lanes(int64_t n, double alpha, const double* x, double* y) {
  __m256d va = _mm256_set1_pd(alpha);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <class T>
void axpy(int64_t n, T alpha, const T* x, T* y) {
  axpy_lanes(n, alpha, x, y);
}

template <class T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + int64_t(m) * n, T(0));
  for (int k0 = 0; k0 < k; k0 += kGemmKBlock) {
    int k1 = std::min(k, k0 + kGemmKBlock);
    for (int i = 0; i < m; ++i) {
      T* ci = c + int64_t(i) * n;
      const T* ai = a + int64_t(i) * k;
      for (int kk = k0; kk < k1; ++kk) axpy_lanes(n, ai[kk], b + int64_t(kk) * n, ci);
    }
  }
}

template <class T>
void vadd(int64_t n, const T* a, const T* b, T* y) {
  int64_t i = 0;
  if constexpr (std::is_same_v<T, float>) {
    for (; i + 8 <= n; i += 8)
      _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  } else {
    for (; i + 4 <= n; i += 4)
      _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

template <class T>
void vmul(int64_t n, const T* a, const T* b, T* y) {
  int64_t i = 0;
  if constexpr (std::is_same_v<T, float>) {
    for (; i + 8 <= n; i += 8)
      _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  } else {
    for (; i + 4 <= n; i += 4)
      _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

template <class T>
void vscale(int64_t n, T alpha, const T* x, T* y) {
  int64_t i = 0;
  if constexpr (std::is_same_v<T, float>) {
    __m256 va = _mm256_set1_ps(alpha);
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  } else {
    __m256d va = _mm256_set1_pd(alpha);
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) y[i] = alpha * x[i];
}

template <class T>
T vdot(int64_t n, const T* a, const T* b) {
  int64_t i = 0;
  T s = 0;
  if constexpr (std::is_same_v<T, float>) {
    __m256 acc = _mm256_setzero_ps();
    for (; i + 8 <= n; i += 8)
      acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    s = hsum(acc);
  } else {
    __m256d acc = _mm256_setzero_pd();
    for (; i + 4 <= n; i += 4)
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    s = hsum(acc);
  }
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
T vsum(int64_t n, const T* x) {
  int64_t i = 0;
  T s = 0;
  if constexpr (std::is_same_v<T, float>) {
    __m256 acc = _mm256_setzero_ps();
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    s = hsum(acc);
  } else {
    __m256d acc = _mm256_setzero_pd();
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    s = hsum(acc);
  }
  for (; i < n; ++i) s += x[i];
  return s;
}

template <class T>
void prelu(int64_t n, T slope, const T* x, T* y) {
  int64_t i = 0;
  if constexpr (std::is_same_v<T, float>) {
    __m256 vs = _mm256_set1_ps(slope);
    __m256 zero = _mm256_setzero_ps();
    for (; i + 8 <= n; i += 8) {
      __m256 vx = _mm256_loadu_ps(x + i);
      __m256 keep = _mm256_cmp_ps(vx, zero, _CMP_GE_OQ);
      _mm256_storeu_ps(y + i, _mm256_blendv_ps(_mm256_mul_ps(vs, vx), vx, keep));
    }
  } else {
    __m256d vs = _mm256_set1_pd(slope);
    __m256d zero = _mm256_setzero_pd();
    for (; i + 4 <= n; i += 4) {
      __m256d vx = _mm256_loadu_pd(x + i);
      __m256d keep = _mm256_cmp_pd(vx, zero, _CMP_GE_OQ);
      _mm256_storeu_pd(y + i, _mm256_blendv_pd(_mm256_mul_pd(vs, vx), vx, keep));
    }
  }
  for (; i < n; ++i) y[i] = x[i] >= T(0) ? x[i] : slope * x[i];
}

#define POSEG_INSTANTIATE(T)                                                      \
  template void gemm_nn<T>(int, int, int, const T*, const T*, T*, bool);          \
  template void axpy<T>(int64_t, T, const T*, T*);                                \
  template void vadd<T>(int64_t, const T*, const T*, T*);                         \
  template void vmul<T>(int64_t, const T*, const T*, T*);                         \
  template void vscale<T>(int64_t, T, const T*, T*);                              \
  template T vdot<T>(int64_t, const T*, const T*);                                \
  template T vsum<T>(int64_t, const T*);                                          \
  template void prelu<T>(int64_t, T, const T*, T*);

POSEG_INSTANTIATE(float)
POSEG_INSTANTIATE(double)
#undef POSEG_INSTANTIATE

}  // namespace poseg::kernels::avx2_impl
