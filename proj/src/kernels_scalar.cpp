#include <algorithm>
#include <cstring>

#include "kernels_impl.hpp"

namespace poseg::kernels::scalar_impl {

template <class T>
void axpy(int64_t n, T alpha, const T* x, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + int64_t(m) * n, T(0));
  for (int k0 = 0; k0 < k; k0 += kGemmKBlock) {
    int k1 = std::min(k, k0 + kGemmKBlock);
    for (int i = 0; i < m; ++i) {
      T* ci = c + int64_t(i) * n;
      const T* ai = a + int64_t(i) * k;
      for (int kk = k0; kk < k1; ++kk) axpy(n, ai[kk], b + int64_t(kk) * n, ci);
    }
  }
}

template <class T>
void vadd(int64_t n, const T* a, const T* b, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class T>
void vmul(int64_t n, const T* a, const T* b, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <class T>
void vscale(int64_t n, T alpha, const T* x, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

template <class T>
T vdot(int64_t n, const T* a, const T* b) {
  T s = 0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
T vsum(int64_t n, const T* x) {
  T s = 0;
  for (int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <class T>
void prelu(int64_t n, T slope, const T* x, T* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] >= T(0) ? x[i] : slope * x[i];
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

}  // namespace poseg::kernels::scalar_impl
