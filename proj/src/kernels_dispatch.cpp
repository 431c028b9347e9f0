#include "poseg/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <vector>

#include "kernels_impl.hpp"
#include "poseg/errors.hpp"

namespace poseg::kernels {

const char* name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool cpu_has_avx2() {
#if POSEG_HAVE_AVX2_TU
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

Isa detect() {
  if (const char* env = std::getenv("POSEG_KERNELS")) {
    std::string s(env);
    if (s == "scalar") return Isa::scalar;
    if (s == "avx2") {
      if (!cpu_has_avx2()) throw Error("POSEG_KERNELS=avx2 but this CPU/build has no AVX2 support");
      return Isa::avx2;
    }
    if (!s.empty()) throw Error("POSEG_KERNELS must be 'scalar' or 'avx2', got '" + s + "'");
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

Isa& active_slot() {
  static Isa isa = detect();
  return isa;
}

}  // namespace

Isa active() { return active_slot(); }

void force(Isa isa) {
  if (isa == Isa::avx2 && !cpu_has_avx2())
    throw Error("cannot force avx2 kernels: unsupported on this CPU/build");
  active_slot() = isa;
}

#if POSEG_HAVE_AVX2_TU
#define POSEG_DISPATCH(fn, ...)                                             \
  if (active_slot() == Isa::avx2) return avx2_impl::fn(__VA_ARGS__);        \
  return scalar_impl::fn(__VA_ARGS__)
#else
#define POSEG_DISPATCH(fn, ...) return scalar_impl::fn(__VA_ARGS__)
#endif

template <class T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
  POSEG_DISPATCH(gemm_nn, m, k, n, a, b, c, accumulate);
}

template <class T>
void axpy(int64_t n, T alpha, const T* x, T* y) {
  POSEG_DISPATCH(axpy, n, alpha, x, y);
}

template <class T>
void vadd(int64_t n, const T* a, const T* b, T* y) {
  POSEG_DISPATCH(vadd, n, a, b, y);
}

template <class T>
void vmul(int64_t n, const T* a, const T* b, T* y) {
  POSEG_DISPATCH(vmul, n, a, b, y);
}

template <class T>
void vscale(int64_t n, T alpha, const T* x, T* y) {
  POSEG_DISPATCH(vscale, n, alpha, x, y);
}

template <class T>
T vdot(int64_t n, const T* a, const T* b) {
  POSEG_DISPATCH(vdot, n, a, b);
}

template <class T>
T vsum(int64_t n, const T* x) {
  POSEG_DISPATCH(vsum, n, x);
}

template <class T>
void prelu(int64_t n, T slope, const T* x, T* y) {
  POSEG_DISPATCH(prelu, n, slope, x, y);
}

#undef POSEG_DISPATCH

// Cache-blocked scalar transpose; memory-bound, so no SIMD variant.
template <class T>
void transpose(int rows, int cols, const T* a, T* at) {
  constexpr int B = 32;
  for (int r0 = 0; r0 < rows; r0 += B) {
    int r1 = std::min(rows, r0 + B);
    for (int c0 = 0; c0 < cols; c0 += B) {
      int c1 = std::min(cols, c0 + B);
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) at[int64_t(c) * rows + r] = a[int64_t(r) * cols + c];
    }
  }
}

namespace {

template <class T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace

// The transposed-operand forms reshape into gemm_nn so both ISAs share one
// blocked inner loop. The transpose cost is negligible next to the multiply.
template <class T>
void gemm_nt(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
  auto& buf = scratch<T>();
  buf.resize(size_t(int64_t(k) * n));
  transpose(n, k, b, buf.data());  // b[n,k] -> bt[k,n]
  gemm_nn(m, k, n, a, buf.data(), c, accumulate);
}

template <class T>
void gemm_tn(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate) {
  auto& buf = scratch<T>();
  buf.resize(size_t(int64_t(k) * m));
  transpose(k, m, a, buf.data());  // a[k,m] -> at[m,k]
  gemm_nn(m, k, n, buf.data(), b, c, accumulate);
}

#define POSEG_INSTANTIATE(T)                                                      \
  template void gemm_nn<T>(int, int, int, const T*, const T*, T*, bool);          \
  template void gemm_nt<T>(int, int, int, const T*, const T*, T*, bool);          \
  template void gemm_tn<T>(int, int, int, const T*, const T*, T*, bool);          \
  template void transpose<T>(int, int, const T*, T*);                             \
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

}  // namespace poseg::kernels
