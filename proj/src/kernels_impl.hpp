#pragma once

#include <cstdint>

// Internal declarations shared by the dispatch layer and the per-ISA
// translation units. Not part of the public API.
namespace poseg::kernels {

#define POSEG_KERNEL_DECLS                                                          \
  template <class T>                                                                \
  void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate); \
  template <class T>                                                                \
  void axpy(int64_t n, T alpha, const T* x, T* y);                                  \
  template <class T>                                                                \
  void vadd(int64_t n, const T* a, const T* b, T* y);                               \
  template <class T>                                                                \
  void vmul(int64_t n, const T* a, const T* b, T* y);                               \
  template <class T>                                                                \
  void vscale(int64_t n, T alpha, const T* x, T* y);                                \
  template <class T>                                                                \
  T vdot(int64_t n, const T* a, const T* b);                                        \
  template <class T>                                                                \
  T vsum(int64_t n, const T* x);                                                    \
  template <class T>                                                                \
  void prelu(int64_t n, T slope, const T* x, T* y);

namespace scalar_impl {
POSEG_KERNEL_DECLS
}

namespace avx2_impl {
POSEG_KERNEL_DECLS
}

#undef POSEG_KERNEL_DECLS

// Both ISAs walk the same k-blocked axpy-form GEMM so results differ only by
// SIMD lane summation order within a row pass.
inline constexpr int kGemmKBlock = 64;

}  // namespace poseg::kernels
