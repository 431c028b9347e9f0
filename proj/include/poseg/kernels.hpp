#pragma once

#include <cstdint>

// Numeric inner loops behind the tensor ops. Every entry point has a scalar
// reference implementation and (on x86-64) an AVX2+FMA variant; the active one
// is picked once at startup from the CPU and the POSEG_KERNELS env var, and
// can be forced from tests. The two variants are equivalence-tested against
// each other, so the scalar path is the semantics and AVX2 is an accelerator.
namespace poseg::kernels {

enum class Isa { scalar, avx2 };

const char* name(Isa isa);
bool cpu_has_avx2();
Isa active();
// Force a specific implementation (tests, benchmarking). Throws poseg::Error
// if the requested ISA is not available on this machine/build.
void force(Isa isa);

// c[m,n] = a[m,k] * b[k,n], overwriting c unless `accumulate`.
template <class T>
void gemm_nn(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate);

// c[m,n] = a[m,k] * b[n,k]^T  (b stored row-major as n rows of length k).
template <class T>
void gemm_nt(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate);

// c[m,n] = a[k,m]^T * b[k,n].
template <class T>
void gemm_tn(int m, int k, int n, const T* a, const T* b, T* c, bool accumulate);

// at[c,r] = a[r,c].
template <class T>
void transpose(int rows, int cols, const T* a, T* at);

// y += alpha * x
template <class T>
void axpy(int64_t n, T alpha, const T* x, T* y);

template <class T>
void vadd(int64_t n, const T* a, const T* b, T* y);

template <class T>
void vmul(int64_t n, const T* a, const T* b, T* y);

// y = alpha * x
template <class T>
void vscale(int64_t n, T alpha, const T* x, T* y);

template <class T>
T vdot(int64_t n, const T* a, const T* b);

template <class T>
T vsum(int64_t n, const T* x);

// y = x >= 0 ? x : slope * x
template <class T>
void prelu(int64_t n, T slope, const T* x, T* y);

}  // namespace poseg::kernels
