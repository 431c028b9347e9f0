#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "poseg/kernels.hpp"
#include "poseg/rng.hpp"

using namespace poseg;
namespace kr = poseg::kernels;

namespace {

// Naive triple-loop reference in double; the oracle for every GEMM form.
std::vector<double> ref_gemm(int m, int k, int n, const std::vector<double>& a,
                             const std::vector<double>& b) {
  std::vector<double> c(size_t(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk)
      for (int j = 0; j < n; ++j) c[size_t(i) * n + j] += a[size_t(i) * k + kk] * b[size_t(kk) * n + j];
  return c;
}

std::vector<double> rand_ints(Rng& rng, size_t n, int lo, int hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = double(rng.uniform_int(lo, hi));
  return v;
}

std::vector<float> rand_floats(Rng& rng, size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.uniform(-1.0, 1.0));
  return v;
}

template <class T>
std::vector<T> cast_vec(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

std::vector<kr::Isa> isas_to_test() {
  std::vector<kr::Isa> isas = {kr::Isa::scalar};
  if (kr::cpu_has_avx2()) isas.push_back(kr::Isa::avx2);
  return isas;
}

}  // namespace

TEST_CASE("gemm forms match a naive oracle exactly on small integer matrices") {
  Rng rng(7);
  for (kr::Isa isa : isas_to_test()) {
    kr::force(isa);
    for (int m : {1, 2, 5, 8}) {
      for (int k : {1, 3, 8, 13}) {
        for (int n : {1, 2, 7, 16}) {
          auto a = rand_ints(rng, size_t(m) * k, -8, 8);
          auto b = rand_ints(rng, size_t(k) * n, -8, 8);
          auto want = ref_gemm(m, k, n, a, b);

          // Integer-valued inputs keep every partial sum exact in both float
          // and double, so all ISAs and summation orders must agree bitwise.
          auto af = cast_vec<float>(a), bf = cast_vec<float>(b);
          std::vector<float> c(size_t(m) * n, -1.f);
          kr::gemm_nn(m, k, n, af.data(), bf.data(), c.data(), false);
          for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == float(want[i]));

          // nt: feed b transposed as [n,k].
          std::vector<float> bt(size_t(n) * k);
          kr::transpose(k, n, bf.data(), bt.data());
          std::vector<float> cnt(size_t(m) * n, -1.f);
          kr::gemm_nt(m, k, n, af.data(), bt.data(), cnt.data(), false);
          for (size_t i = 0; i < cnt.size(); ++i) CHECK(cnt[i] == float(want[i]));

          // tn: feed a transposed as [k,m].
          std::vector<float> at(size_t(k) * m);
          kr::transpose(m, k, af.data(), at.data());
          std::vector<float> ctn(size_t(m) * n, -1.f);
          kr::gemm_tn(m, k, n, at.data(), bf.data(), ctn.data(), false);
          for (size_t i = 0; i < ctn.size(); ++i) CHECK(ctn[i] == float(want[i]));

          // accumulate adds on top of existing contents.
          std::vector<float> acc(size_t(m) * n, 2.f);
          kr::gemm_nn(m, k, n, af.data(), bf.data(), acc.data(), true);
          for (size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == float(want[i]) + 2.f);
        }
      }
    }
  }
}

TEST_CASE("scalar and avx2 gemm agree within accumulation tolerance") {
  if (!kr::cpu_has_avx2()) return;  // nothing to compare on this machine
  Rng rng(11);
  for (int m : {1, 4, 33}) {
    for (int k : {1, 9, 70, 130}) {
      for (int n : {1, 8, 31, 65}) {
        auto a = rand_floats(rng, size_t(m) * k);
        auto b = rand_floats(rng, size_t(k) * n);
        std::vector<float> cs(size_t(m) * n), cv(size_t(m) * n);
        kr::force(kr::Isa::scalar);
        kr::gemm_nn(m, k, n, a.data(), b.data(), cs.data(), false);
        kr::force(kr::Isa::avx2);
        kr::gemm_nn(m, k, n, a.data(), b.data(), cv.data(), false);
        double tol = 16.0 * k * 1.2e-7;  // k-term dot products, |values| <= 1
        for (size_t i = 0; i < cs.size(); ++i) CHECK(std::abs(double(cs[i]) - cv[i]) <= tol);
      }
    }
  }
}

TEST_CASE("elementwise kernels agree across ISAs including vector tails") {
  Rng rng(13);
  for (int64_t n : {1, 2, 7, 8, 9, 31, 64, 67}) {
    auto a = rand_floats(rng, size_t(n));
    auto b = rand_floats(rng, size_t(n));
    for (kr::Isa isa : isas_to_test()) {
      kr::force(isa);
      std::vector<float> add(n), mul(n), scl(n), pre(n), ax(b);
      kr::vadd(n, a.data(), b.data(), add.data());
      kr::vmul(n, a.data(), b.data(), mul.data());
      kr::vscale(n, 0.5f, a.data(), scl.data());
      kr::prelu(n, 0.25f, a.data(), pre.data());
      kr::axpy(n, 2.f, a.data(), ax.data());
      for (int64_t i = 0; i < n; ++i) {
        CHECK(add[i] == a[i] + b[i]);
        CHECK(mul[i] == a[i] * b[i]);
        CHECK(scl[i] == 0.5f * a[i]);
        CHECK(pre[i] == (a[i] >= 0 ? a[i] : 0.25f * a[i]));
        CHECK(ax[i] == b[i] + 2.f * a[i]);
      }
      double ds = 0, ss = 0;
      for (int64_t i = 0; i < n; ++i) ds += double(a[i]) * b[i], ss += a[i];
      CHECK(std::abs(kr::vdot(n, a.data(), b.data()) - ds) <= 1e-5 * (1 + std::abs(ds)));
      CHECK(std::abs(kr::vsum(n, a.data()) - ss) <= 1e-5 * (1 + std::abs(ss)));
    }
  }
}

TEST_CASE("transpose round-trips and force/active reflect the requested ISA") {
  Rng rng(17);
  auto a = rand_floats(rng, 7 * 13);
  std::vector<float> at(13 * 7), back(7 * 13);
  kr::transpose(7, 13, a.data(), at.data());
  kr::transpose(13, 7, at.data(), back.data());
  CHECK(back == a);
  CHECK(at[size_t(3) * 7 + 2] == a[size_t(2) * 13 + 3]);

  kr::force(kr::Isa::scalar);
  CHECK(kr::active() == kr::Isa::scalar);
  if (kr::cpu_has_avx2()) {
    kr::force(kr::Isa::avx2);
    CHECK(kr::active() == kr::Isa::avx2);
  }
}
