// Compiled with -mavx2 -mfma; only reached after a CPUID check.

#include "latentlm/simd/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace latentlm::simd {
namespace {

// 4x8 register block over C, streaming one row of B per step of l. Every
// element is one fused multiply-add chain over l in order, whichever block or
// tail computes it, so a row's result does not depend on its position.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    double* c0 = c + (i + 0) * n;
    double* c1 = c + (i + 1) * n;
    double* c2 = c + (i + 2) * n;
    double* c3 = c + (i + 3) * n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d r00 = _mm256_loadu_pd(c0 + j), r01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d r10 = _mm256_loadu_pd(c1 + j), r11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d r20 = _mm256_loadu_pd(c2 + j), r21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d r30 = _mm256_loadu_pd(c3 + j), r31 = _mm256_loadu_pd(c3 + j + 4);
      for (std::size_t l = 0; l < k; ++l) {
        const double* brow = b + l * n + j;
        const __m256d b0 = _mm256_loadu_pd(brow);
        const __m256d b1 = _mm256_loadu_pd(brow + 4);
        __m256d av = _mm256_broadcast_sd(a0 + l);
        r00 = _mm256_fmadd_pd(av, b0, r00);
        r01 = _mm256_fmadd_pd(av, b1, r01);
        av = _mm256_broadcast_sd(a1 + l);
        r10 = _mm256_fmadd_pd(av, b0, r10);
        r11 = _mm256_fmadd_pd(av, b1, r11);
        av = _mm256_broadcast_sd(a2 + l);
        r20 = _mm256_fmadd_pd(av, b0, r20);
        r21 = _mm256_fmadd_pd(av, b1, r21);
        av = _mm256_broadcast_sd(a3 + l);
        r30 = _mm256_fmadd_pd(av, b0, r30);
        r31 = _mm256_fmadd_pd(av, b1, r31);
      }
      _mm256_storeu_pd(c0 + j, r00), _mm256_storeu_pd(c0 + j + 4, r01);
      _mm256_storeu_pd(c1 + j, r10), _mm256_storeu_pd(c1 + j + 4, r11);
      _mm256_storeu_pd(c2 + j, r20), _mm256_storeu_pd(c2 + j + 4, r21);
      _mm256_storeu_pd(c3 + j, r30), _mm256_storeu_pd(c3 + j + 4, r31);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d r0 = _mm256_loadu_pd(c0 + j), r1 = _mm256_loadu_pd(c1 + j);
      __m256d r2 = _mm256_loadu_pd(c2 + j), r3 = _mm256_loadu_pd(c3 + j);
      for (std::size_t l = 0; l < k; ++l) {
        const __m256d bv = _mm256_loadu_pd(b + l * n + j);
        r0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + l), bv, r0);
        r1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + l), bv, r1);
        r2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + l), bv, r2);
        r3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + l), bv, r3);
      }
      _mm256_storeu_pd(c0 + j, r0), _mm256_storeu_pd(c1 + j, r1);
      _mm256_storeu_pd(c2 + j, r2), _mm256_storeu_pd(c3 + j, r3);
    }
    for (; j < n; ++j) {
      double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t l = 0; l < k; ++l) {
        const double bv = b[l * n + j];
        s0 = std::fma(a0[l], bv, s0);
        s1 = std::fma(a1[l], bv, s1);
        s2 = std::fma(a2[l], bv, s2);
        s3 = std::fma(a3[l], bv, s3);
      }
      c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d r0 = _mm256_loadu_pd(crow + j), r1 = _mm256_loadu_pd(crow + j + 4);
      for (std::size_t l = 0; l < k; ++l) {
        const __m256d av = _mm256_broadcast_sd(arow + l);
        r0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + l * n + j), r0);
        r1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + l * n + j + 4), r1);
      }
      _mm256_storeu_pd(crow + j, r0), _mm256_storeu_pd(crow + j + 4, r1);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d r0 = _mm256_loadu_pd(crow + j);
      for (std::size_t l = 0; l < k; ++l)
        r0 = _mm256_fmadd_pd(_mm256_broadcast_sd(arow + l),
                             _mm256_loadu_pd(b + l * n + j), r0);
      _mm256_storeu_pd(crow + j, r0);
    }
    for (; j < n; ++j) {
      double s = crow[j];
      for (std::size_t l = 0; l < k; ++l) s = std::fma(arow[l], b[l * n + j], s);
      crow[j] = s;
    }
  }
}

void transpose(const double* src, std::size_t rows, std::size_t cols,
               double* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

thread_local std::vector<double> scratch;

double* scratch_buffer(std::size_t n) {
  if (scratch.size() < n) scratch.resize(n);
  return scratch.data();
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  double* bt = scratch_buffer(n * k);
  transpose(b, n, k, bt);
  gemm_nn(m, n, k, a, bt, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  double* at = scratch_buffer(m * k);
  transpose(a, k, m, at);
  gemm_nn(m, n, k, at, b, c, accumulate);
}

double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4),
                         s1);
  }
  for (; i + 4 <= n; i += 4)
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

constexpr KernelTable kAvx2{Isa::kAvx2, "avx2", gemm_nn, gemm_nt,
                            gemm_tn,    dot,    axpy};

}  // namespace

const KernelTable* avx2_kernels() {
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &kAvx2 : nullptr;
}

}  // namespace latentlm::simd

#else

namespace latentlm::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace latentlm::simd

#endif
