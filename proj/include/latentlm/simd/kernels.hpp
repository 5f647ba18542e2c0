#pragma once

// Dense float64 kernels used by every tensor operation.
//
// Each kernel has a scalar reference implementation and, on x86-64, an
// AVX2+FMA variant compiled in its own translation unit. The variant is
// chosen once at runtime from CPUID; LATENTLM_SIMD=scalar forces the
// reference path. The two paths differ only in summation order.

#include <cstddef>
#include <string_view>

namespace latentlm::simd {

enum class Isa { kScalar, kAvx2 };

// All matrices are row-major. When `accumulate` is false C is overwritten.
//   gemm_nn: C[m,n] (+)= A[m,k] * B[k,n]
//   gemm_nt: C[m,n] (+)= A[m,k] * B[n,k]^T
//   gemm_tn: C[m,n] (+)= A[k,m]^T * B[k,n]
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, const double* b, double* c,
                        bool accumulate);
using DotFn = double (*)(const double* x, const double* y, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y,
                        std::size_t n);

struct KernelTable {
  Isa isa;
  std::string_view name;
  GemmFn gemm_nn;
  GemmFn gemm_nt;
  GemmFn gemm_tn;
  DotFn dot;
  AxpyFn axpy;
};

const KernelTable& scalar_kernels();

/// Returns nullptr when the AVX2 variant was not compiled in or the CPU
/// lacks AVX2/FMA.
const KernelTable* avx2_kernels();

/// The table used by tensor operations.
const KernelTable& active();

/// Overrides the runtime choice. Returns false if `isa` is unavailable.
bool select(Isa isa);

}  // namespace latentlm::simd
