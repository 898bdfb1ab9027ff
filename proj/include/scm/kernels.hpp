#pragma once

// Dense double-precision inner loops used by every tensor op.
//
// Two implementations exist: a portable scalar reference and an AVX2/FMA
// variant compiled in its own translation unit. `active()` picks one at
// startup from CPUID; SCM_KERNELS=scalar|avx2 in the environment overrides
// the choice. All gemm entry points ACCUMULATE into C.

#include <cstddef>
#include <string_view>
#include <vector>

namespace scm::kernels {

struct KernelTable {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c);
};

const KernelTable& scalar_kernels();

/// nullptr when the variant was not compiled in or the CPU lacks AVX2+FMA.
const KernelTable* avx2_kernels();

/// Every variant usable on this machine, scalar first.
std::vector<const KernelTable*> available();

/// The table all tensor ops dispatch through.
const KernelTable& active();

/// Force a variant by name ("scalar", "avx2"). Returns false if unavailable.
bool select(std::string_view name);

}  // namespace scm::kernels
