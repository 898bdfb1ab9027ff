// AVX2 + FMA variant. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after the runtime CPU check in dispatch.cpp.
#include <immintrin.h>

#include "scm/kernels.hpp"

namespace scm::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4)
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Row panel of C kept in registers while streaming over the shared dimension.
// `a_at(p)` yields the scalar multiplier for step p.
template <typename ACoef>
inline void panel_update(std::size_t n, std::size_t k, ACoef a_at, const double* b, double* ci) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256d c0 = _mm256_loadu_pd(ci + j);
    __m256d c1 = _mm256_loadu_pd(ci + j + 4);
    __m256d c2 = _mm256_loadu_pd(ci + j + 8);
    __m256d c3 = _mm256_loadu_pd(ci + j + 12);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d va = _mm256_set1_pd(a_at(p));
      const double* bp = b + p * n + j;
      c0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(bp), c0);
      c1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + 4), c1);
      c2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + 8), c2);
      c3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + 12), c3);
    }
    _mm256_storeu_pd(ci + j, c0);
    _mm256_storeu_pd(ci + j + 4, c1);
    _mm256_storeu_pd(ci + j + 8, c2);
    _mm256_storeu_pd(ci + j + 12, c3);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = _mm256_loadu_pd(ci + j);
    for (std::size_t p = 0; p < k; ++p)
      c0 = _mm256_fmadd_pd(_mm256_set1_pd(a_at(p)), _mm256_loadu_pd(b + p * n + j), c0);
    _mm256_storeu_pd(ci + j, c0);
  }
  for (; j < n; ++j) {
    double s = ci[j];
    for (std::size_t p = 0; p < k; ++p) s += a_at(p) * b[p * n + j];
    ci[j] = s;
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    panel_update(n, k, [ai](std::size_t p) { return ai[p]; }, b, c + i * n);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i;
    panel_update(n, k, [ai, m](std::size_t p) { return ai[p * m]; }, b, c + i * n);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d va = _mm256_loadu_pd(ai + p);
        s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; p < k; ++p) {
        r0 += ai[p] * b0[p];
        r1 += ai[p] * b1[p];
        r2 += ai[p] * b2[p];
        r3 += ai[p] * b3[p];
      }
      ci[j] += r0;
      ci[j + 1] += r1;
      ci[j + 2] += r2;
      ci[j + 3] += r3;
    }
    for (; j < n; ++j) ci[j] += dot(ai, b + j * k, k);
  }
}

}  // namespace

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{"avx2", dot, axpy, gemm_nn, gemm_nt, gemm_tn};
  return table;
}

}  // namespace scm::kernels
