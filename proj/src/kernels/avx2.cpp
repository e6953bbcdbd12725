// Compiled with -mavx2; only reached through the dispatch table after a CPUID check.
#include <immintrin.h>

#include "expres/kernels.hpp"

namespace expres::kernels::avx2 {
namespace {

inline __m256d load4(const float* p) { return _mm256_cvtps_pd(_mm_loadu_ps(p)); }
inline void store4(float* p, __m256d v) { _mm_storeu_ps(p, _mm256_cvtpd_ps(v)); }

void gemm(const float* a, const float* b, float* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* orow = out + i * n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      __m256d c2 = _mm256_setzero_pd(), c3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(static_cast<double>(arow[p]));
        const float* brow = b + p * n + j;
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(av, load4(brow)));
        c1 = _mm256_add_pd(c1, _mm256_mul_pd(av, load4(brow + 4)));
        c2 = _mm256_add_pd(c2, _mm256_mul_pd(av, load4(brow + 8)));
        c3 = _mm256_add_pd(c3, _mm256_mul_pd(av, load4(brow + 12)));
      }
      store4(orow + j, c0);
      store4(orow + j + 4, c1);
      store4(orow + j + 8, c2);
      store4(orow + j + 12, c3);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(static_cast<double>(arow[p]));
        c0 = _mm256_add_pd(c0, _mm256_mul_pd(av, load4(b + p * n + j)));
      }
      store4(orow + j, c0);
    }
    for (; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * static_cast<double>(b[p * n + j]);
      orow[j] = static_cast<float>(acc);
    }
  }
}

void column_sum(const float* a, std::size_t m, std::size_t n, float* out) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d c = _mm256_setzero_pd();
    for (std::size_t i = 0; i < m; ++i) c = _mm256_add_pd(c, load4(a + i * n + j));
    store4(out + j, c);
  }
  for (; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += static_cast<double>(a[i * n + j]);
    out[j] = static_cast<float>(acc);
  }
}

void add(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void accumulate(const float* x, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] += x[i];
}

void scale(const float* a, float s, float* out, std::size_t n) {
  const __m256 sv = _mm256_set1_ps(s);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), sv));
  for (; i < n; ++i) out[i] = a[i] * s;
}

}  // namespace

const KernelTable kTable{gemm, column_sum, add, accumulate, scale};

}  // namespace expres::kernels::avx2
