#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#if defined(__AVX512F__) || defined(__FMA__)
#include <immintrin.h>
#endif

namespace codedlf::kernels {

namespace {

// Every output element is one fused multiply-add chain over k in ascending
// order. Vector and scalar paths compute the same chain, so results do not
// depend on m, on the row blocking, or on which path handles a column.

[[maybe_unused]] void scalar_cols(std::size_t rows, std::size_t k, std::size_t n, std::size_t j0,
                                  std::size_t j1, const double* a, const double* b, double* c,
                                  bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = j0; j < j1; ++j) {
      double acc = accumulate ? c[r * n + j] : 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc = std::fma(a[r * k + kk], b[kk * n + j], acc);
      c[r * n + j] = acc;
    }
  }
}

#if defined(__AVX512F__)

template <int MR>
void row_block(std::size_t k, std::size_t n, const double* a, const double* b, double* c,
               bool accumulate) {
  std::size_t j = 0;
  for (; j < n; j += 16) {
    const std::size_t cols = std::min<std::size_t>(16, n - j);
    const __mmask8 m0 = cols >= 8 ? 0xFF : static_cast<__mmask8>((1u << cols) - 1);
    const __mmask8 m1 = cols >= 16 ? 0xFF : cols > 8 ? static_cast<__mmask8>((1u << (cols - 8)) - 1) : 0;
    __m512d acc[MR][2];
    for (int r = 0; r < MR; ++r) {
      if (accumulate) {
        acc[r][0] = _mm512_maskz_loadu_pd(m0, c + r * n + j);
        acc[r][1] = _mm512_maskz_loadu_pd(m1, c + r * n + j + 8);
      } else {
        acc[r][0] = _mm512_setzero_pd();
        acc[r][1] = _mm512_setzero_pd();
      }
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n + j;
      const __m512d b0 = _mm512_maskz_loadu_pd(m0, brow);
      const __m512d b1 = _mm512_maskz_loadu_pd(m1, brow + 8);
      for (int r = 0; r < MR; ++r) {
        const __m512d ar = _mm512_set1_pd(a[r * k + kk]);
        acc[r][0] = _mm512_fmadd_pd(ar, b0, acc[r][0]);
        acc[r][1] = _mm512_fmadd_pd(ar, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < MR; ++r) {
      _mm512_mask_storeu_pd(c + r * n + j, m0, acc[r][0]);
      _mm512_mask_storeu_pd(c + r * n + j + 8, m1, acc[r][1]);
    }
  }
}

constexpr int kMr = 6;

#elif defined(__FMA__)

template <int MR>
void row_block(std::size_t k, std::size_t n, const double* a, const double* b, double* c,
               bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc[MR][2];
    for (int r = 0; r < MR; ++r) {
      acc[r][0] = accumulate ? _mm256_loadu_pd(c + r * n + j) : _mm256_setzero_pd();
      acc[r][1] = accumulate ? _mm256_loadu_pd(c + r * n + j + 4) : _mm256_setzero_pd();
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double* brow = b + kk * n + j;
      const __m256d b0 = _mm256_loadu_pd(brow);
      const __m256d b1 = _mm256_loadu_pd(brow + 4);
      for (int r = 0; r < MR; ++r) {
        const __m256d ar = _mm256_set1_pd(a[r * k + kk]);
        acc[r][0] = _mm256_fmadd_pd(ar, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_pd(ar, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < MR; ++r) {
      _mm256_storeu_pd(c + r * n + j, acc[r][0]);
      _mm256_storeu_pd(c + r * n + j + 4, acc[r][1]);
    }
  }
  if (j < n) scalar_cols(MR, k, n, j, n, a, b, c, accumulate);
}

constexpr int kMr = 4;

#else

template <int MR>
void row_block(std::size_t k, std::size_t n, const double* a, const double* b, double* c,
               bool accumulate) {
  scalar_cols(MR, k, n, 0, n, a, b, c, accumulate);
}

constexpr int kMr = 4;

#endif

}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + kMr <= m; i += kMr) row_block<kMr>(k, n, a + i * k, b, c + i * n, accumulate);
  for (; i < m; ++i) row_block<1>(k, n, a + i * k, b, c + i * n, accumulate);
}

void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* g,
                 double* c) {
  // Row-outer so the small C[K,N] stays in cache while A and G stream once.
  // Each C element accumulates its m terms in ascending row order.
#if defined(__AVX512F__)
  constexpr std::size_t kRows = 8;
  std::size_t i = 0;
  auto rows_block = [&](std::size_t i0, std::size_t rows) {
    for (std::size_t j = 0; j < n; j += 8) {
      const std::size_t cols = std::min<std::size_t>(8, n - j);
      const __mmask8 mask = cols >= 8 ? 0xFF : static_cast<__mmask8>((1u << cols) - 1);
      __m512d gr[kRows];
      for (std::size_t r = 0; r < rows; ++r) gr[r] = _mm512_maskz_loadu_pd(mask, g + (i0 + r) * n + j);
      for (std::size_t kk = 0; kk < k; ++kk) {
        double* crow = c + kk * n + j;
        __m512d acc = _mm512_maskz_loadu_pd(mask, crow);
        for (std::size_t r = 0; r < rows; ++r) {
          acc = _mm512_fmadd_pd(_mm512_set1_pd(a[(i0 + r) * k + kk]), gr[r], acc);
        }
        _mm512_mask_storeu_pd(crow, mask, acc);
      }
    }
  };
  for (; i + kRows <= m; i += kRows) rows_block(i, kRows);
  if (i < m) rows_block(i, m - i);
#else
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      double* crow = c + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = std::fma(arow[kk], grow[j], crow[j]);
    }
  }
#endif
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  constexpr std::size_t kB = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kB)
    for (std::size_t c0 = 0; c0 < cols; c0 += kB)
      for (std::size_t r = r0; r < std::min(rows, r0 + kB); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + kB); ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace codedlf::kernels
