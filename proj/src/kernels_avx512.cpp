// AVX-512F variants. Compiled with -mavx512f -mfma.

#include "hubrouter/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace hubrouter::kernels {
namespace {

double dot_avx512(const double* x, const double* y, std::size_t n) {
  __m512d s0 = _mm512_setzero_pd();
  __m512d s1 = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i), s0);
    s1 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i + 8), _mm512_loadu_pd(y + i + 8), s1);
  }
  if (i + 8 <= n) {
    s0 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i), s0);
    i += 8;
  }
  if (i < n) {
    const __mmask8 mask = static_cast<__mmask8>((1u << (n - i)) - 1u);
    s1 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(mask, x + i), _mm512_maskz_loadu_pd(mask, y + i), s1);
  }
  return _mm512_reduce_add_pd(_mm512_add_pd(s0, s1));
}

void axpy_avx512(double a, const double* x, double* y, std::size_t n) {
  const __m512d av = _mm512_set1_pd(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm512_storeu_pd(y + i, _mm512_fmadd_pd(av, _mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
  }
  if (i < n) {
    const __mmask8 mask = static_cast<__mmask8>((1u << (n - i)) - 1u);
    const __m512d yv = _mm512_maskz_loadu_pd(mask, y + i);
    _mm512_mask_storeu_pd(y + i, mask, _mm512_fmadd_pd(av, _mm512_maskz_loadu_pd(mask, x + i), yv));
  }
}

inline __mmask8 tail_mask(std::size_t count) {
  return static_cast<__mmask8>((1u << count) - 1u);
}

inline void gemm_nn_row(const double* arow, const double* b, double* crow, std::size_t k,
                        std::size_t n, std::size_t j) {
  for (; j + 16 <= n; j += 16) {
    __m512d c0 = _mm512_loadu_pd(crow + j);
    __m512d c1 = _mm512_loadu_pd(crow + j + 8);
    for (std::size_t p = 0; p < k; ++p) {
      const __m512d av = _mm512_set1_pd(arow[p]);
      c0 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + p * n + j), c0);
      c1 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b + p * n + j + 8), c1);
    }
    _mm512_storeu_pd(crow + j, c0);
    _mm512_storeu_pd(crow + j + 8, c1);
  }
  while (j < n) {
    const std::size_t w = std::min<std::size_t>(8, n - j);
    const __mmask8 mask = tail_mask(w);
    __m512d c0 = _mm512_maskz_loadu_pd(mask, crow + j);
    for (std::size_t p = 0; p < k; ++p) {
      c0 = _mm512_fmadd_pd(_mm512_set1_pd(arow[p]), _mm512_maskz_loadu_pd(mask, b + p * n + j), c0);
    }
    _mm512_mask_storeu_pd(crow + j, mask, c0);
    j += w;
  }
}

void gemm_nn_avx512(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    double* c0r = c + (i + 0) * n;
    double* c1r = c + (i + 1) * n;
    double* c2r = c + (i + 2) * n;
    double* c3r = c + (i + 3) * n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m512d c00 = _mm512_loadu_pd(c0r + j), c01 = _mm512_loadu_pd(c0r + j + 8);
      __m512d c10 = _mm512_loadu_pd(c1r + j), c11 = _mm512_loadu_pd(c1r + j + 8);
      __m512d c20 = _mm512_loadu_pd(c2r + j), c21 = _mm512_loadu_pd(c2r + j + 8);
      __m512d c30 = _mm512_loadu_pd(c3r + j), c31 = _mm512_loadu_pd(c3r + j + 8);
      for (std::size_t p = 0; p < k; ++p) {
        const __m512d b0 = _mm512_loadu_pd(b + p * n + j);
        const __m512d b1 = _mm512_loadu_pd(b + p * n + j + 8);
        __m512d av = _mm512_set1_pd(a0[p]);
        c00 = _mm512_fmadd_pd(av, b0, c00);
        c01 = _mm512_fmadd_pd(av, b1, c01);
        av = _mm512_set1_pd(a1[p]);
        c10 = _mm512_fmadd_pd(av, b0, c10);
        c11 = _mm512_fmadd_pd(av, b1, c11);
        av = _mm512_set1_pd(a2[p]);
        c20 = _mm512_fmadd_pd(av, b0, c20);
        c21 = _mm512_fmadd_pd(av, b1, c21);
        av = _mm512_set1_pd(a3[p]);
        c30 = _mm512_fmadd_pd(av, b0, c30);
        c31 = _mm512_fmadd_pd(av, b1, c31);
      }
      _mm512_storeu_pd(c0r + j, c00);
      _mm512_storeu_pd(c0r + j + 8, c01);
      _mm512_storeu_pd(c1r + j, c10);
      _mm512_storeu_pd(c1r + j + 8, c11);
      _mm512_storeu_pd(c2r + j, c20);
      _mm512_storeu_pd(c2r + j + 8, c21);
      _mm512_storeu_pd(c3r + j, c30);
      _mm512_storeu_pd(c3r + j + 8, c31);
    }
    if (j < n) {
      gemm_nn_row(a0, b, c0r, k, n, j);
      gemm_nn_row(a1, b, c1r, k, n, j);
      gemm_nn_row(a2, b, c2r, k, n, j);
      gemm_nn_row(a3, b, c3r, k, n, j);
    }
  }
  for (; i < m; ++i) gemm_nn_row(a + i * k, b, c + i * n, k, n, 0);
}

void gemm_nt_avx512(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate) {
  const std::size_t kfull = k & ~std::size_t{7};
  const __mmask8 kmask = tail_mask(k - kfull);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + (j + 0) * k;
      const double* b1 = b + (j + 1) * k;
      const double* b2 = b + (j + 2) * k;
      const double* b3 = b + (j + 3) * k;
      __m512d s0 = _mm512_setzero_pd(), s1 = _mm512_setzero_pd();
      __m512d s2 = _mm512_setzero_pd(), s3 = _mm512_setzero_pd();
      for (std::size_t p = 0; p < kfull; p += 8) {
        const __m512d av = _mm512_loadu_pd(arow + p);
        s0 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b0 + p), s0);
        s1 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b1 + p), s1);
        s2 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b2 + p), s2);
        s3 = _mm512_fmadd_pd(av, _mm512_loadu_pd(b3 + p), s3);
      }
      if (kfull < k) {
        const __m512d av = _mm512_maskz_loadu_pd(kmask, arow + kfull);
        s0 = _mm512_fmadd_pd(av, _mm512_maskz_loadu_pd(kmask, b0 + kfull), s0);
        s1 = _mm512_fmadd_pd(av, _mm512_maskz_loadu_pd(kmask, b1 + kfull), s1);
        s2 = _mm512_fmadd_pd(av, _mm512_maskz_loadu_pd(kmask, b2 + kfull), s2);
        s3 = _mm512_fmadd_pd(av, _mm512_maskz_loadu_pd(kmask, b3 + kfull), s3);
      }
      const double r[4] = {_mm512_reduce_add_pd(s0), _mm512_reduce_add_pd(s1),
                           _mm512_reduce_add_pd(s2), _mm512_reduce_add_pd(s3)};
      for (int q = 0; q < 4; ++q) crow[j + q] = accumulate ? crow[j + q] + r[q] : r[q];
    }
    for (; j < n; ++j) {
      const double s = dot_avx512(arow, b + j * k, k);
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

void gemm_tn_avx512(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate) {
  thread_local std::vector<double> at;
  at.resize(m * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * m + i];
  gemm_nn_avx512(at.data(), b, c, m, k, n, accumulate);
}

void softmax_rows_avx512(double* x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = x + r * cols;
    __m512d vm = _mm512_set1_pd(-INFINITY);
    std::size_t j = 0;
    for (; j + 8 <= cols; j += 8) vm = _mm512_max_pd(vm, _mm512_loadu_pd(row + j));
    double mx = _mm512_reduce_max_pd(vm);
    for (; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    const __m512d iv = _mm512_set1_pd(inv);
    for (j = 0; j + 8 <= cols; j += 8) _mm512_storeu_pd(row + j, _mm512_mul_pd(_mm512_loadu_pd(row + j), iv));
    for (; j < cols; ++j) row[j] *= inv;
  }
}

}  // namespace

const KernelTable& avx512_table() {
  static const KernelTable table{Isa::Avx512,    "avx512",       dot_avx512,     axpy_avx512,
                                 gemm_nn_avx512, gemm_nt_avx512, gemm_tn_avx512, softmax_rows_avx512};
  return table;
}

}  // namespace hubrouter::kernels
