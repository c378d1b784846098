// AVX2 + FMA kernels. This translation unit is the only one compiled with
// -mavx2 -mfma; callers reach it through the dispatch table after a CPUID
// check, so nothing here may be inlined into generic code.

#include "kernels_impl.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace krutrim::simd::detail {

bool avx2_compiled() { return true; }

namespace avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

inline float dot_f(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline double dot_d(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy_f(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

inline void axpy_d(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Four output columns per pass so each input load feeds four FMAs.
inline void matmul_nt_f(const float* in, const float* w, float* out, std::size_t rows,
                        std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = in + r * inner;
    float* y = out + r * cols;
    std::size_t o = 0;
    for (; o + 4 <= cols; o += 4) {
      const float* w0 = w + (o + 0) * inner;
      const float* w1 = w + (o + 1) * inner;
      const float* w2 = w + (o + 2) * inner;
      const float* w3 = w + (o + 3) * inner;
      __m256 a0 = _mm256_setzero_ps(), a1 = _mm256_setzero_ps();
      __m256 a2 = _mm256_setzero_ps(), a3 = _mm256_setzero_ps();
      std::size_t k = 0;
      for (; k + 8 <= inner; k += 8) {
        const __m256 xv = _mm256_loadu_ps(x + k);
        a0 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w0 + k), a0);
        a1 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w1 + k), a1);
        a2 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w2 + k), a2);
        a3 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(w3 + k), a3);
      }
      float s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
      for (; k < inner; ++k) {
        s0 += x[k] * w0[k];
        s1 += x[k] * w1[k];
        s2 += x[k] * w2[k];
        s3 += x[k] * w3[k];
      }
      y[o] = s0;
      y[o + 1] = s1;
      y[o + 2] = s2;
      y[o + 3] = s3;
    }
    for (; o < cols; ++o) y[o] = dot_f(x, w + o * inner, inner);
  }
}

inline void matmul_nt_d(const double* in, const double* w, double* out, std::size_t rows,
                        std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in + r * inner;
    double* y = out + r * cols;
    std::size_t o = 0;
    for (; o + 4 <= cols; o += 4) {
      const double* w0 = w + (o + 0) * inner;
      const double* w1 = w + (o + 1) * inner;
      const double* w2 = w + (o + 2) * inner;
      const double* w3 = w + (o + 3) * inner;
      __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
      __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
      std::size_t k = 0;
      for (; k + 4 <= inner; k += 4) {
        const __m256d xv = _mm256_loadu_pd(x + k);
        a0 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w0 + k), a0);
        a1 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w1 + k), a1);
        a2 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w2 + k), a2);
        a3 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(w3 + k), a3);
      }
      double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
      for (; k < inner; ++k) {
        s0 += x[k] * w0[k];
        s1 += x[k] * w1[k];
        s2 += x[k] * w2[k];
        s3 += x[k] * w3[k];
      }
      y[o] = s0;
      y[o + 1] = s1;
      y[o + 2] = s2;
      y[o + 3] = s3;
    }
    for (; o < cols; ++o) y[o] = dot_d(x, w + o * inner, inner);
  }
}

}  // namespace

float dot(const float* a, const float* b, std::size_t n) { return dot_f(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { return dot_d(a, b, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) { axpy_f(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { axpy_d(alpha, x, y, n); }

void matmul_nt(const float* in, const float* w, float* out, std::size_t rows, std::size_t inner,
               std::size_t cols) {
  matmul_nt_f(in, w, out, rows, inner, cols);
}
void matmul_nt(const double* in, const double* w, double* out, std::size_t rows,
               std::size_t inner, std::size_t cols) {
  matmul_nt_d(in, w, out, rows, inner, cols);
}

void matmul_nn_acc(const float* dout, const float* w, float* din, std::size_t rows,
                   std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < cols; ++o) {
      const float g = dout[r * cols + o];
      if (g != 0.0f) axpy_f(g, w + o * inner, din + r * inner, inner);
    }
}
void matmul_nn_acc(const double* dout, const double* w, double* din, std::size_t rows,
                   std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < cols; ++o) {
      const double g = dout[r * cols + o];
      if (g != 0.0) axpy_d(g, w + o * inner, din + r * inner, inner);
    }
}

void matmul_tn_acc(const float* dout, const float* in, float* dw, std::size_t rows,
                   std::size_t inner, std::size_t cols) {
  for (std::size_t o = 0; o < cols; ++o)
    for (std::size_t r = 0; r < rows; ++r) {
      const float g = dout[r * cols + o];
      if (g != 0.0f) axpy_f(g, in + r * inner, dw + o * inner, inner);
    }
}
void matmul_tn_acc(const double* dout, const double* in, double* dw, std::size_t rows,
                   std::size_t inner, std::size_t cols) {
  for (std::size_t o = 0; o < cols; ++o)
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = dout[r * cols + o];
      if (g != 0.0) axpy_d(g, in + r * inner, dw + o * inner, inner);
    }
}

}  // namespace avx2
}  // namespace krutrim::simd::detail

#else  // compiler cannot target AVX2: keep the symbols, never select them

namespace krutrim::simd::detail {

bool avx2_compiled() { return false; }

namespace avx2 {
float dot(const float* a, const float* b, std::size_t n) { return scalar::dot(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { return scalar::dot(a, b, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) { scalar::axpy(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  scalar::axpy(alpha, x, y, n);
}
void matmul_nt(const float* in, const float* w, float* out, std::size_t rows, std::size_t inner,
               std::size_t cols) {
  scalar::matmul_nt(in, w, out, rows, inner, cols);
}
void matmul_nt(const double* in, const double* w, double* out, std::size_t rows,
               std::size_t inner, std::size_t cols) {
  scalar::matmul_nt(in, w, out, rows, inner, cols);
}
void matmul_nn_acc(const float* dout, const float* w, float* din, std::size_t rows,
                   std::size_t inner, std::size_t cols) {
  scalar::matmul_nn_acc(dout, w, din, rows, inner, cols);
}
void matmul_nn_acc(const double* dout, const double* w, double* din, std::size_t rows,
                   std::size_t inner, std::size_t cols) {
  scalar::matmul_nn_acc(dout, w, din, rows, inner, cols);
}
void matmul_tn_acc(const float* dout, const float* in, float* dw, std::size_t rows,
                   std::size_t inner, std::size_t cols) {
  scalar::matmul_tn_acc(dout, in, dw, rows, inner, cols);
}
void matmul_tn_acc(const double* dout, const double* in, double* dw, std::size_t rows,
                   std::size_t inner, std::size_t cols) {
  scalar::matmul_tn_acc(dout, in, dw, rows, inner, cols);
}
}  // namespace avx2
}  // namespace krutrim::simd::detail

#endif
