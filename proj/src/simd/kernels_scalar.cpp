// Reference kernels: straightforward loops with a fixed left-to-right
// summation order. Every SIMD variant is tested against these.

#include "kernels_impl.hpp"

namespace krutrim::simd::detail::scalar {
namespace {

template <class T>
T dot_impl(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
void axpy_impl(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void matmul_nt_impl(const T* in, const T* w, T* out, std::size_t rows, std::size_t inner,
                    std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = in + r * inner;
    for (std::size_t o = 0; o < cols; ++o) out[r * cols + o] = dot_impl(x, w + o * inner, inner);
  }
}

template <class T>
void matmul_nn_acc_impl(const T* dout, const T* w, T* din, std::size_t rows, std::size_t inner,
                        std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < cols; ++o) {
      const T g = dout[r * cols + o];
      if (g != T(0)) axpy_impl(g, w + o * inner, din + r * inner, inner);
    }
  }
}

template <class T>
void matmul_tn_acc_impl(const T* dout, const T* in, T* dw, std::size_t rows, std::size_t inner,
                        std::size_t cols) {
  for (std::size_t o = 0; o < cols; ++o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T g = dout[r * cols + o];
      if (g != T(0)) axpy_impl(g, in + r * inner, dw + o * inner, inner);
    }
  }
}

}  // namespace

#define KRUTRIM_DEFINE_SCALAR(T)                                                              \
  T dot(const T* a, const T* b, std::size_t n) { return dot_impl(a, b, n); }                  \
  void axpy(T alpha, const T* x, T* y, std::size_t n) { axpy_impl(alpha, x, y, n); }          \
  void matmul_nt(const T* in, const T* w, T* out, std::size_t rows, std::size_t inner,        \
                 std::size_t cols) {                                                          \
    matmul_nt_impl(in, w, out, rows, inner, cols);                                            \
  }                                                                                           \
  void matmul_nn_acc(const T* dout, const T* w, T* din, std::size_t rows, std::size_t inner,  \
                     std::size_t cols) {                                                      \
    matmul_nn_acc_impl(dout, w, din, rows, inner, cols);                                      \
  }                                                                                           \
  void matmul_tn_acc(const T* dout, const T* in, T* dw, std::size_t rows, std::size_t inner,  \
                     std::size_t cols) {                                                      \
    matmul_tn_acc_impl(dout, in, dw, rows, inner, cols);                                      \
  }

KRUTRIM_DEFINE_SCALAR(float)
KRUTRIM_DEFINE_SCALAR(double)

#undef KRUTRIM_DEFINE_SCALAR

}  // namespace krutrim::simd::detail::scalar
