#pragma once
// Internal entry points for each ISA. Only plain pointer signatures cross the
// translation-unit boundary so no inline templates get compiled with AVX2
// flags and leak into generic code.

#include <cstddef>

namespace krutrim::simd::detail {

#define KRUTRIM_DECLARE_KERNELS(ns, T)                                                        \
  namespace ns {                                                                              \
  T dot(const T* a, const T* b, std::size_t n);                                               \
  void axpy(T alpha, const T* x, T* y, std::size_t n);                                        \
  void matmul_nt(const T* in, const T* w, T* out, std::size_t rows, std::size_t inner,        \
                 std::size_t cols);                                                           \
  void matmul_nn_acc(const T* dout, const T* w, T* din, std::size_t rows, std::size_t inner,  \
                     std::size_t cols);                                                       \
  void matmul_tn_acc(const T* dout, const T* in, T* dw, std::size_t rows, std::size_t inner,  \
                     std::size_t cols);                                                       \
  }

KRUTRIM_DECLARE_KERNELS(scalar, float)
KRUTRIM_DECLARE_KERNELS(scalar, double)
KRUTRIM_DECLARE_KERNELS(avx2, float)
KRUTRIM_DECLARE_KERNELS(avx2, double)

#undef KRUTRIM_DECLARE_KERNELS

bool avx2_compiled();

}  // namespace krutrim::simd::detail
