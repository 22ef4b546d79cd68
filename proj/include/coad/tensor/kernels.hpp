#pragma once

#include <cstddef>
#include <cstdint>

// Raw dense kernels on row-major buffers.
//
// Every kernel exists twice: `serial::` is the reference and `parallel::`
// splits independent output rows across OpenMP threads. Both run the same
// per-row loop, so their results are bit-identical for any thread count.
// The unqualified entry points dispatch to the parallel version when the
// problem is large enough and no enclosing parallel region is active.
namespace coad::tensor::kernels {

#define COAD_KERNEL_DECLS                                                                                     \
  /* C[m,n] (+)= A[m,k] * B[k,n] */                                                                            \
  template <typename T>                                                                                        \
  void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);   \
  /* C[m,n] (+)= A[m,k] * B[n,k]^T */                                                                          \
  template <typename T>                                                                                        \
  void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);   \
  /* C[m,n] (+)= A[k,m]^T * B[k,n] */                                                                          \
  template <typename T>                                                                                        \
  void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);   \
  /* Row softmax over entries whose mask byte is nonzero; masked outputs are 0. Returns the index of the     \
     first fully-masked row, or -1. A null mask means every entry is visible. */                              \
  template <typename T>                                                                                        \
  std::ptrdiff_t masked_softmax(const T* x, const std::uint8_t* mask, T* y, std::size_t rows, std::size_t cols); \
  /* Row layer norm without affine parameters. Writes normalized values and 1/sqrt(var + eps) per row. */     \
  template <typename T>                                                                                        \
  void layer_norm(const T* x, T* xhat, T* inv_std, std::size_t rows, std::size_t cols, T eps);

namespace serial {
COAD_KERNEL_DECLS
}  // namespace serial

namespace parallel {
COAD_KERNEL_DECLS
}  // namespace parallel

COAD_KERNEL_DECLS

#undef COAD_KERNEL_DECLS

// Work size (multiply-adds) above which dispatch uses the parallel kernels.
std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t work);

}  // namespace coad::tensor::kernels
