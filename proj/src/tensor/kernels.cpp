#include "coad/tensor/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

#include <omp.h>

namespace coad::tensor::kernels {

namespace {

std::atomic<std::size_t> g_threshold{1u << 16};

// ---- per-row workers shared by the serial and parallel entry points ----

template <typename T>
void gemm_nn_row(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t i, std::size_t k, std::size_t n, bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, T{0});
  const T* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T aip = arow[p];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
  }
}

template <typename T>
void gemm_tn_row(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t i, std::size_t m, std::size_t k, std::size_t n,
                 bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T api = a[p * m + i];
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
  }
}

template <typename T>
bool softmax_row(const T* x, const std::uint8_t* mask, T* y, std::size_t cols) {
  T max_v = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < cols; ++j) {
    if (mask && !mask[j]) continue;
    any = true;
    max_v = std::max(max_v, x[j]);
  }
  if (!any) {
    std::fill(y, y + cols, T{0});
    return false;
  }
  T sum = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    if (mask && !mask[j]) {
      y[j] = 0;
      continue;
    }
    y[j] = std::exp(x[j] - max_v);
    sum += y[j];
  }
  const T inv = T{1} / sum;
  for (std::size_t j = 0; j < cols; ++j) y[j] *= inv;
  return true;
}

template <typename T>
void layer_norm_row(const T* x, T* xhat, T* inv_std, std::size_t cols, T eps) {
  T mean = 0;
  for (std::size_t j = 0; j < cols; ++j) mean += x[j];
  mean /= static_cast<T>(cols);
  T var = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    const T d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<T>(cols);
  const T is = T{1} / std::sqrt(var + eps);
  *inv_std = is;
  for (std::size_t j = 0; j < cols; ++j) xhat[j] = (x[j] - mean) * is;
}

template <typename T>
std::vector<T> transpose(const T* b, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = b[r * cols + c];
  }
  return out;
}

bool use_parallel(std::size_t work) {
  return work >= g_threshold.load(std::memory_order_relaxed) && omp_get_max_threads() > 1 && !omp_in_parallel();
}

}  // namespace

std::size_t parallel_threshold() { return g_threshold.load(); }
void set_parallel_threshold(std::size_t work) { g_threshold.store(work); }

// ---------------------------------------------------------------- serial

namespace serial {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a, b, c, i, k, n, accumulate);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto bt = transpose(b, n, k);
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a, bt.data(), c, i, k, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) gemm_tn_row(a, b, c, i, m, k, n, accumulate);
}

template <typename T>
std::ptrdiff_t masked_softmax(const T* x, const std::uint8_t* mask, T* y, std::size_t rows, std::size_t cols) {
  std::ptrdiff_t bad = -1;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!softmax_row(x + r * cols, mask ? mask + r * cols : nullptr, y + r * cols, cols) && bad < 0) {
      bad = static_cast<std::ptrdiff_t>(r);
    }
  }
  return bad;
}

template <typename T>
void layer_norm(const T* x, T* xhat, T* inv_std, std::size_t rows, std::size_t cols, T eps) {
  for (std::size_t r = 0; r < rows; ++r) layer_norm_row(x + r * cols, xhat + r * cols, inv_std + r, cols, eps);
}

}  // namespace serial

// -------------------------------------------------------------- parallel

namespace parallel {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_nn_row(a, b, c, static_cast<std::size_t>(i), k, n, accumulate);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto bt = transpose(b, n, k);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    gemm_nn_row(a, bt.data(), c, static_cast<std::size_t>(i), k, n, accumulate);
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) gemm_tn_row(a, b, c, static_cast<std::size_t>(i), m, k, n, accumulate);
}

template <typename T>
std::ptrdiff_t masked_softmax(const T* x, const std::uint8_t* mask, T* y, std::size_t rows, std::size_t cols) {
  std::vector<std::uint8_t> ok(rows, 1);
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto row = static_cast<std::size_t>(r);
    ok[row] = softmax_row(x + row * cols, mask ? mask + row * cols : nullptr, y + row * cols, cols) ? 1 : 0;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    if (!ok[r]) return static_cast<std::ptrdiff_t>(r);
  }
  return -1;
}

template <typename T>
void layer_norm(const T* x, T* xhat, T* inv_std, std::size_t rows, std::size_t cols, T eps) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    const auto row = static_cast<std::size_t>(r);
    layer_norm_row(x + row * cols, xhat + row * cols, inv_std + row, cols, eps);
  }
}

}  // namespace parallel

// -------------------------------------------------------------- dispatch

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  use_parallel(m * k * n) ? parallel::gemm_nn(a, b, c, m, k, n, accumulate) : serial::gemm_nn(a, b, c, m, k, n, accumulate);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  use_parallel(m * k * n) ? parallel::gemm_nt(a, b, c, m, k, n, accumulate) : serial::gemm_nt(a, b, c, m, k, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  use_parallel(m * k * n) ? parallel::gemm_tn(a, b, c, m, k, n, accumulate) : serial::gemm_tn(a, b, c, m, k, n, accumulate);
}

template <typename T>
std::ptrdiff_t masked_softmax(const T* x, const std::uint8_t* mask, T* y, std::size_t rows, std::size_t cols) {
  return use_parallel(rows * cols * 8) ? parallel::masked_softmax(x, mask, y, rows, cols)
                                       : serial::masked_softmax(x, mask, y, rows, cols);
}

template <typename T>
void layer_norm(const T* x, T* xhat, T* inv_std, std::size_t rows, std::size_t cols, T eps) {
  use_parallel(rows * cols * 8) ? parallel::layer_norm(x, xhat, inv_std, rows, cols, eps)
                                : serial::layer_norm(x, xhat, inv_std, rows, cols, eps);
}

#define COAD_INSTANTIATE(NS, T)                                                                                  \
  template void NS gemm_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);             \
  template void NS gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);             \
  template void NS gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);             \
  template std::ptrdiff_t NS masked_softmax<T>(const T*, const std::uint8_t*, T*, std::size_t, std::size_t);    \
  template void NS layer_norm<T>(const T*, T*, T*, std::size_t, std::size_t, T);

COAD_INSTANTIATE(serial::, float)
COAD_INSTANTIATE(serial::, double)
COAD_INSTANTIATE(parallel::, float)
COAD_INSTANTIATE(parallel::, double)
COAD_INSTANTIATE(, float)
COAD_INSTANTIATE(, double)

#undef COAD_INSTANTIATE

}  // namespace coad::tensor::kernels
