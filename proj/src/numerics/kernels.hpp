// Row-major GEMM kernels. Each output element accumulates its products in
// increasing k order, starting from the existing value of C, so results do
// not depend on blocking. Blocks of C stay in registers while
// streaming over k.

#pragma once

#include <cstddef>
#include <vector>

namespace xst::kernels {

namespace detail {

// One R x W block of C kept in registers across the whole k loop
// (R is 4 or 1).
template <std::size_t R, std::size_t W, typename T>
inline void tile(std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col, const T* b, T* c) {
  T acc[R][W];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t q = 0; q < W; ++q) acc[r][q] = c[r * n + q];
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    const T* acol = a + p * a_col;
    if constexpr (R == 4) {
      const T a0 = acol[0];
      const T a1 = acol[a_row];
      const T a2 = acol[2 * a_row];
      const T a3 = acol[3 * a_row];
      for (std::size_t q = 0; q < W; ++q) {
        const T bv = brow[q];
        acc[0][q] += a0 * bv;
        acc[1][q] += a1 * bv;
        acc[2][q] += a2 * bv;
        acc[3][q] += a3 * bv;
      }
    } else {
      const T a0 = acol[0];
      for (std::size_t q = 0; q < W; ++q) acc[0][q] += a0 * brow[q];
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t q = 0; q < W; ++q) c[r * n + q] = acc[r][q];
}

template <std::size_t R, typename T>
inline void row_block(std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col, const T* b,
                      T* c) {
  std::size_t j = 0;
  for (; j + 32 <= n; j += 32) tile<R, 32>(n, k, a, a_row, a_col, b + j, c + j);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t p = 0; p < k && j < n; ++p) {
      const T av = a[r * a_row + p * a_col];
      const T* brow = b + p * n;
      for (std::size_t q = j; q < n; ++q) c[r * n + q] += av * brow[q];
    }
  }
}

// C[M,N] += A * B[K,N] where A(i,p) = a[i * a_row + p * a_col].
template <typename T>
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col,
                  const T* b, T* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<4>(n, k, a + i * a_row, a_row, a_col, b, c + i * n);
  for (; i < m; ++i) row_block<1>(n, k, a + i * a_row, a_row, a_col, b, c + i * n);
}

}  // namespace detail

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  detail::gemm_strided(m, n, k, a, k, 1, b, c);
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  detail::gemm_strided(m, n, k, a, 1, m, b, c);
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c);
}

}  // namespace xst::kernels
