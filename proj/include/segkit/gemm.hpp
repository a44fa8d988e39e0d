#pragma once

#include <cstddef>
#include <type_traits>

// Small row-major GEMM kernels sized for convolution workloads
// (M = channels, K = channels * kernel taps, N = output pixels).
// Register-tiled micro-kernels with fixed accumulation order, so results
// are bitwise reproducible from run to run. Single-threaded.

namespace segkit {

namespace detail {

template <typename T>
struct GemmTile {
    static constexpr int MR = 4;
    static constexpr int NR = std::is_same_v<T, float> ? 32 : 16;
};

// C tile (mr x NR) (+)= A (mr rows of lda) * B (K x ldb), B column block at bj.
template <typename T, int MR, int NR>
inline void gemm_nn_tile(int mr, int K, const T* a, std::size_t lda, const T* b, std::size_t ldb,
                         T* c, std::size_t ldc, bool accumulate) {
    T acc[MR][NR];
    for (int m = 0; m < MR; ++m)
        for (int j = 0; j < NR; ++j) acc[m][j] = T(0);
    for (int k = 0; k < K; ++k) {
        const T* brow = b + static_cast<std::size_t>(k) * ldb;
        for (int m = 0; m < mr; ++m) {
            const T av = a[static_cast<std::size_t>(m) * lda + k];
            for (int j = 0; j < NR; ++j) acc[m][j] += av * brow[j];
        }
    }
    for (int m = 0; m < mr; ++m) {
        T* crow = c + static_cast<std::size_t>(m) * ldc;
        if (accumulate)
            for (int j = 0; j < NR; ++j) crow[j] += acc[m][j];
        else
            for (int j = 0; j < NR; ++j) crow[j] = acc[m][j];
    }
}

}  // namespace detail

// C (M x N) = A (M x K) * B (K x N), all row-major; += when accumulate.
template <typename T>
void gemm_nn(int M, int N, int K, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
             std::size_t ldc, bool accumulate = false) {
    constexpr int MR = detail::GemmTile<T>::MR;
    constexpr int NR = detail::GemmTile<T>::NR;
    int n = 0;
    for (; n + NR <= N; n += NR) {
        for (int m = 0; m < M; m += MR) {
            const int mr = M - m < MR ? M - m : MR;
            detail::gemm_nn_tile<T, MR, NR>(mr, K, a + static_cast<std::size_t>(m) * lda, lda,
                                            b + n, ldb, c + static_cast<std::size_t>(m) * ldc + n,
                                            ldc, accumulate);
        }
    }
    // column remainder
    for (int m = 0; m < M; ++m) {
        const T* arow = a + static_cast<std::size_t>(m) * lda;
        T* crow = c + static_cast<std::size_t>(m) * ldc;
        for (int j = n; j < N; ++j) {
            T s = accumulate ? crow[j] : T(0);
            for (int k = 0; k < K; ++k) s += arow[k] * b[static_cast<std::size_t>(k) * ldb + j];
            crow[j] = s;
        }
    }
}

// C (M x N) (+)= A (M x K) * B^T, with B stored row-major (N x K).
// Dot-product formulation; eight fixed partial sums keep the reduction
// order constant while letting the compiler vectorize.
template <typename T>
void gemm_nt(int M, int N, int K, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
             std::size_t ldc, bool accumulate = false) {
    constexpr int L = 8;
    for (int m = 0; m < M; ++m) {
        const T* arow = a + static_cast<std::size_t>(m) * lda;
        T* crow = c + static_cast<std::size_t>(m) * ldc;
        for (int j = 0; j < N; ++j) {
            const T* brow = b + static_cast<std::size_t>(j) * ldb;
            T lanes[L] = {};
            int k = 0;
            for (; k + L <= K; k += L)
                for (int t = 0; t < L; ++t) lanes[t] += arow[k + t] * brow[k + t];
            for (int t = 0; k < K; ++k, ++t) lanes[t] += arow[k] * brow[k];
            T s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                  ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
            crow[j] = accumulate ? crow[j] + s : s;
        }
    }
}

// B (N x M) = A^T for row-major A (M x N).
template <typename T>
void transpose(int M, int N, const T* a, T* b) {
    constexpr int BL = 32;
    for (int m0 = 0; m0 < M; m0 += BL)
        for (int n0 = 0; n0 < N; n0 += BL) {
            const int m1 = m0 + BL < M ? m0 + BL : M;
            const int n1 = n0 + BL < N ? n0 + BL : N;
            for (int m = m0; m < m1; ++m)
                for (int n = n0; n < n1; ++n)
                    b[static_cast<std::size_t>(n) * M + m] = a[static_cast<std::size_t>(m) * N + n];
        }
}

}  // namespace segkit
