#pragma once

#include <cstddef>
#include <cstring>

namespace numkit::detail {

// Row-major matrix kernels. All three parallelize over independent output
// rows with a static schedule, so results are bit-identical for any thread
// count (each output element is reduced by exactly one thread, in one order).

inline constexpr std::size_t kParallelCutoff = 1 << 15;

// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n,
             const T* a, const T* b, T* c, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n * k > kParallelCutoff)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        T* crow = c + i * n;
        if (!accumulate) {
            std::memset(crow, 0, n * sizeof(T));
        }
        const T* arow = a + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const T av = arow[l];
            if (av == T(0)) continue;
            const T* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[m,n] = (accumulate ? C : 0) + A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
             const T* a, const T* b, T* c, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n * k > kParallelCutoff)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = 0;
            for (std::size_t l = 0; l < k; ++l) {
                acc += arow[l] * brow[l];
            }
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// C[k,n] = (accumulate ? C : 0) + A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
             const T* a, const T* b, T* c, bool accumulate) {
#pragma omp parallel for schedule(static) if (m * n * k > kParallelCutoff)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(k); ++i) {
        T* crow = c + i * n;
        if (!accumulate) {
            std::memset(crow, 0, n * sizeof(T));
        }
        for (std::size_t l = 0; l < m; ++l) {
            const T av = a[l * k + i];
            if (av == T(0)) continue;
            const T* brow = b + l * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace numkit::detail
