#pragma once

#include <cstdint>

#ifdef ORTHOSCORE_USE_CBLAS
#include <cblas.h>
#ifdef ORTHOSCORE_OPENBLAS_THREADS
extern "C" void openblas_set_num_threads(int);
#endif
#endif

namespace orthoscore::detail {

// Row-major C[n x m] = alpha * op(A) * op(B) + beta * C. The library
// parallelizes over batches itself, so the BLAS backend is pinned to one
// thread; results are then bitwise reproducible for a fixed reduction order.
#ifdef ORTHOSCORE_USE_CBLAS

inline void blas_single_thread() {
#ifdef ORTHOSCORE_OPENBLAS_THREADS
    static const bool once = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)once;
#endif
}

inline void gemm(bool trans_a, bool trans_b, int64_t n, int64_t m, int64_t k, float alpha,
                 const float* a, int64_t lda, const float* b, int64_t ldb, float beta, float* c,
                 int64_t ldc) {
    blas_single_thread();
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(n), static_cast<int>(m),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

inline void gemm(bool trans_a, bool trans_b, int64_t n, int64_t m, int64_t k, double alpha,
                 const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
                 int64_t ldc) {
    blas_single_thread();
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(n), static_cast<int>(m),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
}

#else

template <class T>
void gemm(bool trans_a, bool trans_b, int64_t n, int64_t m, int64_t k, T alpha, const T* a,
          int64_t lda, const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            c[i * ldc + j] *= beta;
        }
    }
    if (!trans_a && !trans_b) {
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t l = 0; l < k; ++l) {
                const T av = alpha * a[i * lda + l];
                const T* brow = b + l * ldb;
                T* crow = c + i * ldc;
                for (int64_t j = 0; j < m; ++j) {
                    crow[j] += av * brow[j];
                }
            }
        }
    } else if (!trans_a && trans_b) {
        for (int64_t i = 0; i < n; ++i) {
            const T* arow = a + i * lda;
            for (int64_t j = 0; j < m; ++j) {
                const T* brow = b + j * ldb;
                T acc = 0;
                for (int64_t l = 0; l < k; ++l) {
                    acc += arow[l] * brow[l];
                }
                c[i * ldc + j] += alpha * acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (int64_t l = 0; l < k; ++l) {
            const T* arow = a + l * lda;
            const T* brow = b + l * ldb;
            for (int64_t i = 0; i < n; ++i) {
                const T av = alpha * arow[i];
                T* crow = c + i * ldc;
                for (int64_t j = 0; j < m; ++j) {
                    crow[j] += av * brow[j];
                }
            }
        }
    } else {
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < m; ++j) {
                T acc = 0;
                for (int64_t l = 0; l < k; ++l) {
                    acc += a[l * lda + i] * b[j * ldb + l];
                }
                c[i * ldc + j] += alpha * acc;
            }
        }
    }
}

#endif

} // namespace orthoscore::detail
