#pragma once

#include <cstddef>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

// Compute kernels behind the tape ops. Each kernel parallelizes over
// independent output rows, so for any thread count the per-element operation
// order is identical to the serial reference and results are bitwise equal.
// kern::serial holds the plain-loop reference implementations used by the
// equivalence tests and the benchmark.

namespace marecg::kern {

// Work thresholds below which the parallel pragma is skipped; tiny tensors
// dominate this codebase and thread startup costs more than the loop.
inline constexpr std::size_t kParallelRows = 16;

namespace serial {

// Row-times-matrix with the k-loop outside the column loop: each out[i][j]
// still accumulates its terms in ascending-p order (bit-identical to the
// naive triple loop), but the inner loop is data-parallel over j and
// vectorizes without reassociation.
template <class S>
void matmul_row(const S* a_row, const S* b, S* out_row, std::size_t k, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) out_row[j] = S(0);
    for (std::size_t p = 0; p < k; ++p) {
        S av = a_row[p];
        const S* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) out_row[j] += av * brow[j];
    }
}

template <class S>
void matmul(const S* a, const S* b, S* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) matmul_row(a + i * k, b, out + i * n, k, n);
}

// out[m,n] += a[m,k] * b[n,k]^T  (i.e. a * b^T), accumulate form used by backward.
template <class S>
void matmul_nt_acc(const S* a, const S* b, S* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            S acc = S(0);
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            out[i * n + j] += acc;
        }
    }
}

// out[k,n] += a[m,k]^T * b[m,n], accumulate form used by backward.
template <class S>
void matmul_tn_acc(const S* a, const S* b, S* out, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < k; ++i) {
        S* orow = out + i * n;
        for (std::size_t p = 0; p < m; ++p) {
            S av = a[p * k + i];
            const S* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

template <class S>
void softmax_rows(const S* x, S* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = x + r * cols;
        S* yr = out + r * cols;
        S mx = xr[0];
        for (std::size_t c = 1; c < cols; ++c) mx = xr[c] > mx ? xr[c] : mx;
        S sum = S(0);
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        S inv = S(1) / sum;
        for (std::size_t c = 0; c < cols; ++c) yr[c] *= inv;
    }
}

template <class S>
void layernorm_rows(const S* x, const S* gain, const S* bias, S* out, S* inv_std,
                    std::size_t rows, std::size_t cols, S eps) {
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = x + r * cols;
        S* yr = out + r * cols;
        S mean = S(0);
        for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
        mean /= static_cast<S>(cols);
        S var = S(0);
        for (std::size_t c = 0; c < cols; ++c) {
            S d = xr[c] - mean;
            var += d * d;
        }
        var /= static_cast<S>(cols);
        S is = S(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < cols; ++c) {
            yr[c] = (xr[c] - mean) * is * gain[c] + bias[c];
        }
    }
}

template <class S>
void gelu(const S* x, S* out, std::size_t n) {
    constexpr S inv_sqrt2 = static_cast<S>(0.7071067811865476);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = S(0.5) * x[i] * (S(1) + std::erf(x[i] * inv_sqrt2));
    }
}

}  // namespace serial

template <class S>
void matmul(const S* a, const S* b, S* out, std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m >= kParallelRows && k * n >= 4096)
#endif
    for (std::size_t i = 0; i < m; ++i) serial::matmul_row(a + i * k, b, out + i * n, k, n);
}

template <class S>
void matmul_nt_acc(const S* a, const S* b, S* out, std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m >= kParallelRows && k * n >= 4096)
#endif
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            S acc = S(0);
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            out[i * n + j] += acc;
        }
    }
}

template <class S>
void matmul_tn_acc(const S* a, const S* b, S* out, std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (k >= kParallelRows && m * n >= 4096)
#endif
    for (std::size_t i = 0; i < k; ++i) {
        S* orow = out + i * n;
        for (std::size_t p = 0; p < m; ++p) {
            S av = a[p * k + i];
            const S* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

template <class S>
void softmax_rows(const S* x, S* out, std::size_t rows, std::size_t cols) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows >= kParallelRows && cols >= 64)
#endif
    for (std::size_t r = 0; r < rows; ++r) {
        serial::softmax_rows(x + r * cols, out + r * cols, 1, cols);
    }
}

template <class S>
void layernorm_rows(const S* x, const S* gain, const S* bias, S* out, S* inv_std,
                    std::size_t rows, std::size_t cols, S eps) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (rows >= kParallelRows && cols >= 64)
#endif
    for (std::size_t r = 0; r < rows; ++r) {
        serial::layernorm_rows(x + r * cols, gain, bias, out + r * cols, inv_std + r, 1, cols, eps);
    }
}

template <class S>
void gelu(const S* x, S* out, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (n >= 4096)
#endif
    for (std::size_t i = 0; i < n; ++i) {
        serial::gelu(x + i, out + i, 1);
    }
}

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace marecg::kern
