#pragma once

#include <cstddef>
#include <cstdint>

namespace seldlab::kern {

// Primitive data-parallel kernels behind every arithmetic inner loop (GEMM,
// convolution, reductions, the SRIR frequency-domain accumulator). Each entry
// has a scalar reference implementation and, on x86-64 with AVX2+FMA, a SIMD
// variant selected at runtime. The two are equivalence-tested against each
// other; reductions may differ by rounding (tree vs serial summation), so the
// tests use relative tolerances there and exact equality for elementwise ops.
struct KernelTable {
    const char* name;

    // float
    float (*sdot)(const float* x, const float* y, size_t n);
    void (*saxpy)(float a, const float* x, float* y, size_t n);        // y += a*x
    void (*sscale)(float a, const float* x, float* y, size_t n);       // y  = a*x
    void (*sadd)(const float* x, const float* y, float* z, size_t n);  // z = x+y
    void (*smul)(const float* x, const float* y, float* z, size_t n);  // z = x*y
    float (*ssum)(const float* x, size_t n);
    float (*ssumsq)(const float* x, size_t n);

    // double
    double (*ddot)(const double* x, const double* y, size_t n);
    void (*daxpy)(double a, const double* x, double* y, size_t n);
    void (*dscale)(double a, const double* x, double* y, size_t n);
    void (*dadd)(const double* x, const double* y, double* z, size_t n);
    void (*dmul)(const double* x, const double* y, double* z, size_t n);
    double (*dsum)(const double* x, size_t n);
    double (*dsumsq)(const double* x, size_t n);

    // Complex accumulate for the image-source renderer, split re/im layout:
    //   acc[j] += gain * ph[j] * ((1-t)*H0[j] + t*H1[j])
    void (*foa_accum)(size_t n, double t, const double* h0re, const double* h0im,
                      const double* h1re, const double* h1im, const double* phre,
                      const double* phim, double gain, double* accre, double* accim);

    // ph[j] = exp(i*(phi0 + j*dphi)), computed by rotation recurrence.
    void (*phase_ramp)(size_t n, double phi0, double dphi, double* re, double* im);
};

// Active table: AVX2 when the CPU supports it, unless overridden by
// force_kernels() or the SELDLAB_KERNELS environment variable
// ("scalar" | "avx2" | "auto").
const KernelTable& table();

const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when unsupported
void force_kernels(const char* which);

// ---------------------------------------------------------------------------
// GEMM forms built on the primitive kernels. Row-major throughout.
// ---------------------------------------------------------------------------

namespace detail {
template <class S>
struct Prim;

template <>
struct Prim<float> {
    static float dot(const float* x, const float* y, size_t n) { return table().sdot(x, y, n); }
    static void axpy(float a, const float* x, float* y, size_t n) { table().saxpy(a, x, y, n); }
};
template <>
struct Prim<double> {
    static double dot(const double* x, const double* y, size_t n) { return table().ddot(x, y, n); }
    static void axpy(double a, const double* x, double* y, size_t n) { table().daxpy(a, x, y, n); }
};

inline constexpr size_t kGemmTile = 4096;
}  // namespace detail

// C[M,N] (+)= A[M,K] * B[K,N]
template <class S>
void gemm_nn(size_t M, size_t N, size_t K, const S* A, size_t lda, const S* B, size_t ldb,
             S* C, size_t ldc, bool accumulate) {
    for (size_t n0 = 0; n0 < N; n0 += detail::kGemmTile) {
        const size_t nt = (N - n0 < detail::kGemmTile) ? (N - n0) : detail::kGemmTile;
        for (size_t m = 0; m < M; ++m) {
            S* c = C + m * ldc + n0;
            if (!accumulate)
                for (size_t j = 0; j < nt; ++j) c[j] = S(0);
            const S* a = A + m * lda;
            for (size_t k = 0; k < K; ++k) {
                const S av = a[k];
                if (av != S(0)) detail::Prim<S>::axpy(av, B + k * ldb + n0, c, nt);
            }
        }
    }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T   (rows of B are the columns of the product)
template <class S>
void gemm_nt(size_t M, size_t N, size_t K, const S* A, size_t lda, const S* B, size_t ldb,
             S* C, size_t ldc, bool accumulate) {
    for (size_t m = 0; m < M; ++m) {
        const S* a = A + m * lda;
        S* c = C + m * ldc;
        for (size_t n = 0; n < N; ++n) {
            const S d = detail::Prim<S>::dot(a, B + n * ldb, K);
            c[n] = accumulate ? c[n] + d : d;
        }
    }
}

// C[K,N] (+)= A[M,K]^T * B[M,N]
template <class S>
void gemm_tn(size_t K, size_t N, size_t M, const S* A, size_t lda, const S* B, size_t ldb,
             S* C, size_t ldc, bool accumulate) {
    if (!accumulate) {
        for (size_t k = 0; k < K; ++k) {
            S* c = C + k * ldc;
            for (size_t j = 0; j < N; ++j) c[j] = S(0);
        }
    }
    for (size_t n0 = 0; n0 < N; n0 += detail::kGemmTile) {
        const size_t nt = (N - n0 < detail::kGemmTile) ? (N - n0) : detail::kGemmTile;
        for (size_t m = 0; m < M; ++m) {
            const S* b = B + m * ldb + n0;
            const S* a = A + m * lda;
            for (size_t k = 0; k < K; ++k) {
                const S av = a[k];
                if (av != S(0)) detail::Prim<S>::axpy(av, b, C + k * ldc + n0, nt);
            }
        }
    }
}

}  // namespace seldlab::kern
