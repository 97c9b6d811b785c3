// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be reached through the runtime dispatcher.

#include "seldlab/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>

namespace seldlab::kern {
namespace {

inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
}

inline double hsum256d(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

float sdot(const float* x, const float* y, size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    float acc = hsum256(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void saxpy(float a, const float* x, float* y, size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void sscale(float a, const float* x, float* y, size_t n) {
    const __m256 va = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) y[i] = a * x[i];
}

void sadd(const float* x, const float* y, float* z, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(z + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) z[i] = x[i] + y[i];
}

void smul(const float* x, const float* y, float* z, size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(z + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    for (; i < n; ++i) z[i] = x[i] * y[i];
}

float ssum(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

float ssumsq(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 v = _mm256_loadu_ps(x + i);
        acc = _mm256_fmadd_ps(v, v, acc);
    }
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

double ddot(const double* x, const double* y, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    double acc = hsum256d(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void daxpy(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void dscale(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) y[i] = a * x[i];
}

void dadd(const double* x, const double* y, double* z, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] + y[i];
}

void dmul(const double* x, const double* y, double* z, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) z[i] = x[i] * y[i];
}

double dsum(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum256d(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double dsumsq(const double* x, size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(x + i);
        acc = _mm256_fmadd_pd(v, v, acc);
    }
    double s = hsum256d(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

void foa_accum(size_t n, double t, const double* h0re, const double* h0im,
               const double* h1re, const double* h1im, const double* phre,
               const double* phim, double gain, double* accre, double* accim) {
    const __m256d vt = _mm256_set1_pd(t);
    const __m256d vu = _mm256_set1_pd(1.0 - t);
    const __m256d vg = _mm256_set1_pd(gain);
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        const __m256d hre =
            _mm256_fmadd_pd(vt, _mm256_loadu_pd(h1re + j), _mm256_mul_pd(vu, _mm256_loadu_pd(h0re + j)));
        const __m256d him =
            _mm256_fmadd_pd(vt, _mm256_loadu_pd(h1im + j), _mm256_mul_pd(vu, _mm256_loadu_pd(h0im + j)));
        const __m256d pre = _mm256_loadu_pd(phre + j);
        const __m256d pim = _mm256_loadu_pd(phim + j);
        const __m256d re = _mm256_fmsub_pd(hre, pre, _mm256_mul_pd(him, pim));
        const __m256d im = _mm256_fmadd_pd(hre, pim, _mm256_mul_pd(him, pre));
        _mm256_storeu_pd(accre + j, _mm256_fmadd_pd(vg, re, _mm256_loadu_pd(accre + j)));
        _mm256_storeu_pd(accim + j, _mm256_fmadd_pd(vg, im, _mm256_loadu_pd(accim + j)));
    }
    const double u = 1.0 - t;
    for (; j < n; ++j) {
        const double hre = u * h0re[j] + t * h1re[j];
        const double him = u * h0im[j] + t * h1im[j];
        accre[j] += gain * (hre * phre[j] - him * phim[j]);
        accim[j] += gain * (hre * phim[j] + him * phre[j]);
    }
}

void phase_ramp(size_t n, double phi0, double dphi, double* re, double* im) {
    // Four lanes each advance by 4*dphi per iteration.
    alignas(32) double cr[4], ci[4];
    for (int k = 0; k < 4; ++k) {
        cr[k] = std::cos(phi0 + k * dphi);
        ci[k] = std::sin(phi0 + k * dphi);
    }
    const __m256d rr = _mm256_set1_pd(std::cos(4.0 * dphi));
    const __m256d ri = _mm256_set1_pd(std::sin(4.0 * dphi));
    __m256d vr = _mm256_load_pd(cr);
    __m256d vi = _mm256_load_pd(ci);
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        _mm256_storeu_pd(re + j, vr);
        _mm256_storeu_pd(im + j, vi);
        const __m256d nr = _mm256_fmsub_pd(vr, rr, _mm256_mul_pd(vi, ri));
        vi = _mm256_fmadd_pd(vr, ri, _mm256_mul_pd(vi, rr));
        vr = nr;
    }
    for (; j < n; ++j) {
        re[j] = std::cos(phi0 + j * dphi);
        im[j] = std::sin(phi0 + j * dphi);
    }
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable t = {
        "avx2",
        &sdot, &saxpy, &sscale, &sadd, &smul, &ssum, &ssumsq,
        &ddot, &daxpy, &dscale, &dadd, &dmul, &dsum, &dsumsq,
        &foa_accum, &phase_ramp,
    };
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return &t;
    return nullptr;
}

}  // namespace seldlab::kern

#else

namespace seldlab::kern {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace seldlab::kern

#endif
