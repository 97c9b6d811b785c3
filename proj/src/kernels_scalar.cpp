#include "seldlab/kernels.hpp"

#include <cmath>

namespace seldlab::kern {
namespace {

template <class S>
S dot_(const S* x, const S* y, size_t n) {
    S acc = S(0);
    for (size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

template <class S>
void axpy_(S a, const S* x, S* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class S>
void scale_(S a, const S* x, S* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = a * x[i];
}

template <class S>
void add_(const S* x, const S* y, S* z, size_t n) {
    for (size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

template <class S>
void mul_(const S* x, const S* y, S* z, size_t n) {
    for (size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

template <class S>
S sum_(const S* x, size_t n) {
    S acc = S(0);
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <class S>
S sumsq_(const S* x, size_t n) {
    S acc = S(0);
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

void foa_accum_(size_t n, double t, const double* h0re, const double* h0im,
                const double* h1re, const double* h1im, const double* phre,
                const double* phim, double gain, double* accre, double* accim) {
    const double u = 1.0 - t;
    for (size_t j = 0; j < n; ++j) {
        const double hre = u * h0re[j] + t * h1re[j];
        const double him = u * h0im[j] + t * h1im[j];
        const double pre = phre[j];
        const double pim = phim[j];
        accre[j] += gain * (hre * pre - him * pim);
        accim[j] += gain * (hre * pim + him * pre);
    }
}

void phase_ramp_(size_t n, double phi0, double dphi, double* re, double* im) {
    double cr = std::cos(phi0), ci = std::sin(phi0);
    const double rr = std::cos(dphi), ri = std::sin(dphi);
    for (size_t j = 0; j < n; ++j) {
        re[j] = cr;
        im[j] = ci;
        const double nr = cr * rr - ci * ri;
        ci = cr * ri + ci * rr;
        cr = nr;
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable t = {
        "scalar",
        &dot_<float>, &axpy_<float>, &scale_<float>, &add_<float>, &mul_<float>,
        &sum_<float>, &sumsq_<float>,
        &dot_<double>, &axpy_<double>, &scale_<double>, &add_<double>, &mul_<double>,
        &sum_<double>, &sumsq_<double>,
        &foa_accum_, &phase_ramp_,
    };
    return t;
}

}  // namespace seldlab::kern
