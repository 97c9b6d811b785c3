#include "seldlab/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace seldlab::dsp {

Fft::Fft(size_t n) : n_(n) {
    if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: size must be a power of two");
    rev_.resize(n);
    int log2n = 0;
    while ((size_t(1) << log2n) < n) ++log2n;
    for (size_t i = 0; i < n; ++i) {
        uint32_t r = 0;
        for (int b = 0; b < log2n; ++b)
            if (i & (size_t(1) << b)) r |= uint32_t(1) << (log2n - 1 - b);
        rev_[i] = r;
    }
    tw_.resize(n / 2);
    for (size_t k = 0; k < n / 2; ++k) {
        const double a = -2.0 * 3.14159265358979323846 * double(k) / double(n);
        tw_[k] = {std::cos(a), std::sin(a)};
    }
}

void Fft::run(std::complex<double>* x, bool inverse) const {
    const size_t n = n_;
    for (size_t i = 0; i < n; ++i) {
        const size_t j = rev_[i];
        if (i < j) std::swap(x[i], x[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const size_t half = len >> 1;
        const size_t step = n / len;
        for (size_t base = 0; base < n; base += len) {
            for (size_t k = 0; k < half; ++k) {
                std::complex<double> w = tw_[k * step];
                if (inverse) w = std::conj(w);
                const std::complex<double> u = x[base + k];
                const std::complex<double> v = x[base + k + half] * w;
                x[base + k] = u + v;
                x[base + k + half] = u - v;
            }
        }
    }
    if (inverse) {
        const double s = 1.0 / double(n);
        for (size_t i = 0; i < n; ++i) x[i] *= s;
    }
}

std::vector<std::complex<double>> Fft::rfft(const double* x, size_t len) const {
    std::vector<std::complex<double>> buf(n_, {0.0, 0.0});
    const size_t m = len < n_ ? len : n_;
    for (size_t i = 0; i < m; ++i) buf[i] = {x[i], 0.0};
    forward(buf.data());
    buf.resize(n_ / 2 + 1);
    return buf;
}

std::vector<double> Fft::irfft(const std::complex<double>* spec, size_t bins) const {
    if (bins != n_ / 2 + 1) throw std::invalid_argument("irfft: spectrum size mismatch");
    std::vector<std::complex<double>> buf(n_);
    buf[0] = {spec[0].real(), 0.0};
    buf[n_ / 2] = {spec[n_ / 2].real(), 0.0};
    for (size_t k = 1; k < n_ / 2; ++k) {
        buf[k] = spec[k];
        buf[n_ - k] = std::conj(spec[k]);
    }
    inverse(buf.data());
    std::vector<double> out(n_);
    for (size_t i = 0; i < n_; ++i) out[i] = buf[i].real();
    return out;
}

}  // namespace seldlab::dsp
