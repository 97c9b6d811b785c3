#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace seldlab::dsp {

inline size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Iterative radix-2 complex FFT with a precomputed plan (twiddles + bit
// reversal). Size must be a power of two.
class Fft {
  public:
    explicit Fft(size_t n);

    size_t size() const { return n_; }

    void forward(std::complex<double>* x) const { run(x, false); }
    void inverse(std::complex<double>* x) const { run(x, true); }  // scaled by 1/n

    // One-sided spectrum of a real signal, length n/2+1. `x` is zero-padded
    // or truncated to the plan size.
    std::vector<std::complex<double>> rfft(const double* x, size_t len) const;
    // Real signal of length n from a one-sided spectrum (Hermitian extension).
    std::vector<double> irfft(const std::complex<double>* spec, size_t bins) const;

  private:
    void run(std::complex<double>* x, bool inverse) const;

    size_t n_;
    std::vector<uint32_t> rev_;
    std::vector<std::complex<double>> tw_;  // twiddles e^{-2pi i k / n}, k < n/2
};

}  // namespace seldlab::dsp
