#pragma once

#include <complex>
#include <filesystem>
#include <memory>
#include <vector>

#include "seldlab/audio_io.hpp"
#include "seldlab/fft.hpp"

namespace seldlab::feat {

struct StftParams {
    int nfft = 1024;  // Hann window of the same length
    int hop = 320;
    int fs = 24000;
};

struct MelParams {
    int n_mels = 64;
    double f_min = 50.0;
    double f_max = 12000.0;
};

// C x T x F float tensor, C-major ([c][t][f] at ((c*T)+t)*F + f).
struct FeatureTensor {
    int C = 0, T = 0, F = 0;
    double frame_hop_s = 0.0;
    int n_mels = 0;
    std::vector<float> data;

    float& at(int c, int t, int f) { return data[(size_t(c) * T + t) * F + f]; }
    float at(int c, int t, int f) const { return data[(size_t(c) * T + t) * F + f]; }
};

// Complex STFT frames, per channel: [T][nfft/2+1].
using Spectrogram = std::vector<std::vector<std::complex<double>>>;

class FeatureExtractor {
  public:
    explicit FeatureExtractor(StftParams stft = {}, MelParams mel = {});

    // Hann, centered with reflect padding, one-sided. audio length must be
    // at least one window.
    Spectrogram stft(const std::vector<float>& audio) const;

    // power -> 64-band mel (Slaney scale, rows normalized to unit sum) -> log(x + 1e-10)
    std::vector<std::vector<float>> log_mel(const Spectrogram& spec) const;

    // per-bin active intensity Re{W*.(X,Y,Z)} from ACN-ordered FOA (W,Y,Z,X),
    // mel-banded and normalized by the mel-banded total energy
    // (|W|^2+|X|^2+|Y|^2+|Z|^2)/2 so a plane wave maps to its unit DOA.
    std::vector<std::vector<std::vector<float>>> intensity_vectors(
        const std::vector<Spectrogram>& foa_specs) const;

    // 4 log-mel channels + 3 intensity channels
    FeatureTensor extract(const dsp::Audio& foa) const;

    int frames_for(size_t samples) const { return 1 + int(samples / size_t(p_.hop)); }
    const std::vector<std::vector<double>>& mel_bank() const { return mel_w_; }
    const StftParams& stft_params() const { return p_; }
    const MelParams& mel_params() const { return mp_; }

  private:
    StftParams p_;
    MelParams mp_;
    std::vector<double> window_;
    std::vector<std::vector<double>> mel_w_;  // [n_mels][bins]
    std::shared_ptr<dsp::Fft> plan_;
};

// Little-endian feature cache blob with an 8-field header
// (magic, version, C, T, F, fs, hop, n_mels).
void write_feature_cache(const std::filesystem::path& path, const FeatureTensor& t, int fs, int hop);
FeatureTensor read_feature_cache(const std::filesystem::path& path);

}  // namespace seldlab::feat
