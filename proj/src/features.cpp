#include "seldlab/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "seldlab/common.hpp"

namespace seldlab::feat {
namespace {

// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double f) {
    if (f < 1000.0) return f / (200.0 / 3.0);
    return 15.0 + std::log(f / 1000.0) / (std::log(6.4) / 27.0);
}
double mel_to_hz(double m) {
    if (m < 15.0) return m * (200.0 / 3.0);
    return 1000.0 * std::exp((m - 15.0) * std::log(6.4) / 27.0);
}

}  // namespace

FeatureExtractor::FeatureExtractor(StftParams stft, MelParams mel) : p_(stft), mp_(mel) {
    window_.resize(size_t(p_.nfft));
    for (int i = 0; i < p_.nfft; ++i)
        window_[size_t(i)] = 0.5 - 0.5 * std::cos(kTwoPi * double(i) / double(p_.nfft));
    plan_ = std::make_shared<dsp::Fft>(size_t(p_.nfft));

    const int bins = p_.nfft / 2 + 1;
    const double m_lo = hz_to_mel(mp_.f_min), m_hi = hz_to_mel(mp_.f_max);
    std::vector<double> edges(size_t(mp_.n_mels) + 2);
    for (int i = 0; i < mp_.n_mels + 2; ++i)
        edges[size_t(i)] = mel_to_hz(m_lo + (m_hi - m_lo) * double(i) / double(mp_.n_mels + 1));

    mel_w_.assign(size_t(mp_.n_mels), std::vector<double>(size_t(bins), 0.0));
    for (int b = 0; b < mp_.n_mels; ++b) {
        const double lo = edges[size_t(b)], cen = edges[size_t(b) + 1], hi = edges[size_t(b) + 2];
        double sum = 0.0;
        for (int j = 0; j < bins; ++j) {
            const double f = double(j) * p_.fs / p_.nfft;
            double w = 0.0;
            if (f > lo && f < hi) w = (f <= cen) ? (f - lo) / (cen - lo) : (hi - f) / (hi - cen);
            mel_w_[size_t(b)][size_t(j)] = w;
            sum += w;
        }
        if (sum <= 0.0) throw DataError("FeatureExtractor: empty mel band");
        for (auto& w : mel_w_[size_t(b)]) w /= sum;  // rows sum to 1
    }
}

Spectrogram FeatureExtractor::stft(const std::vector<float>& audio) const {
    const int n = int(audio.size());
    if (n < p_.nfft) throw DataError("stft: input shorter than one window");
    const int half = p_.nfft / 2;
    const int T = frames_for(audio.size());
    const int bins = p_.nfft / 2 + 1;

    // reflect padding by nfft/2 on both sides
    auto sample = [&](long i) -> double {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
        return double(audio[size_t(i)]);
    };

    Spectrogram out(static_cast<size_t>(T));
    std::vector<std::complex<double>> buf(size_t(p_.nfft));
    for (int t = 0; t < T; ++t) {
        const long start = long(t) * p_.hop - half;
        for (int i = 0; i < p_.nfft; ++i)
            buf[size_t(i)] = {sample(start + i) * window_[size_t(i)], 0.0};
        plan_->forward(buf.data());
        out[size_t(t)].assign(buf.begin(), buf.begin() + bins);
    }
    return out;
}

std::vector<std::vector<float>> FeatureExtractor::log_mel(const Spectrogram& spec) const {
    const int T = int(spec.size());
    std::vector<std::vector<float>> out(size_t(T), std::vector<float>(size_t(mp_.n_mels)));
    const int bins = p_.nfft / 2 + 1;
    std::vector<double> power(static_cast<size_t>(bins));
    for (int t = 0; t < T; ++t) {
        if (int(spec[size_t(t)].size()) != bins) throw DataError("log_mel: bin count mismatch");
        for (int j = 0; j < bins; ++j) power[size_t(j)] = std::norm(spec[size_t(t)][size_t(j)]);
        for (int b = 0; b < mp_.n_mels; ++b) {
            double acc = 0.0;
            const auto& w = mel_w_[size_t(b)];
            for (int j = 0; j < bins; ++j) acc += w[size_t(j)] * power[size_t(j)];
            out[size_t(t)][size_t(b)] = float(std::log(acc + 1e-10));
        }
    }
    return out;
}

std::vector<std::vector<std::vector<float>>> FeatureExtractor::intensity_vectors(
    const std::vector<Spectrogram>& foa) const {
    if (foa.size() != 4) throw DataError("intensity_vectors: expected 4 FOA channels (W,Y,Z,X)");
    const int T = int(foa[0].size());
    const int bins = p_.nfft / 2 + 1;
    for (const auto& c : foa)
        if (int(c.size()) != T) throw DataError("intensity_vectors: ragged spectrogram");

    std::vector<std::vector<std::vector<float>>> out(
        3, std::vector<std::vector<float>>(size_t(T), std::vector<float>(size_t(mp_.n_mels))));
    std::vector<double> ix(static_cast<size_t>(bins)), iy(static_cast<size_t>(bins)), iz(static_cast<size_t>(bins)), en(static_cast<size_t>(bins));
    for (int t = 0; t < T; ++t) {
        const auto& W = foa[0][size_t(t)];
        const auto& Yc = foa[1][size_t(t)];
        const auto& Zc = foa[2][size_t(t)];
        const auto& Xc = foa[3][size_t(t)];
        for (int j = 0; j < bins; ++j) {
            const auto wc = std::conj(W[size_t(j)]);
            ix[size_t(j)] = (wc * Xc[size_t(j)]).real();
            iy[size_t(j)] = (wc * Yc[size_t(j)]).real();
            iz[size_t(j)] = (wc * Zc[size_t(j)]).real();
            en[size_t(j)] = 0.5 * (std::norm(W[size_t(j)]) + std::norm(Xc[size_t(j)]) +
                                   std::norm(Yc[size_t(j)]) + std::norm(Zc[size_t(j)]));
        }
        for (int b = 0; b < mp_.n_mels; ++b) {
            const auto& w = mel_w_[size_t(b)];
            double bx = 0, by = 0, bz = 0, be = 0;
            for (int j = 0; j < bins; ++j) {
                bx += w[size_t(j)] * ix[size_t(j)];
                by += w[size_t(j)] * iy[size_t(j)];
                bz += w[size_t(j)] * iz[size_t(j)];
                be += w[size_t(j)] * en[size_t(j)];
            }
            const double d = be + 1e-10;
            out[0][size_t(t)][size_t(b)] = float(bx / d);
            out[1][size_t(t)][size_t(b)] = float(by / d);
            out[2][size_t(t)][size_t(b)] = float(bz / d);
        }
    }
    return out;
}

FeatureTensor FeatureExtractor::extract(const dsp::Audio& foa) const {
    if (foa.channels() != 4) throw DataError("extract: expected 4-channel FOA audio");
    std::vector<Spectrogram> specs(4);
    for (int c = 0; c < 4; ++c) specs[size_t(c)] = stft(foa.ch[size_t(c)]);

    FeatureTensor ft;
    ft.C = 7;
    ft.T = int(specs[0].size());
    ft.F = mp_.n_mels;
    ft.n_mels = mp_.n_mels;
    ft.frame_hop_s = double(p_.hop) / double(p_.fs);
    ft.data.assign(size_t(ft.C) * ft.T * ft.F, 0.0f);

    for (int c = 0; c < 4; ++c) {
        const auto lm = log_mel(specs[size_t(c)]);
        for (int t = 0; t < ft.T; ++t)
            for (int f = 0; f < ft.F; ++f) ft.at(c, t, f) = lm[size_t(t)][size_t(f)];
    }
    const auto iv = intensity_vectors(specs);
    for (int c = 0; c < 3; ++c)
        for (int t = 0; t < ft.T; ++t)
            for (int f = 0; f < ft.F; ++f) ft.at(4 + c, t, f) = iv[size_t(c)][size_t(t)][size_t(f)];

    for (float v : ft.data)
        if (!std::isfinite(v)) throw NumericError("extract: non-finite feature value");
    return ft;
}

namespace {
constexpr uint32_t kFeatMagic = 0x544C4553;  // "SELT"
}

void write_feature_cache(const std::filesystem::path& path, const FeatureTensor& t, int fs, int hop) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_feature_cache: cannot open " + path.string());
    const uint32_t hdr[8] = {kFeatMagic, 1u, uint32_t(t.C), uint32_t(t.T), uint32_t(t.F),
                             uint32_t(fs), uint32_t(hop), uint32_t(t.n_mels)};
    f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    f.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size() * 4));
    if (!f) throw DataError("write_feature_cache: write failed");
}

FeatureTensor read_feature_cache(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_feature_cache: cannot open " + path.string());
    uint32_t hdr[8];
    f.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!f || hdr[0] != kFeatMagic || hdr[1] != 1u)
        throw DataError("read_feature_cache: bad header in " + path.string());
    FeatureTensor t;
    t.C = int(hdr[2]);
    t.T = int(hdr[3]);
    t.F = int(hdr[4]);
    t.n_mels = int(hdr[7]);
    t.frame_hop_s = double(hdr[6]) / double(hdr[5]);
    t.data.resize(size_t(t.C) * t.T * t.F);
    f.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.data.size() * 4));
    if (!f) throw DataError("read_feature_cache: truncated file " + path.string());
    return t;
}

}  // namespace seldlab::feat
