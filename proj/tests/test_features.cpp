#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "seldlab/common.hpp"
#include "seldlab/features.hpp"
#include "seldlab/rng.hpp"

using namespace seldlab;
using namespace seldlab::feat;

namespace {

std::vector<float> tone(double f, double amp, size_t n, int fs) {
    std::vector<float> x(n);
    for (size_t i = 0; i < n; ++i) x[i] = float(amp * std::sin(kTwoPi * f * double(i) / fs));
    return x;
}

}  // namespace

TEST_CASE("stft: bin math, zeros, frame count, Parseval") {
    FeatureExtractor fx;
    const int fs = 24000;

    // 1 kHz tone -> argmax at round(1000*1024/24000) = 43
    const auto spec = fx.stft(tone(1000.0, 0.5, 24000, fs));
    CHECK(int(spec.size()) == 1 + 24000 / 320);
    const auto& mid = spec[spec.size() / 2];
    size_t arg = 0;
    for (size_t j = 1; j < mid.size(); ++j)
        if (std::abs(mid[j]) > std::abs(mid[arg])) arg = j;
    CHECK(arg == 43);

    // zeros in, zeros out
    const auto zspec = fx.stft(std::vector<float>(4096, 0.0f));
    for (const auto& fr : zspec)
        for (const auto& v : fr) CHECK(std::abs(v) == 0.0);

    // Parseval on one interior frame: sum |X|^2 = nfft * sum |window*x|^2
    Rng rng(5);
    std::vector<float> noise(8192);
    for (auto& v : noise) v = float(rng.normal() * 0.1);
    const auto nspec = fx.stft(noise);
    const int t = 10;  // interior frame, no padding involvement
    const int start = t * 320 - 512;
    REQUIRE(start >= 0);
    double sig_energy = 0.0;
    for (int i = 0; i < 1024; ++i) {
        const double w = 0.5 - 0.5 * std::cos(kTwoPi * i / 1024.0);
        sig_energy += (w * noise[size_t(start + i)]) * (w * noise[size_t(start + i)]);
    }
    double spec_energy = std::norm(nspec[t][0]) + std::norm(nspec[t][512]);
    for (int j = 1; j < 512; ++j) spec_energy += 2.0 * std::norm(nspec[t][size_t(j)]);
    CHECK(spec_energy / 1024.0 == doctest::Approx(sig_energy).epsilon(1e-6));

    CHECK_THROWS_AS(fx.stft(std::vector<float>(100, 0.0f)), DataError);
}

TEST_CASE("mel filterbank: row sums, zeros, white-noise flatness") {
    FeatureExtractor fx;
    for (const auto& row : fx.mel_bank()) {
        double s = 0.0;
        for (double w : row) s += w;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }

    const auto lm0 = fx.log_mel(fx.stft(std::vector<float>(4096, 0.0f)));
    for (const auto& fr : lm0)
        for (float v : fr) CHECK(v == doctest::Approx(std::log(1e-10)));

    // white noise: banded power within 3 dB of flat (100+ frames)
    Rng rng(9);
    std::vector<float> noise(64 * 320 + 1024);
    for (auto& v : noise) v = float(rng.normal() * 0.1);
    const auto lm = fx.log_mel(fx.stft(noise));
    std::vector<double> band_mean(64, 0.0);
    for (const auto& fr : lm)
        for (int b = 0; b < 64; ++b) band_mean[size_t(b)] += std::exp(double(fr[size_t(b)]));
    double lo = 1e300, hi = 0.0;
    for (int b = 0; b < 64; ++b) {
        lo = std::min(lo, band_mean[size_t(b)]);
        hi = std::max(hi, band_mean[size_t(b)]);
    }
    CHECK(10.0 * std::log10(hi / lo) < 3.0);
}

TEST_CASE("intensity vectors: plane wave, silence, Cauchy-Schwarz bound") {
    FeatureExtractor fx;
    Rng rng(3);

    // synthetic FOA plane wave from direction u: W = s, (Y,Z,X) = (uy,uz,ux)*s
    const double ux = 0.32, uy = -0.61, uz = std::sqrt(1 - 0.32 * 0.32 - 0.61 * 0.61);
    std::vector<float> s(24000);
    for (auto& v : s) v = float(rng.normal() * 0.3);
    std::vector<Spectrogram> specs;
    for (double g : {1.0, uy, uz, ux}) {
        std::vector<float> ch(s.size());
        for (size_t i = 0; i < s.size(); ++i) ch[i] = float(g * s[i]);
        specs.push_back(fx.stft(ch));
    }
    const auto iv = fx.intensity_vectors(specs);
    int active = 0;
    for (size_t t = 4; t + 4 < specs[0].size(); ++t)
        for (int b = 8; b < 60; ++b) {
            CHECK(iv[0][t][size_t(b)] == doctest::Approx(ux).epsilon(0.05));
            CHECK(iv[1][t][size_t(b)] == doctest::Approx(uy).epsilon(0.05));
            CHECK(iv[2][t][size_t(b)] == doctest::Approx(uz).epsilon(0.05));
            ++active;
        }
    CHECK(active > 100);

    // W == 0 -> IV == 0
    auto zero_specs = specs;
    zero_specs[0] = fx.stft(std::vector<float>(24000, 0.0f));
    const auto iv0 = fx.intensity_vectors(zero_specs);
    for (int c = 0; c < 3; ++c)
        for (const auto& fr : iv0[size_t(c)])
            for (float v : fr) CHECK(v == 0.0f);

    // random FOA input: per-band norm <= 1 + 1e-6
    std::vector<Spectrogram> rnd;
    for (int c = 0; c < 4; ++c) {
        std::vector<float> ch(12000);
        for (auto& v : ch) v = float(rng.normal());
        rnd.push_back(fx.stft(ch));
    }
    const auto ivr = fx.intensity_vectors(rnd);
    for (size_t t = 0; t < rnd[0].size(); ++t)
        for (int b = 0; b < 64; ++b) {
            const double n = std::sqrt(double(ivr[0][t][size_t(b)]) * ivr[0][t][size_t(b)] +
                                       double(ivr[1][t][size_t(b)]) * ivr[1][t][size_t(b)] +
                                       double(ivr[2][t][size_t(b)]) * ivr[2][t][size_t(b)]);
            CHECK(n <= 1.0 + 1e-6);
        }
}

TEST_CASE("extraction: shape, shift covariance, finiteness, determinism") {
    FeatureExtractor fx;
    Rng rng(17);
    dsp::Audio a;
    a.fs = 24000;
    a.ch.assign(4, {});
    const size_t n = 120000;  // 5 s
    for (auto& ch : a.ch) {
        ch.resize(n);
        for (auto& v : ch) v = float(rng.normal() * 0.1);
    }
    const auto ft = fx.extract(a);
    CHECK(ft.C == 7);
    CHECK(ft.T == 376);
    CHECK(ft.F == 64);
    for (float v : ft.data) CHECK(std::isfinite(v));

    // shift by exactly one hop shifts features by one frame (interior)
    dsp::Audio b = a;
    for (auto& ch : b.ch) {
        ch.insert(ch.begin(), 320, 0.0f);
        ch.resize(n);
    }
    const auto fb = fx.extract(b);
    for (int c = 0; c < 7; ++c)
        for (int t = 8; t < 300; ++t)
            for (int f = 0; f < 64; ++f)
                CHECK(fb.at(c, t + 1, f) == doctest::Approx(ft.at(c, t, f)).epsilon(1e-6));

    const auto ft2 = fx.extract(a);
    CHECK(ft.data == ft2.data);
}

TEST_CASE("feature cache round trip") {
    FeatureTensor t;
    t.C = 2;
    t.T = 3;
    t.F = 4;
    t.n_mels = 4;
    t.frame_hop_s = 320.0 / 24000.0;
    t.data.resize(24);
    for (size_t i = 0; i < t.data.size(); ++i) t.data[i] = float(i) * 0.5f;

    const auto path = std::filesystem::temp_directory_path() / "seldlab_feat_test.feat";
    write_feature_cache(path, t, 24000, 320);
    const auto r = read_feature_cache(path);
    CHECK(r.C == t.C);
    CHECK(r.T == t.T);
    CHECK(r.F == t.F);
    CHECK(r.n_mels == t.n_mels);
    CHECK(r.frame_hop_s == doctest::Approx(t.frame_hop_s));
    CHECK(r.data == t.data);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_feature_cache(path), DataError);
}
