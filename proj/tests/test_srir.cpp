#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "oracles.hpp"
#include "seldlab/common.hpp"
#include "seldlab/rng.hpp"
#include "seldlab/fft.hpp"
#include "seldlab/srir.hpp"

using namespace seldlab;
using namespace seldlab::srir;


namespace {

double band_energy(const std::vector<float>& x, int fs, double f_lo, double f_hi) {
    // Goertzel-style DFT energy over a coarse frequency grid
    double acc = 0.0;
    for (double f = f_lo; f < f_hi; f += 50.0) {
        std::complex<double> z{0, 0};
        for (size_t n = 0; n < x.size(); ++n)
            z += double(x[n]) * std::exp(std::complex<double>(0, -2 * kPi * f * double(n) / fs));
        acc += std::norm(z);
    }
    return acc;
}

}  // namespace

TEST_CASE("image enumeration: counts and positions vs mirror BFS oracle") {
    RoomSpec room = RoomSpec::with_uniform_absorption({5.0, 4.0, 3.0}, 0.3, 0);
    const Vec3 src{1.2, 2.1, 1.4}, mic{3.4, 1.5, 1.6};

    auto imgs0 = enumerate_image_sources(room, src, mic);
    CHECK(imgs0.size() == 1);
    CHECK(imgs0[0].gain == doctest::Approx(1.0));
    CHECK(imgs0[0].pos[0] == doctest::Approx(src[0]));

    room.max_order = 1;
    CHECK(enumerate_image_sources(room, src, mic).size() == 7);  // direct + one per wall

    for (int order = 2; order <= 3; ++order) {
        room.max_order = order;
        const auto imgs = enumerate_image_sources(room, src, mic);
        const auto oracle = oracles::mirror_images_bfs(room.dims, src, order);
        CHECK(imgs.size() == oracle.size());
        CHECK(static_cast<long long>(imgs.size()) == image_count_closed_form(order));

        // positions must agree as multisets
        std::set<std::array<long long, 3>> a, b;
        for (const auto& im : imgs)
            a.insert({llround(im.pos[0] * 1e6), llround(im.pos[1] * 1e6), llround(im.pos[2] * 1e6)});
        for (const auto& im : oracle)
            b.insert({llround(im.pos[0] * 1e6), llround(im.pos[1] * 1e6), llround(im.pos[2] * 1e6)});
        CHECK(a == b);
    }

    CHECK_THROWS_AS(enumerate_image_sources(room, {9.0, 1.0, 1.0}, mic), DataError);
    CHECK_THROWS_AS(enumerate_image_sources(room, src, {1.0, -0.5, 1.0}), DataError);
}

TEST_CASE("image gains multiply per-wall reflection amplitudes") {
    RoomSpec room;
    room.dims = {4.0, 3.0, 2.5};
    room.absorption = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    room.max_order = 1;
    const Vec3 src{1.0, 1.0, 1.0}, mic{2.5, 1.5, 1.2};
    const auto imgs = enumerate_image_sources(room, src, mic);
    // first-order image mirrored through x=0 has gain sqrt(1-0.1)
    bool found = false;
    for (const auto& im : imgs)
        if (im.order == 1 && im.pos[0] == doctest::Approx(-1.0)) {
            CHECK(im.gain == doctest::Approx(std::sqrt(0.9)));
            found = true;
        }
    CHECK(found);
}

TEST_CASE("render: direct path delay and 1/d law") {
    const int fs = 24000;
    const auto array = MicArraySpec::tetrahedral({0, 0, 0});
    for (double d : {1.0, 2.0}) {
        ImageSource im;
        im.pos = {d, 0, 0};
        im.order = 0;
        im.gain = 1.0;
        im.dist = d;
        im.delay_s = d / 343.0;
        im.doa = acoustics::Direction::from_unit(1, 0, 0);
        const auto ir = render_array_rir({im}, array, fs, 8192, 343.0);
        REQUIRE(ir.size() == 4);
        // peak within +-2 samples of the center-referenced delay
        const int want = int(std::lround(fs * d / 343.0));
        for (int r = 0; r < 4; ++r) {
            int peak = 0;
            float best = 0;
            for (int i = 0; i < int(ir[size_t(r)].size()); ++i)
                if (std::abs(ir[size_t(r)][size_t(i)]) > best) {
                    best = std::abs(ir[size_t(r)][size_t(i)]);
                    peak = i;
                }
            CHECK(std::abs(peak - want) <= 2);
        }
    }
    // doubling distance halves broadband RMS within 5%
    auto rms = [&](double d) {
        ImageSource im;
        im.pos = {d, 0, 0};
        im.gain = 1.0;
        im.dist = d;
        im.delay_s = d / 343.0;
        im.doa = acoustics::Direction::from_unit(1, 0, 0);
        const auto ir = render_array_rir({im}, array, fs, 8192, 343.0);
        double acc = 0;
        for (float v : ir[0]) acc += double(v) * v;
        return std::sqrt(acc);
    };
    CHECK(rms(1.0) / rms(2.0) == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("render: broadside capsule receives more in-band energy than anti-broadside") {
    const int fs = 24000;
    MicArraySpec array = MicArraySpec::tetrahedral({0, 0, 0});
    // capsule 0 points to (az 45, el 35); source along it vs opposite
    double x, y, z;
    array.capsule_dirs[0].to_unit(x, y, z);
    auto run = [&](double sign) {
        ImageSource im;
        im.pos = {sign * 2 * x, sign * 2 * y, sign * 2 * z};
        im.gain = 1.0;
        im.dist = 2.0;
        im.delay_s = 2.0 / 343.0;
        im.doa = acoustics::Direction::from_unit(sign * x, sign * y, sign * z);
        const auto ir = render_array_rir({im}, array, fs, 8192, 343.0);
        // kR = 2 band: f = 2 c / (2 pi R) ~ 2.6 kHz
        return band_energy(ir[0], fs, 2300.0, 2900.0);
    };
    CHECK(run(1.0) / run(-1.0) > 1.0);
}

TEST_CASE("FOA encoding geometry") {
    const int fs = 24000;
    const auto array = MicArraySpec::tetrahedral({0, 0, 0});

    // far-field source at azimuth 0, elevation 0: Y ~ 0, X maximal
    ImageSource im;
    im.pos = {3.0, 0, 0};
    im.gain = 1.0;
    im.dist = 3.0;
    im.delay_s = 3.0 / 343.0;
    im.doa = acoustics::Direction::from_unit(1, 0, 0);
    const auto air = render_array_rir({im}, array, fs, 8192, 343.0);
    const auto foa = encode_foa(air, array, fs);
    REQUIRE(foa.size() == 4);
    const double ey = band_energy(foa[1], fs, 400, 3000);
    const double ex = band_energy(foa[3], fs, 400, 3000);
    CHECK(ex / (ey + 1e-30) > 100.0);

    // W magnitude invariant (+-0.5 dB) under source rotation
    std::vector<double> wmags;
    for (double az = 0.0; az < 360.0; az += 45.0) {
        const double a = az * kPi / 180.0;
        ImageSource s;
        s.pos = {3 * std::cos(a), 3 * std::sin(a), 0.0};
        s.gain = 1.0;
        s.dist = 3.0;
        s.delay_s = 3.0 / 343.0;
        s.doa = acoustics::Direction::from_colat_az(kPi / 2, a);
        const auto f = encode_foa(render_array_rir({s}, array, fs, 8192, 343.0), array, fs);
        wmags.push_back(band_energy(f[0], fs, 400, 3000));
    }
    const auto [mn, mx] = std::minmax_element(wmags.begin(), wmags.end());
    CHECK(10.0 * std::log10(*mx / *mn) < 1.0);  // energy ratio -> 0.5 dB amplitude

    CHECK_THROWS_AS(encode_foa({air[0], air[1]}, array, fs), DataError);
}

TEST_CASE("FOA round trip: encode then intensity-decode DOA") {
    const int fs = 24000;
    const auto array = MicArraySpec::tetrahedral({0, 0, 0});
    Rng rng(11);
    std::vector<double> errors;
    for (int k = 0; k < 20; ++k) {
        const double az = rng.uniform(-kPi, kPi);
        const double colat = std::acos(rng.uniform(-0.95, 0.95));
        auto dir = acoustics::Direction::from_colat_az(colat, az);
        double ux, uy, uz;
        dir.to_unit(ux, uy, uz);
        ImageSource im;
        im.pos = {4 * ux, 4 * uy, 4 * uz};
        im.gain = 1.0;
        im.dist = 4.0;
        im.delay_s = 4.0 / 343.0;
        im.doa = dir;
        const auto foa = encode_foa(render_array_rir({im}, array, fs, 8192, 343.0), array, fs);

        // broadband intensity in 300 Hz - 4 kHz
        const size_t nfft = 8192;
        dsp::Fft plan(nfft);
        std::vector<std::vector<std::complex<double>>> S;
        for (const auto& ch : foa) {
            std::vector<double> d(ch.begin(), ch.end());
            S.push_back(plan.rfft(d.data(), d.size()));
        }
        double ix = 0, iy = 0, iz = 0;
        const size_t j0 = size_t(300.0 * nfft / fs), j1 = size_t(4000.0 * nfft / fs);
        for (size_t j = j0; j <= j1; ++j) {
            const auto wc = std::conj(S[0][j]);
            ix += (wc * S[3][j]).real();
            iy += (wc * S[1][j]).real();
            iz += (wc * S[2][j]).real();
        }
        const double n = std::sqrt(ix * ix + iy * iy + iz * iz);
        const double dot = std::clamp((ix * ux + iy * uy + iz * uz) / n, -1.0, 1.0);
        errors.push_back(std::acos(dot) * 180.0 / kPi);
    }
    std::sort(errors.begin(), errors.end());
    const double median = errors[errors.size() / 2];
    CHECK(median < 3.0);
}

TEST_CASE("simulate_srir: anechoic, Sabine RT60, determinism, DOA bookkeeping") {
    RoomSpec room = RoomSpec::with_uniform_absorption({5.0, 4.0, 3.0}, 1.0, 6);
    const auto array = MicArraySpec::tetrahedral({2.4, 2.0, 1.5});
    const Vec3 src{1.0, 1.2, 1.6};

    auto s = simulate_srir(room, array, src);
    // all energy inside the direct-path window
    const double d = dist(src, array.center);
    const int peak = int(std::lround(room.fs * d / 343.0));
    for (int r = 0; r < 4; ++r) {
        double inside = 0, total = 0;
        for (int i = 0; i < int(s.array_ir[size_t(r)].size()); ++i) {
            const double e = double(s.array_ir[size_t(r)][size_t(i)]) * s.array_ir[size_t(r)][size_t(i)];
            total += e;
            if (i >= peak - 256 && i <= peak + 512) inside += e;
        }
        CHECK((total - inside) / total < 1e-6);
    }

    // analytic DOA
    const auto want = acoustics::Direction::from_unit(src[0] - array.center[0],
                                                      src[1] - array.center[1],
                                                      src[2] - array.center[2]);
    CHECK(acoustics::angle_between(s.source_doa, want) < 1e-9);

    // determinism: identical inputs give bit-identical IRs
    auto s2 = simulate_srir(room, array, src);
    CHECK(s.array_ir == s2.array_ir);
    CHECK(s.foa_ir == s2.foa_ir);

    // Schroeder monotonicity on a reverberant room
    RoomSpec rev = RoomSpec::with_target_rt60({5.0, 4.0, 3.0}, 0.35, 14);
    auto sr = simulate_srir(rev, array, src);
    const auto edc = schroeder_curve_db(sr.foa_ir[0]);
    for (size_t i = 1; i < edc.size(); ++i) CHECK(edc[i] <= edc[i - 1] + 1e-9);
}

TEST_CASE("Sabine-targeted room lands in the Schroeder window" * doctest::timeout(300)) {
    RoomSpec room = RoomSpec::with_target_rt60({6.0, 5.0, 3.0}, 0.4, 24);
    CHECK(room.sabine_rt60() == doctest::Approx(0.4).epsilon(1e-6));
    const auto array = MicArraySpec::tetrahedral({2.7, 2.4, 1.4});
    const auto s = simulate_srir(room, array, {1.3, 1.1, 1.7});
    const double t60 = schroeder_t60(s.array_ir[0], room.fs);
    CHECK(t60 > 0.3);
    CHECK(t60 < 0.5);
    // independent oracle agrees
    CHECK(t60 == doctest::Approx(oracles::schroeder_t60_oracle(s.array_ir[0], room.fs)).epsilon(1e-6));
}

TEST_CASE("SRIR bank export/import round trip") {
    const auto tmp = std::filesystem::temp_directory_path() / "seldlab_srir_bank_test";
    std::filesystem::remove_all(tmp);
    RoomSpec room = RoomSpec::with_uniform_absorption({5.0, 4.0, 3.0}, 0.5, 4);
    const auto array = MicArraySpec::tetrahedral({2.5, 2.0, 1.5});
    std::vector<SrirBankEntry> bank;
    bank.push_back({"roomA", {1.0, 1.0, 1.0}, simulate_srir(room, array, {1.0, 1.0, 1.0})});
    bank.push_back({"roomA", {3.5, 2.8, 2.0}, simulate_srir(room, array, {3.5, 2.8, 2.0})});
    export_srir_bank(tmp, bank);
    CHECK(std::filesystem::exists(tmp / "srir_index.csv"));

    const auto loaded = import_srir_bank(tmp);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].room_id == "roomA");
    CHECK(loaded[0].srir.foa_ir.size() == 4);
    CHECK(loaded[0].srir.foa_ir[0].size() == bank[0].srir.foa_ir[0].size());
    CHECK(loaded[1].srir.rt60_nominal == doctest::Approx(bank[1].srir.rt60_nominal).epsilon(1e-3));
    std::filesystem::remove_all(tmp);
}
