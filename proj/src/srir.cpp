#include "seldlab/srir.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "seldlab/common.hpp"
#include "seldlab/fft.hpp"
#include "seldlab/kernels.hpp"

namespace seldlab::srir {

using acoustics::cplx;
using acoustics::Direction;

RoomSpec RoomSpec::with_uniform_absorption(Vec3 dims, double alpha, int max_order, int fs, double c) {
    RoomSpec r;
    r.dims = dims;
    r.absorption.fill(alpha);
    r.max_order = max_order;
    r.fs = fs;
    r.c = c;
    r.validate();
    return r;
}

RoomSpec RoomSpec::with_target_rt60(Vec3 dims, double rt60_s, int max_order, int fs, double c) {
    if (rt60_s <= 0.0) throw DataError("RoomSpec: target RT60 must be > 0");
    RoomSpec r;
    r.dims = dims;
    const double v = dims[0] * dims[1] * dims[2];
    const double s = 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2]);
    const double alpha = std::clamp(0.161 * v / (s * rt60_s), 1e-4, 1.0);
    r.absorption.fill(alpha);
    r.max_order = max_order;
    r.fs = fs;
    r.c = c;
    r.validate();
    return r;
}

void RoomSpec::validate() const {
    for (double d : dims)
        if (!(d > 0.0)) throw DataError("RoomSpec: dimensions must be > 0");
    for (double a : absorption)
        if (a < 0.0 || a > 1.0) throw DataError("RoomSpec: absorption outside [0,1]");
    if (max_order < 0) throw DataError("RoomSpec: max_order must be >= 0");
    if (fs <= 0 || c <= 0.0) throw DataError("RoomSpec: fs and c must be > 0");
}

bool RoomSpec::contains(const Vec3& p, double margin) const {
    for (int i = 0; i < 3; ++i)
        if (p[i] < margin || p[i] > dims[i] - margin) return false;
    return true;
}

double RoomSpec::sabine_rt60() const {
    const double sxy = dims[0] * dims[1], sxz = dims[0] * dims[2], syz = dims[1] * dims[2];
    const double a = syz * (absorption[0] + absorption[1]) + sxz * (absorption[2] + absorption[3]) +
                     sxy * (absorption[4] + absorption[5]);
    if (a <= 0.0) return 1e9;
    return 0.161 * volume() / a;
}

MicArraySpec MicArraySpec::tetrahedral(Vec3 center, double radius) {
    MicArraySpec m;
    m.center = center;
    m.radius = radius;
    m.capsule_dirs = {Direction::from_az_el_deg(45.0, 35.0), Direction::from_az_el_deg(-45.0, -35.0),
                      Direction::from_az_el_deg(135.0, -35.0), Direction::from_az_el_deg(-135.0, 35.0)};
    return m;
}

void MicArraySpec::validate(const RoomSpec& room) const {
    if (radius <= 0.0) throw DataError("MicArraySpec: radius must be > 0");
    if (!room.contains(center, radius)) throw DataError("MicArraySpec: array not fully inside the room");
    for (size_t i = 0; i < capsule_dirs.size(); ++i)
        for (size_t j = i + 1; j < capsule_dirs.size(); ++j)
            if (acoustics::angle_between(capsule_dirs[i], capsule_dirs[j]) < 1e-6)
                throw DataError("MicArraySpec: capsule directions must be pairwise distinct");
}

std::vector<ImageSource> enumerate_image_sources(const RoomSpec& room, const Vec3& src,
                                                 const Vec3& mic_center) {
    room.validate();
    if (!room.contains(src)) throw DataError("enumerate_image_sources: source outside the room");
    if (!room.contains(mic_center)) throw DataError("enumerate_image_sources: mic outside the room");
    if (dist(src, mic_center) < 1e-9)
        throw DataError("enumerate_image_sources: source coincides with the mic");

    const int O = room.max_order;
    // reflection amplitudes sqrt(1 - alpha) per wall, order x0,x1,y0,y1,z0,z1
    std::array<double, 6> beta;
    for (int w = 0; w < 6; ++w) beta[w] = std::sqrt(std::max(0.0, 1.0 - room.absorption[w]));

    std::vector<ImageSource> out;
    const int rmax = O / 2 + 1;
    for (int px = 0; px <= 1; ++px)
        for (int rx = -rmax; rx <= rmax; ++rx) {
            const int ox_lo = std::abs(rx - px), ox_hi = std::abs(rx);
            const int ox = ox_lo + ox_hi;
            if (ox > O) continue;
            const double x = (1 - 2 * px) * src[0] + 2.0 * rx * room.dims[0];
            for (int py = 0; py <= 1; ++py)
                for (int ry = -rmax; ry <= rmax; ++ry) {
                    const int oy_lo = std::abs(ry - py), oy_hi = std::abs(ry);
                    const int oy = oy_lo + oy_hi;
                    if (ox + oy > O) continue;
                    const double y = (1 - 2 * py) * src[1] + 2.0 * ry * room.dims[1];
                    for (int pz = 0; pz <= 1; ++pz)
                        for (int rz = -rmax; rz <= rmax; ++rz) {
                            const int oz_lo = std::abs(rz - pz), oz_hi = std::abs(rz);
                            const int order = ox + oy + oz_lo + oz_hi;
                            if (order > O) continue;
                            const double z = (1 - 2 * pz) * src[2] + 2.0 * rz * room.dims[2];

                            ImageSource im;
                            im.pos = {x, y, z};
                            im.order = order;
                            im.gain = std::pow(beta[0], ox_lo) * std::pow(beta[1], ox_hi) *
                                      std::pow(beta[2], oy_lo) * std::pow(beta[3], oy_hi) *
                                      std::pow(beta[4], oz_lo) * std::pow(beta[5], oz_hi);
                            if (im.gain <= 0.0) continue;  // fully absorbing wall on the path
                            im.dist = dist(im.pos, mic_center);
                            im.delay_s = im.dist / room.c;
                            im.doa = Direction::from_unit(x - mic_center[0], y - mic_center[1],
                                                          z - mic_center[2]);
                            out.push_back(im);
                        }
                }
        }
    // deterministic order: by delay, then position
    std::sort(out.begin(), out.end(), [](const ImageSource& a, const ImageSource& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.pos[0] != b.pos[0]) return a.pos[0] < b.pos[0];
        if (a.pos[1] != b.pos[1]) return a.pos[1] < b.pos[1];
        return a.pos[2] < b.pos[2];
    });
    return out;
}

long long image_count_closed_form(int max_order) {
    // per axis: 1 image of order 0, 2 images of each order >= 1
    auto axis = [max_order](int o) -> long long { return o == 0 ? 1 : 2; };
    long long total = 0;
    for (int ox = 0; ox <= max_order; ++ox)
        for (int oy = 0; oy + ox <= max_order; ++oy)
            for (int oz = 0; oz + oy + ox <= max_order; ++oz)
                total += axis(ox) * axis(oy) * axis(oz);
    return total;
}

RigidSphereTable::RigidSphereTable(double radius, int fs, size_t nfft, double c) {
    bins_ = nfft / 2 + 1;
    n_ang_ = 181;  // 1-degree grid over [0, pi]
    astep_ = kPi / double(n_ang_ - 1);
    re_.assign(n_ang_ * bins_, 0.0);
    im_.assign(n_ang_ * bins_, 0.0);

    const double df = double(fs) / double(nfft);
    const double kr_nyq = kTwoPi * (double(fs) / 2.0) / c * radius;
    const int n_top = acoustics::truncation_order(std::max(kr_nyq, 1.0));

    // Legendre values per angle
    std::vector<double> P(n_ang_ * size_t(n_top + 1));
    for (size_t a = 0; a < n_ang_; ++a) {
        const double x = std::cos(double(a) * astep_);
        double* row = P.data() + a * size_t(n_top + 1);
        row[0] = 1.0;
        if (n_top >= 1) row[1] = x;
        for (int n = 2; n <= n_top; ++n)
            row[n] = ((2.0 * n - 1.0) * x * row[n - 1] - (n - 1.0) * row[n - 2]) / double(n);
    }

    // Per-bin weighted mode strengths i^n (2n+1) conj(b_n): the renderer works
    // in the DFT time convention, the conjugate of the convention the mode
    // strength series is written in. psi here is measured from the arrival
    // direction, which absorbs the (-1)^n of the plane-wave series.
    std::vector<cplx> W(bins_ * size_t(n_top + 1));
    std::vector<int> order(bins_);
    for (size_t j = 0; j < bins_; ++j) {
        const double kr_raw = kTwoPi * df * double(j) / c * radius;
        const double kr = std::max(kr_raw, acoustics::kMinKR * 1.01);  // DC regularization
        const int nj = std::min(acoustics::truncation_order(kr), n_top);
        order[j] = nj;
        const auto b = acoustics::mode_strengths(nj, kr);
        cplx ip{1.0, 0.0};
        for (int n = 0; n <= nj; ++n) {
            W[j * size_t(n_top + 1) + size_t(n)] = ip * (2.0 * n + 1.0) * std::conj(b[size_t(n)]);
            ip *= cplx(0.0, 1.0);
        }
    }

    for (size_t a = 0; a < n_ang_; ++a) {
        const double* prow = P.data() + a * size_t(n_top + 1);
        double* rrow = re_.data() + a * bins_;
        double* irow = im_.data() + a * bins_;
        for (size_t j = 0; j < bins_; ++j) {
            const cplx* w = W.data() + j * size_t(n_top + 1);
            double sr = 0.0, si = 0.0;
            const int nj = order[j];
            for (int n = 0; n <= nj; ++n) {
                sr += w[n].real() * prow[n];
                si += w[n].imag() * prow[n];
            }
            rrow[j] = sr;
            irow[j] = si;
        }
    }
}

std::vector<std::vector<float>> render_array_rir(const std::vector<ImageSource>& images,
                                                 const MicArraySpec& array, int fs, size_t nfft,
                                                 double c, const RigidSphereTable* table,
                                                 size_t out_len) {
    if (nfft < 64 || (nfft & (nfft - 1)) != 0)
        throw DataError("render_array_rir: nfft must be a power of two >= 64");
    const size_t bins = nfft / 2 + 1;
    std::optional<RigidSphereTable> own;
    if (!table) {
        own.emplace(array.radius, fs, nfft, c);
        table = &*own;
    }

    double max_delay = 0.0;
    for (const auto& im : images) max_delay = std::max(max_delay, im.delay_s);
    if (max_delay * fs + 512.0 > double(nfft))
        std::fprintf(stderr,
                     "[seldlab] warning: render_array_rir: max delay %.3fs exceeds the nfft "
                     "window, output will alias\n",
                     max_delay);

    std::vector<std::vector<double>> accre(4, std::vector<double>(bins, 0.0)),
        accim(4, std::vector<double>(bins, 0.0));
    std::vector<double> phre(bins), phim(bins);

    const auto& K = kern::table();
    const double dphi_per_m = -kTwoPi * (double(fs) / double(nfft)) / c;
    const double astep = table->angle_step();
    const size_t n_ang = table->angles();

    for (const auto& im : images) {
        const double d = std::max(im.dist, 1e-3);
        K.phase_ramp(bins, 0.0, dphi_per_m * d, phre.data(), phim.data());
        const double amp = im.gain / (4.0 * kPi * d);
        for (int r = 0; r < 4; ++r) {
            const double psi = acoustics::angle_between(array.capsule_dirs[size_t(r)], im.doa);
            double af = psi / astep;
            size_t a0 = size_t(std::min(double(n_ang - 2), std::floor(af)));
            const double t = std::clamp(af - double(a0), 0.0, 1.0);
            K.foa_accum(bins, t, table->row_re(a0), table->row_im(a0), table->row_re(a0 + 1),
                        table->row_im(a0 + 1), phre.data(), phim.data(), amp,
                        accre[size_t(r)].data(), accim[size_t(r)].data());
        }
    }

    // raised-cosine taper over the top octave keeps fractional-delay pulses compact
    const double f_ny = double(fs) / 2.0;
    const double f_edge = 0.85 * f_ny;
    const double df = double(fs) / double(nfft);
    std::vector<double> taper(bins, 1.0);
    for (size_t j = 0; j < bins; ++j) {
        const double f = df * double(j);
        if (f > f_edge) taper[j] = 0.5 * (1.0 + std::cos(kPi * (f - f_edge) / (f_ny - f_edge)));
    }

    dsp::Fft plan(nfft);
    if (out_len == 0) out_len = nfft;
    out_len = std::min(out_len, nfft);
    std::vector<std::vector<float>> out(4);
    std::vector<cplx> spec(bins);
    for (int r = 0; r < 4; ++r) {
        for (size_t j = 0; j < bins; ++j)
            spec[j] = cplx(accre[size_t(r)][j] * taper[j], accim[size_t(r)][j] * taper[j]);
        const auto td = plan.irfft(spec.data(), bins);
        out[size_t(r)].assign(td.begin(), td.begin() + long(out_len));
    }
    return out;
}

namespace {

// 4x4 complex inverse by Gauss-Jordan with partial pivoting.
std::array<std::array<cplx, 4>, 4> inv4(std::array<std::array<cplx, 4>, 4> a) {
    std::array<std::array<cplx, 4>, 4> inv{};
    for (int i = 0; i < 4; ++i) inv[i][i] = 1.0;
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-14) throw NumericError("encode_foa: singular SH matrix");
        std::swap(a[piv], a[col]);
        std::swap(inv[piv], inv[col]);
        const cplx s = 1.0 / a[col][col];
        for (int j = 0; j < 4; ++j) {
            a[col][j] *= s;
            inv[col][j] *= s;
        }
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const cplx f = a[r][col];
            if (f == cplx{}) continue;
            for (int j = 0; j < 4; ++j) {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    return inv;
}

}  // namespace

namespace {

// Fibonacci sphere grid for the encoder design fit.
std::vector<Direction> design_grid(int q_count) {
    std::vector<Direction> grid;
    for (int q = 0; q < q_count; ++q) {
        const double z = 1.0 - 2.0 * (q + 0.5) / q_count;
        double az = std::fmod(2.399963229728653 * q, kTwoPi) - kPi;
        grid.push_back(Direction::from_colat_az(std::acos(std::clamp(z, -1.0, 1.0)), az));
    }
    return grid;
}

}  // namespace

// The per-bin encoding matrix E(k) solves the regularized least-squares fit
// E * X(k) ~ A over a direction grid: X holds the modeled rigid-sphere array
// responses and A the target real ACN/SN3D channels. This is the projection
// plus mode equalization of the analytic route in one inversion, with the
// higher-order leakage of the 4-capsule array handled in the average sense
// and the regularization capping the white-noise gain at +20 dB per channel.
std::vector<std::vector<float>> encode_foa(const std::vector<std::vector<float>>& array_ir,
                                           const MicArraySpec& array, int fs, double c) {
    if (array_ir.size() != 4) throw DataError("encode_foa: expected exactly 4 input channels");
    const size_t L = array_ir[0].size();
    for (const auto& ch : array_ir)
        if (ch.size() != L) throw DataError("encode_foa: ragged channels");
    if (L == 0) throw DataError("encode_foa: empty input");

    const size_t nfft = dsp::next_pow2(L + 4096);
    const size_t bins = nfft / 2 + 1;
    dsp::Fft plan(nfft);

    // geometry sanity via the first-order SH Gram matrix
    {
        std::array<std::array<cplx, 4>, 4> Y{};
        const int ord[4] = {0, 1, 1, 1};
        const int deg[4] = {0, -1, 0, 1};
        for (int r = 0; r < 4; ++r)
            for (int m = 0; m < 4; ++m)
                Y[size_t(r)][size_t(m)] =
                    acoustics::sph_harmonic(ord[m], deg[m], array.capsule_dirs[size_t(r)]);
        std::array<std::array<cplx, 4>, 4> G{};
        double tr = 0.0, mn = 1e300;
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 4; ++j) {
                cplx s{};
                for (int r = 0; r < 4; ++r) s += std::conj(Y[size_t(r)][size_t(i)]) * Y[size_t(r)][size_t(j)];
                G[size_t(i)][size_t(j)] = s;
            }
        }
        // Gershgorin-style bound is enough to catch a degenerate layout
        for (int i = 0; i < 4; ++i) {
            double off = 0.0;
            for (int j = 0; j < 4; ++j)
                if (j != i) off += std::abs(G[size_t(i)][size_t(j)]);
            mn = std::min(mn, G[size_t(i)][size_t(i)].real() - off);
            tr += G[size_t(i)][size_t(i)].real();
        }
        if (mn <= tr / 4.0 * 1e-12)
            throw NumericError("encode_foa: capsule geometry is ill-conditioned (cond > 1e6)");
    }

    const int Q = 240;
    const auto grid = design_grid(Q);
    const double kr_nyq = kTwoPi * (fs / 2.0) / c * array.radius;
    const int n_top = acoustics::truncation_order(std::max(kr_nyq, 1.0));

    // Legendre values for every (capsule, grid direction) pair
    std::vector<double> P(size_t(4 * Q) * size_t(n_top + 1));
    for (int r = 0; r < 4; ++r)
        for (int q = 0; q < Q; ++q) {
            const double x = std::cos(acoustics::angle_between(array.capsule_dirs[size_t(r)], grid[size_t(q)]));
            double* row = P.data() + (size_t(r) * Q + q) * size_t(n_top + 1);
            row[0] = 1.0;
            row[1] = x;
            for (int n = 2; n <= n_top; ++n)
                row[n] = ((2.0 * n - 1.0) * x * row[n - 1] - (n - 1.0) * row[n - 2]) / double(n);
        }

    std::vector<std::array<double, 4>> target(static_cast<size_t>(Q));
    for (int q = 0; q < Q; ++q)
        target[size_t(q)] = {acoustics::real_sph_harmonic(0, 0, grid[size_t(q)]),
                             acoustics::real_sph_harmonic(1, -1, grid[size_t(q)]),
                             acoustics::real_sph_harmonic(1, 0, grid[size_t(q)]),
                             acoustics::real_sph_harmonic(1, 1, grid[size_t(q)])};

    // design on a decimated bin grid, then interpolate E(k) between knots
    const size_t step = 8;
    const size_t knots = (bins + step - 1) / step + 1;
    std::vector<std::array<std::array<cplx, 4>, 4>> E(knots);
    const double df = double(fs) / double(nfft);
    const double wng_cap = std::pow(10.0, 20.0 / 10.0);  // +20 dB per channel

    std::vector<cplx> Xm(size_t(4) * Q);
    for (size_t kn = 0; kn < knots; ++kn) {
        const size_t j = std::min(kn * step, bins - 1);
        const double kr = std::max(kTwoPi * df * double(j) / c * array.radius,
                                   acoustics::kMinKR * 1.01);
        const int nj = std::min(acoustics::truncation_order(kr), n_top);
        const auto b = acoustics::mode_strengths(nj, kr);
        std::vector<cplx> w(size_t(nj) + 1);
        cplx ip{1.0, 0.0};
        for (int n = 0; n <= nj; ++n) {
            w[size_t(n)] = ip * (2.0 * n + 1.0) * std::conj(b[size_t(n)]);
            ip *= cplx(0.0, 1.0);
        }
        for (int rq = 0; rq < 4 * Q; ++rq) {
            const double* prow = P.data() + size_t(rq) * size_t(n_top + 1);
            double sr = 0.0, si = 0.0;
            for (int n = 0; n <= nj; ++n) {
                sr += w[size_t(n)].real() * prow[n];
                si += w[size_t(n)].imag() * prow[n];
            }
            Xm[size_t(rq)] = {sr, si};
        }
        // G = X X^H, B = A X^H
        std::array<std::array<cplx, 4>, 4> G{}, Bm{};
        for (int i = 0; i < 4; ++i)
            for (int r = 0; r < 4; ++r) {
                cplx sg{}, sb{};
                for (int q = 0; q < Q; ++q) {
                    sg += Xm[size_t(i) * Q + q] * std::conj(Xm[size_t(r) * Q + q]);
                    sb += target[size_t(q)][size_t(i)] * std::conj(Xm[size_t(r) * Q + q]);
                }
                G[size_t(i)][size_t(r)] = sg;
                Bm[size_t(i)][size_t(r)] = sb;
            }
        double tr = 0.0;
        for (int i = 0; i < 4; ++i) tr += G[size_t(i)][size_t(i)].real();
        double lam = 1e-4 * tr / 4.0 + 1e-30;
        for (int iter = 0; iter < 24; ++iter) {
            auto Greg = G;
            for (int i = 0; i < 4; ++i) Greg[size_t(i)][size_t(i)] += lam;
            const auto Gi = inv4(Greg);
            std::array<std::array<cplx, 4>, 4> Ek{};
            double wng = 0.0;
            for (int ch = 0; ch < 4; ++ch) {
                double row = 0.0;
                for (int r = 0; r < 4; ++r) {
                    cplx s{};
                    for (int m = 0; m < 4; ++m) s += Bm[size_t(ch)][size_t(m)] * Gi[size_t(m)][size_t(r)];
                    Ek[size_t(ch)][size_t(r)] = s;
                    row += std::norm(s);
                }
                wng = std::max(wng, row);
            }
            if (wng <= wng_cap || iter == 23) {
                E[kn] = Ek;
                break;
            }
            lam *= 4.0;
        }
    }

    // input spectra
    std::vector<std::vector<cplx>> X(4);
    std::vector<double> tmp(L);
    for (int r = 0; r < 4; ++r) {
        for (size_t i = 0; i < L; ++i) tmp[i] = double(array_ir[size_t(r)][i]);
        X[size_t(r)] = plan.rfft(tmp.data(), L);
    }

    std::vector<std::vector<cplx>> A(4, std::vector<cplx>(bins));
    for (size_t j = 0; j < bins; ++j) {
        const size_t kn = j / step;
        const double t = double(j - kn * step) / double(step);
        const auto& E0 = E[kn];
        const auto& E1 = E[std::min(kn + 1, knots - 1)];
        for (int ch = 0; ch < 4; ++ch) {
            cplx s{};
            for (int r = 0; r < 4; ++r) {
                const cplx e = (1.0 - t) * E0[size_t(ch)][size_t(r)] + t * E1[size_t(ch)][size_t(r)];
                s += e * X[size_t(r)][j];
            }
            A[size_t(ch)][j] = s;
        }
    }

    std::vector<std::vector<float>> out(4);
    for (int ch = 0; ch < 4; ++ch) {
        const auto td = plan.irfft(A[size_t(ch)].data(), bins);
        out[size_t(ch)].assign(td.begin(), td.begin() + long(L));
    }
    return out;
}

Srir simulate_srir(const RoomSpec& room, const MicArraySpec& array, const Vec3& src) {
    room.validate();
    array.validate(room);
    const auto images = enumerate_image_sources(room, src, array.center);

    double max_delay = 0.0;
    for (const auto& im : images) max_delay = std::max(max_delay, im.delay_s);
    const size_t need = size_t(std::ceil(max_delay * room.fs)) + 1536;
    const size_t nfft = dsp::next_pow2(2 * need);

    Srir s;
    s.fs = room.fs;
    s.array_ir = render_array_rir(images, array, room.fs, nfft, room.c, nullptr, need);
    s.foa_ir = encode_foa(s.array_ir, array, room.fs, room.c);
    s.source_doa = Direction::from_unit(src[0] - array.center[0], src[1] - array.center[1],
                                        src[2] - array.center[2]);
    s.rt60_nominal = room.sabine_rt60();
    return s;
}

std::vector<double> schroeder_curve_db(const std::vector<float>& ir) {
    std::vector<double> edc(ir.size());
    double acc = 0.0;
    for (size_t i = ir.size(); i-- > 0;) {
        acc += double(ir[i]) * double(ir[i]);
        edc[i] = acc;
    }
    const double total = acc > 0.0 ? acc : 1e-300;
    for (auto& v : edc) v = 10.0 * std::log10(std::max(v / total, 1e-30));
    return edc;
}

double schroeder_t60(const std::vector<float>& ir, int fs) {
    const auto edc = schroeder_curve_db(ir);
    size_t i5 = 0, i25 = 0;
    for (size_t i = 0; i < edc.size(); ++i) {
        if (edc[i] <= -5.0) {
            i5 = i;
            break;
        }
    }
    for (size_t i = i5; i < edc.size(); ++i) {
        if (edc[i] <= -25.0) {
            i25 = i;
            break;
        }
    }
    if (i25 <= i5 + 4) return 0.0;
    // least-squares line over [-5, -25] dB span
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = double(i25 - i5 + 1);
    for (size_t i = i5; i <= i25; ++i) {
        const double x = double(i) / fs;
        sx += x;
        sy += edc[i];
        sxx += x * x;
        sxy += x * edc[i];
    }
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-30) return 0.0;
    const double slope = (n * sxy - sx * sy) / denom;  // dB per second
    if (slope >= -1e-9) return 0.0;
    return -60.0 / slope;
}

void export_srir_bank(const std::filesystem::path& dir, const std::vector<SrirBankEntry>& bank) {
    std::filesystem::create_directories(dir);
    std::ofstream idx(dir / "srir_index.csv");
    if (!idx) throw DataError("export_srir_bank: cannot write index");
    idx << "room_id,src_x,src_y,src_z,azimuth_deg,elevation_deg,rt60_nominal_s\n";
    std::map<std::string, int> counter;
    char buf[256];
    for (const auto& e : bank) {
        const int k = counter[e.room_id]++;
        std::snprintf(buf, sizeof(buf), "%s_srir%03d.wav", e.room_id.c_str(), k);
        dsp::Audio a;
        a.fs = e.srir.fs;
        a.ch = e.srir.foa_ir;
        dsp::write_wav_f32(dir / buf, a);
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.4f,%.4f,%.4f\n", e.room_id.c_str(),
                      e.src[0], e.src[1], e.src[2], e.srir.source_doa.azimuth_deg(),
                      e.srir.source_doa.elevation_deg(), e.srir.rt60_nominal);
        idx << buf;
    }
}

std::vector<SrirBankEntry> import_srir_bank(const std::filesystem::path& dir) {
    std::ifstream idx(dir / "srir_index.csv");
    if (!idx) throw DataError("import_srir_bank: missing srir_index.csv in " + dir.string());
    std::string line;
    std::getline(idx, line);  // header
    std::vector<SrirBankEntry> bank;
    std::map<std::string, int> counter;
    char buf[256];
    while (std::getline(idx, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 7) throw DataError("import_srir_bank: malformed index row: " + line);
        SrirBankEntry e;
        e.room_id = cells[0];
        e.src = {std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])};
        const int k = counter[e.room_id]++;
        std::snprintf(buf, sizeof(buf), "%s_srir%03d.wav", e.room_id.c_str(), k);
        const auto a = dsp::read_wav_f32(dir / buf);
        if (a.channels() != 4) throw DataError("import_srir_bank: SRIR wav must have 4 channels");
        e.srir.fs = a.fs;
        e.srir.foa_ir = a.ch;
        e.srir.source_doa = Direction::from_az_el_deg(std::stod(cells[4]), std::stod(cells[5]));
        e.srir.rt60_nominal = std::stod(cells[6]);
        bank.push_back(std::move(e));
    }
    return bank;
}

}  // namespace seldlab::srir
