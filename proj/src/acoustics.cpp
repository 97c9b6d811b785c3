#include "seldlab/acoustics.hpp"

#include <algorithm>
#include <cmath>

namespace seldlab::acoustics {
namespace {

double checked_x(double x, const char* who) {
    if (std::abs(x) > 1.0 + 1e-12) throw std::domain_error(std::string(who) + ": |x| > 1");
    return std::clamp(x, -1.0, 1.0);
}

}  // namespace

Direction Direction::from_colat_az(double colat, double az) {
    if (colat < -1e-12 || colat > kPi + 1e-12) throw std::domain_error("Direction: colatitude outside [0, pi]");
    colat = std::clamp(colat, 0.0, kPi);
    // wrap azimuth to (-pi, pi]
    az = std::fmod(az, kTwoPi);
    if (az <= -kPi) az += kTwoPi;
    if (az > kPi) az -= kTwoPi;
    return {colat, az};
}

Direction Direction::from_az_el_deg(double az_deg, double el_deg) {
    return from_colat_az(deg2rad(90.0 - el_deg), deg2rad(az_deg));
}

Direction Direction::from_unit(double x, double y, double z) {
    const double r = std::sqrt(x * x + y * y + z * z);
    if (r < 1e-300) throw std::domain_error("Direction: zero vector");
    const double colat = std::acos(std::clamp(z / r, -1.0, 1.0));
    const double az = (x == 0.0 && y == 0.0) ? 0.0 : std::atan2(y, x);
    return from_colat_az(colat, az);
}

void Direction::to_unit(double& x, double& y, double& z) const {
    const double s = std::sin(colat);
    x = s * std::cos(az);
    y = s * std::sin(az);
    z = std::cos(colat);
}

double angle_between(const Direction& a, const Direction& b) {
    double ax, ay, az_, bx, by, bz;
    a.to_unit(ax, ay, az_);
    b.to_unit(bx, by, bz);
    const double d = std::clamp(ax * bx + ay * by + az_ * bz, -1.0, 1.0);
    return std::acos(d);
}

double legendre(int n, double x) {
    if (n < 0) throw std::domain_error("legendre: n < 0");
    x = checked_x(x, "legendre");
    if (n == 0) return 1.0;
    if (n == 1) return x;
    double pm2 = 1.0, pm1 = x;
    for (int k = 2; k <= n; ++k) {
        const double p = ((2.0 * k - 1.0) * x * pm1 - (k - 1.0) * pm2) / double(k);
        pm2 = pm1;
        pm1 = p;
    }
    return pm1;
}

double assoc_legendre(int n, int m, double x) {
    if (n < 0 || m < 0) throw std::domain_error("assoc_legendre: negative order");
    if (m > n) throw std::domain_error("assoc_legendre: unsupported order m > n");
    x = checked_x(x, "assoc_legendre");
    if (m == 0) return legendre(n, x);

    // P_m^m = (-1)^m (2m-1)!! (1-x^2)^{m/2}
    double pmm = 1.0;
    const double sx = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
    double fact = 1.0;
    for (int i = 0; i < m; ++i) {
        pmm *= -fact * sx;
        fact += 2.0;
    }
    if (n == m) return pmm;
    double pmm1 = x * (2.0 * m + 1.0) * pmm;  // P_{m+1}^m
    if (n == m + 1) return pmm1;
    double p = 0.0;
    for (int k = m + 2; k <= n; ++k) {
        p = (x * (2.0 * k - 1.0) * pmm1 - (k + m - 1.0) * pmm) / double(k - m);
        pmm = pmm1;
        pmm1 = p;
    }
    return p;
}

void sph_bessel_jy(int n_max, double x, std::vector<double>& j, std::vector<double>& y) {
    if (x <= 0.0) throw NumericError("sph_bessel_jy: x <= 0");
    if (n_max < 0) throw std::domain_error("sph_bessel_jy: n_max < 0");
    j.assign(size_t(n_max) + 1, 0.0);
    y.assign(size_t(n_max) + 1, 0.0);

    const double sx = std::sin(x), cx = std::cos(x);
    y[0] = -cx / x;
    if (n_max >= 1) y[1] = -cx / (x * x) - sx / x;
    for (int n = 2; n <= n_max; ++n) y[n] = (2.0 * n - 1.0) / x * y[n - 1] - y[n - 2];

    if (double(n_max) < x) {
        // upward recurrence is stable here
        j[0] = sx / x;
        if (n_max >= 1) j[1] = sx / (x * x) - cx / x;
        for (int n = 2; n <= n_max; ++n) j[n] = (2.0 * n - 1.0) / x * j[n - 1] - j[n - 2];
        return;
    }

    // Miller's downward recurrence
    const int start = n_max + 24 + int(1.5 * x);
    double fp1 = 0.0, f = 1e-300;
    std::vector<double> tmp(size_t(n_max) + 1, 0.0);
    for (int n = start; n >= 1; --n) {
        const double fm1 = (2.0 * n + 1.0) / x * f - fp1;
        fp1 = f;
        f = fm1;
        if (n - 1 <= n_max) tmp[size_t(n - 1)] = f;
        if (std::abs(f) > 1e250) {  // rescale to avoid overflow
            const double s = 1e-250;
            f *= s;
            fp1 *= s;
            for (auto& v : tmp) v *= s;
        }
    }
    const double j0 = sx / x;
    double scale;
    if (std::abs(j0) > 1e-12 && std::abs(tmp[0]) > 0.0) {
        scale = j0 / tmp[0];
    } else {
        const double j1 = sx / (x * x) - cx / x;
        scale = j1 / tmp[std::min<size_t>(1, size_t(n_max))];
    }
    for (int n = 0; n <= n_max; ++n) j[size_t(n)] = tmp[size_t(n)] * scale;
}

cplx sph_hankel1_deriv(int n, double x) {
    if (x <= 0.0) throw NumericError("sph_hankel1_deriv: x <= 0 (singularity)");
    if (n < 0) throw std::domain_error("sph_hankel1_deriv: n < 0");
    std::vector<double> j, y;
    sph_bessel_jy(n + 1, x, j, y);
    const cplx hn{j[size_t(n)], y[size_t(n)]};
    const cplx hn1{j[size_t(n) + 1], y[size_t(n) + 1]};
    if (n == 0) return -hn1;
    const cplx hnm1{j[size_t(n) - 1], y[size_t(n) - 1]};
    return hnm1 - (double(n) + 1.0) / x * hn;
}

cplx mode_strength(int n, double kR) {
    if (n < 0) throw std::domain_error("mode_strength: n < 0");
    if (kR <= kMinKR) throw NumericError("mode_strength: kR at or below the DC guard");
    const cplx hp = sph_hankel1_deriv(n, kR);
    return cplx(0.0, 1.0) / (kR * kR * hp);
}

std::vector<cplx> mode_strengths(int n_max, double kR) {
    if (kR <= kMinKR) throw NumericError("mode_strengths: kR at or below the DC guard");
    std::vector<double> j, y;
    sph_bessel_jy(n_max + 1, kR, j, y);
    std::vector<cplx> b(size_t(n_max) + 1);
    for (int n = 0; n <= n_max; ++n) {
        cplx hp;
        if (n == 0) {
            hp = -cplx(j[1], y[1]);
        } else {
            hp = cplx(j[size_t(n) - 1], y[size_t(n) - 1]) -
                 (double(n) + 1.0) / kR * cplx(j[size_t(n)], y[size_t(n)]);
        }
        b[size_t(n)] = cplx(0.0, 1.0) / (kR * kR * hp);
    }
    return b;
}

int truncation_order(double kR) {
    // margin calibrated so doubling n_max moves the response by < 1e-8
    // relative for kR <= 20
    const int n = int(std::ceil(2.718281828459045 * kR / 2.0)) + 14;
    return std::max(8, n);
}

cplx rigid_sphere_response(const Wavenumber& k, const SphereSpec& sphere, double psi, int n_max) {
    if (psi < -1e-12 || psi > kPi + 1e-12) throw std::domain_error("rigid_sphere_response: psi outside [0, pi]");
    if (n_max < 0) throw std::domain_error("rigid_sphere_response: n_max < 0");
    const double kR = k.k * sphere.radius;
    const auto b = mode_strengths(n_max, kR);
    // psi is measured from the arrival direction; the plane-wave series runs
    // over the angle from the propagation direction, i.e. P_n(-cos psi).
    const double x = -std::cos(std::clamp(psi, 0.0, kPi));

    cplx acc{0.0, 0.0};
    cplx i_pow{1.0, 0.0};
    double pm2 = 0.0, pm1 = 0.0;
    for (int n = 0; n <= n_max; ++n) {
        double pn;
        if (n == 0)
            pn = 1.0;
        else if (n == 1)
            pn = x;
        else
            pn = ((2.0 * n - 1.0) * x * pm1 - (n - 1.0) * pm2) / double(n);
        acc += i_pow * (2.0 * n + 1.0) * b[size_t(n)] * pn;
        pm2 = pm1;
        pm1 = pn;
        i_pow *= cplx(0.0, 1.0);
    }
    return acc;
}

cplx sph_harmonic(int n, int m, const Direction& dir) {
    if (n < 0) throw std::domain_error("sph_harmonic: n < 0");
    if (std::abs(m) > n) throw std::domain_error("sph_harmonic: unsupported order |m| > n");
    if (m < 0) {
        const cplx ypos = sph_harmonic(n, -m, dir);
        const double sign = ((-m) % 2 == 0) ? 1.0 : -1.0;
        return sign * std::conj(ypos);
    }
    double norm = (2.0 * n + 1.0) / (4.0 * kPi);
    for (int i = n - m + 1; i <= n + m; ++i) norm /= double(i);
    const double pnm = assoc_legendre(n, m, std::cos(dir.colat));
    const double amp = std::sqrt(norm) * pnm;
    return {amp * std::cos(m * dir.az), amp * std::sin(m * dir.az)};
}

double real_sph_harmonic(int n, int m, const Direction& dir) {
    if (n < 0) throw std::domain_error("real_sph_harmonic: n < 0");
    const int am = std::abs(m);
    if (am > n) throw std::domain_error("real_sph_harmonic: unsupported order |m| > n");
    const double x = std::cos(dir.colat);
    if (m == 0) return legendre(n, x);
    double norm = 2.0;
    for (int i = n - am + 1; i <= n + am; ++i) norm /= double(i);
    const double cs = (am % 2 == 0) ? 1.0 : -1.0;  // undo the Condon-Shortley phase
    const double amp = cs * std::sqrt(norm) * assoc_legendre(n, am, x);
    return m > 0 ? amp * std::cos(am * dir.az) : amp * std::sin(am * dir.az);
}

}  // namespace seldlab::acoustics
