#pragma once

#include <complex>
#include <vector>

#include "seldlab/common.hpp"

namespace seldlab::acoustics {

using cplx = std::complex<double>;

// k = 2*pi*f/c
struct Wavenumber {
    double k = 0.0;
    double f = 0.0;
    double c = 343.0;

    static Wavenumber from_freq(double f, double c) {
        if (c <= 0.0) throw std::domain_error("Wavenumber: c must be > 0");
        if (f < 0.0) throw std::domain_error("Wavenumber: f must be >= 0");
        return {kTwoPi * f / c, f, c};
    }
};

struct SphereSpec {
    double radius = 0.015;  // meters
};

// Internal angle convention is colatitude: theta in [0, pi] measured from +z,
// phi in (-pi, pi]. Elevation-based APIs convert at the boundary.
struct Direction {
    double colat = 0.0;
    double az = 0.0;

    static Direction from_colat_az(double colat, double az);
    static Direction from_az_el_deg(double az_deg, double el_deg);
    static Direction from_unit(double x, double y, double z);

    void to_unit(double& x, double& y, double& z) const;
    double azimuth_deg() const { return rad2deg(az); }
    double elevation_deg() const { return 90.0 - rad2deg(colat); }
};

// Angle between two directions, radians.
double angle_between(const Direction& a, const Direction& b);

// Legendre polynomial P_n(x) by the Bonnet recurrence. |x| <= 1 (+1e-12 slack).
double legendre(int n, double x);

// Associated Legendre P_n^m(x), Condon-Shortley phase included. 0 <= m <= n.
double assoc_legendre(int n, int m, double x);

// Spherical Bessel functions j_0..j_nmax and y_0..y_nmax at x > 0.
// j uses downward (Miller) recurrence where the upward one is unstable.
void sph_bessel_jy(int n_max, double x, std::vector<double>& j, std::vector<double>& y);

// d/dx h_n^{(1)}(x), x > 0.
cplx sph_hankel1_deriv(int n, double x);

// Below this the rigid-sphere mode strength diverges; callers substitute the
// response at kR_min for lower bins.
inline constexpr double kMinKR = 1e-4;

// Mode strength of order n on a rigid sphere: b_n = i / ((kR)^2 h_n^{(1)'}(kR)).
cplx mode_strength(int n, double kR);

// Vector of b_0..b_nmax sharing one Bessel evaluation.
std::vector<cplx> mode_strengths(int n_max, double kR);

// Truncation rule for the rigid-sphere series.
int truncation_order(double kR);

// H(k, psi) = sum_n i^n (2n+1) b_n(kR) P_n(cos psi), psi = angle between the
// microphone orientation and the source DOA.
cplx rigid_sphere_response(const Wavenumber& k, const SphereSpec& sphere, double psi, int n_max);

// Orthonormal complex spherical harmonic Y_n^m, |m| <= n.
cplx sph_harmonic(int n, int m, const Direction& dir);

// Real-valued SH under the ambisonics SN3D normalization with the
// Condon-Shortley phase compensated: m>0 pairs with cos(m phi), m<0 with
// sin(|m| phi). (n,m)=(0,0) is the constant 1.
double real_sph_harmonic(int n, int m, const Direction& dir);

}  // namespace seldlab::acoustics
