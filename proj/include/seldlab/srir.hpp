#pragma once

#include <array>
#include <complex>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seldlab/acoustics.hpp"
#include "seldlab/audio_io.hpp"

namespace seldlab::srir {

using Vec3 = std::array<double, 3>;

inline double dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

struct RoomSpec {
    Vec3 dims{6.0, 5.0, 3.0};             // meters
    std::array<double, 6> absorption{};   // walls x0,x1,y0,y1,z0,z1, each in [0,1]
    int max_order = 20;
    double c = 343.0;
    int fs = 24000;

    static RoomSpec with_uniform_absorption(Vec3 dims, double alpha, int max_order,
                                            int fs = 24000, double c = 343.0);
    // Chooses a uniform absorption so that Sabine's formula hits the target RT60.
    static RoomSpec with_target_rt60(Vec3 dims, double rt60_s, int max_order,
                                     int fs = 24000, double c = 343.0);

    void validate() const;
    bool contains(const Vec3& p, double margin = 0.0) const;
    double volume() const { return dims[0] * dims[1] * dims[2]; }
    double surface() const {
        return 2.0 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2]);
    }
    // Sabine RT60 = 0.161 V / sum(S_i alpha_i)
    double sabine_rt60() const;
};

struct MicArraySpec {
    Vec3 center{0.0, 0.0, 0.0};
    double radius = 0.015;
    std::array<acoustics::Direction, 4> capsule_dirs;

    // Tetrahedral layout: (az, el) = (45,35), (-45,-35), (135,-35), (-135,35) deg.
    static MicArraySpec tetrahedral(Vec3 center, double radius = 0.015);
    void validate(const RoomSpec& room) const;
};

struct ImageSource {
    Vec3 pos;
    int order = 0;
    double gain = 1.0;    // product of wall reflection amplitudes sqrt(1-alpha)
    double dist = 0.0;    // to the array center
    double delay_s = 0.0;
    acoustics::Direction doa;  // from the array center toward the image
};

std::vector<ImageSource> enumerate_image_sources(const RoomSpec& room, const Vec3& src,
                                                 const Vec3& mic_center);

// Closed-form count of shoebox images with total reflection order <= max_order
// (per axis there is 1 image of order 0 and 2 of every order >= 1).
long long image_count_closed_form(int max_order);

// Rigid-sphere responses H(k, psi) tabulated over a 1-degree psi grid and all
// rfft bins; built once per (radius, fs, nfft) and shared across renders.
class RigidSphereTable {
  public:
    RigidSphereTable(double radius, int fs, size_t nfft, double c);
    size_t bins() const { return bins_; }
    size_t angles() const { return n_ang_; }
    const double* row_re(size_t a) const { return re_.data() + a * bins_; }
    const double* row_im(size_t a) const { return im_.data() + a * bins_; }
    double angle_step() const { return astep_; }

  private:
    size_t bins_, n_ang_;
    double astep_;
    std::vector<double> re_, im_;
};

struct Srir {
    std::vector<std::vector<float>> array_ir;  // 4 x L, capsule order per MicArraySpec
    std::vector<std::vector<float>> foa_ir;    // 4 x L, ACN/SN3D (W,Y,Z,X)
    acoustics::Direction source_doa;           // direct path, array frame
    double rt60_nominal = 0.0;
    int fs = 24000;
};

// Frequency-domain render: for each image, gain/(4 pi d) * e^{-ikd} * H(k, psi)
// accumulated per capsule, then a raised-cosine taper over the top octave and
// an inverse transform. Fractional delays are exact through the phase term.
std::vector<std::vector<float>> render_array_rir(const std::vector<ImageSource>& images,
                                                 const MicArraySpec& array, int fs, size_t nfft,
                                                 double c = 343.0,
                                                 const RigidSphereTable* table = nullptr,
                                                 size_t out_len = 0);

// a(k) = B(k)^+ Y^+ x(k): per-bin SH projection, per-order regularized mode
// equalization, and conversion to real ACN/SN3D channels (W,Y,Z,X).
std::vector<std::vector<float>> encode_foa(const std::vector<std::vector<float>>& array_ir,
                                           const MicArraySpec& array, int fs, double c = 343.0);

Srir simulate_srir(const RoomSpec& room, const MicArraySpec& array, const Vec3& src);

// Schroeder backward integration; returns T60 extrapolated from the -5..-25 dB
// fit of the energy decay curve (times in seconds).
double schroeder_t60(const std::vector<float>& ir, int fs);
std::vector<double> schroeder_curve_db(const std::vector<float>& ir);

// One bank entry as exported/imported on disk.
struct SrirBankEntry {
    std::string room_id;
    Vec3 src;
    Srir srir;
};

// 4-channel float WAV per (room, src) plus srir_index.csv.
void export_srir_bank(const std::filesystem::path& dir, const std::vector<SrirBankEntry>& bank);
std::vector<SrirBankEntry> import_srir_bank(const std::filesystem::path& dir);

}  // namespace seldlab::srir
