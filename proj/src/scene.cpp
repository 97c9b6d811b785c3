#include "seldlab/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seldlab/common.hpp"
#include "seldlab/fft.hpp"
#include "seldlab/util.hpp"

namespace seldlab::scene {

using json = nlohmann::json;

namespace {

void apply_env(std::vector<float>& w, int fs) {
    const size_t a = size_t(0.02 * fs), r = size_t(0.05 * fs);
    for (size_t i = 0; i < w.size(); ++i) {
        double g = 1.0;
        if (i < a) g = double(i) / double(a);
        if (w.size() - i <= r) g = std::min(g, double(w.size() - i) / double(r));
        w[i] = float(w[i] * g);
    }
}

void peak_normalize(std::vector<float>& w, float peak) {
    float mx = 0.0f;
    for (float v : w) mx = std::max(mx, std::abs(v));
    if (mx > 1e-12f)
        for (auto& v : w) v = v / mx * peak;
}

struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
    double z1 = 0, z2 = 0;
    float step(float x) {
        const double y = b0 * x + z1;
        z1 = b1 * x - a1 * y + z2;
        z2 = b2 * x - a2 * y;
        return float(y);
    }
};

Biquad bandpass(double f_lo, double f_hi, int fs) {
    const double f0 = std::sqrt(f_lo * f_hi);
    const double q = f0 / (f_hi - f_lo);
    const double w0 = kTwoPi * f0 / fs;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Biquad b;
    b.b0 = alpha / a0;
    b.b1 = 0.0;
    b.b2 = -alpha / a0;
    b.a1 = -2.0 * std::cos(w0) / a0;
    b.a2 = (1.0 - alpha) / a0;
    return b;
}

void rms_normalize(std::vector<float>& w, float rms) {
    double acc = 0.0;
    for (float v : w) acc += double(v) * v;
    const double r = std::sqrt(acc / std::max<size_t>(1, w.size()));
    if (r > 1e-12)
        for (auto& v : w) v = float(v / r * rms);
}

// linear convolution via FFT, output length la + lb - 1
std::vector<double> fft_conv(const std::vector<double>& a, const std::vector<float>& b) {
    const size_t lo = a.size() + b.size() - 1;
    const size_t nfft = dsp::next_pow2(lo);
    dsp::Fft plan(nfft);
    auto A = plan.rfft(a.data(), a.size());
    std::vector<double> bd(b.begin(), b.end());
    auto B = plan.rfft(bd.data(), bd.size());
    for (size_t i = 0; i < A.size(); ++i) A[i] *= B[i];
    auto full = plan.irfft(A.data(), A.size());
    full.resize(lo);
    return full;
}

}  // namespace

DryEvent make_dry_event(int class_idx, int fs, Rng& rng) {
    if (class_idx < 0) throw DataError("make_dry_event: negative class");
    const int recipe = class_idx % 5;
    const double transpose = 1.0 + 0.35 * double(class_idx / 5);
    DryEvent ev;
    ev.class_idx = class_idx;

    auto dur = [&](double lo, double hi) { return rng.uniform(lo, hi); };
    double d = 0.0;
    switch (recipe) {
        case 0: d = dur(0.4, 1.2); break;
        case 1: d = dur(0.3, 1.0); break;
        case 2: d = dur(0.2, 0.8); break;
        case 3: d = dur(0.3, 1.0); break;
        default: d = dur(0.5, 1.5); break;
    }
    const size_t n = size_t(d * fs);
    ev.duration_s = double(n) / fs;
    ev.waveform.assign(n, 0.0f);

    switch (recipe) {
        case 0: {  // vibrato tone + weak 2nd harmonic
            const double f0 = rng.uniform(350.0, 550.0) * transpose;
            double ph1 = rng.uniform(0.0, kTwoPi), ph2 = rng.uniform(0.0, kTwoPi);
            for (size_t i = 0; i < n; ++i) {
                const double t = double(i) / fs;
                const double f = f0 * (1.0 + 0.03 * std::sin(kTwoPi * 5.0 * t));
                ph1 += kTwoPi * f / fs;
                ph2 += kTwoPi * 2.0 * f / fs;
                ev.waveform[i] = float(std::sin(ph1) + 0.5 * std::sin(ph2));
            }
            break;
        }
        case 1: {  // up-chirp
            const double fa = rng.uniform(400.0, 700.0) * transpose;
            const double fb = rng.uniform(1800.0, 2600.0) * transpose;
            double ph = rng.uniform(0.0, kTwoPi);
            for (size_t i = 0; i < n; ++i) {
                const double u = double(i) / double(n);
                const double f = fa * std::pow(fb / fa, u);
                ph += kTwoPi * f / fs;
                ev.waveform[i] = float(std::sin(ph));
            }
            break;
        }
        case 2: {  // high noise burst
            auto bq = bandpass(2500.0 * transpose, 4000.0 * transpose, fs);
            for (size_t i = 0; i < n; ++i) ev.waveform[i] = bq.step(float(rng.normal()));
            break;
        }
        case 3: {  // click train
            const double rate = rng.uniform(18.0, 30.0);
            const size_t step = size_t(fs / rate);
            auto bq = bandpass(1000.0 * transpose, 6000.0 * transpose, fs);
            std::vector<float> imp(n, 0.0f);
            for (size_t i = 0; i < n; i += step) {
                const size_t w = std::min<size_t>(size_t(0.002 * fs), n - i);
                for (size_t k = 0; k < w; ++k)
                    imp[i + k] = float(rng.normal() * std::exp(-double(k) / (0.0005 * fs)));
            }
            for (size_t i = 0; i < n; ++i) ev.waveform[i] = bq.step(imp[i]);
            break;
        }
        default: {  // harmonic stack
            const double f0 = rng.uniform(180.0, 260.0) * transpose;
            double phase[6];
            for (auto& p : phase) p = rng.uniform(0.0, kTwoPi);
            for (size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (int h = 1; h <= 6; ++h) {
                    phase[h - 1] += kTwoPi * f0 * h / fs;
                    acc += std::sin(phase[h - 1]) / double(h);
                }
                ev.waveform[i] = float(acc);
            }
            break;
        }
    }
    apply_env(ev.waveform, fs);
    peak_normalize(ev.waveform, 0.7f);
    return ev;
}

int noise_type_count() { return 15; }

std::vector<float> make_noise(int noise_type, size_t n, int fs, Rng& rng) {
    if (noise_type < 0 || noise_type >= noise_type_count())
        throw DataError("make_noise: unknown noise type");
    std::vector<float> w(n);
    for (auto& v : w) v = float(rng.normal());

    switch (noise_type) {
        case 0: break;  // white
        case 1: {       // pink (Paul Kellet approximation)
            double b0 = 0, b1 = 0, b2 = 0;
            for (auto& v : w) {
                b0 = 0.99765 * b0 + v * 0.0990460;
                b1 = 0.96300 * b1 + v * 0.2965164;
                b2 = 0.57000 * b2 + v * 1.0526913;
                v = float(b0 + b1 + b2 + v * 0.1848);
            }
            break;
        }
        case 2: {  // brown
            double acc = 0.0;
            for (auto& v : w) {
                acc = 0.998 * acc + v;
                v = float(acc);
            }
            break;
        }
        case 3: {  // blue: first difference
            float prev = 0.0f;
            for (auto& v : w) {
                const float cur = v;
                v = cur - prev;
                prev = cur;
            }
            break;
        }
        case 4:
        case 5:
        case 6:
        case 7: {  // banded noise
            static const double bands[4][2] = {{300, 700}, {700, 1500}, {1500, 3200}, {3200, 7000}};
            auto bq = bandpass(bands[noise_type - 4][0], bands[noise_type - 4][1], fs);
            for (auto& v : w) v = bq.step(v);
            break;
        }
        case 8: {  // mains hum + floor
            for (size_t i = 0; i < n; ++i) {
                const double t = double(i) / fs;
                w[i] = float(std::sin(kTwoPi * 50 * t) + 0.5 * std::sin(kTwoPi * 100 * t) +
                             0.25 * std::sin(kTwoPi * 150 * t) + 0.05 * w[i]);
            }
            break;
        }
        case 9: {  // crackle
            auto bq = bandpass(800.0, 5000.0, fs);
            for (auto& v : w) {
                const bool fire = rng.uniform() < 0.003;
                v = bq.step(fire ? float(rng.normal() * 8.0) : 0.0f);
            }
            break;
        }
        case 10: {  // slow AM white
            for (size_t i = 0; i < n; ++i)
                w[i] = float(w[i] * (1.0 + 0.8 * std::sin(kTwoPi * 0.7 * double(i) / fs)) / 1.8);
            break;
        }
        case 11: {  // machinery: hum at 120 Hz + banded
            auto bq = bandpass(100.0, 400.0, fs);
            for (size_t i = 0; i < n; ++i) {
                const double t = double(i) / fs;
                w[i] = float(bq.step(w[i]) * 2.0 + 0.6 * std::sin(kTwoPi * 120 * t));
            }
            break;
        }
        case 12: {  // ocean-ish: low band + slow AM
            auto bq = bandpass(80.0, 500.0, fs);
            for (size_t i = 0; i < n; ++i)
                w[i] = float(bq.step(w[i]) * (1.0 + 0.9 * std::sin(kTwoPi * 0.25 * double(i) / fs)));
            break;
        }
        case 13: {  // fast AM pink
            double b0 = 0, b1 = 0, b2 = 0;
            for (size_t i = 0; i < n; ++i) {
                const double v = w[i];
                b0 = 0.99765 * b0 + v * 0.0990460;
                b1 = 0.96300 * b1 + v * 0.2965164;
                b2 = 0.57000 * b2 + v * 1.0526913;
                w[i] = float((b0 + b1 + b2 + v * 0.1848) *
                             (1.0 + 0.7 * std::sin(kTwoPi * 6.0 * double(i) / fs)));
            }
            break;
        }
        default: {  // 14: impulsive bursts over brown floor
            double acc = 0.0;
            size_t burst_left = 0;
            for (auto& v : w) {
                acc = 0.995 * acc + v * 0.2;
                if (burst_left == 0 && rng.uniform() < 0.0006) burst_left = size_t(0.05 * fs);
                float b = 0.0f;
                if (burst_left > 0) {
                    b = float(rng.normal() * 2.0);
                    --burst_left;
                }
                v = float(acc) + b;
            }
            break;
        }
    }
    rms_normalize(w, 0.1f);
    return w;
}

std::vector<PlacedEvent> place_events(std::vector<DryEvent> events, double clip_s,
                                      int max_polyphony, int n_srir_slots, Rng& rng) {
    if (clip_s <= 0.0) throw DataError("place_events: clip_s must be > 0");
    if (max_polyphony < 1) throw DataError("place_events: max_polyphony must be >= 1");
    if (n_srir_slots < 1) throw DataError("place_events: need at least one SRIR slot");

    struct Iv {
        double s, e;
        int cls;
    };
    std::vector<Iv> placed_iv;
    std::vector<PlacedEvent> out;

    auto fits = [&](double s, double e, int cls) {
        // overlap count at every boundary point of the candidate span
        std::vector<double> pts{s};
        for (const auto& iv : placed_iv) {
            if (iv.e <= s || iv.s >= e) continue;
            if (iv.cls == cls) return false;
            if (iv.s > s) pts.push_back(iv.s);
        }
        for (double p : pts) {
            int c = 1;
            for (const auto& iv : placed_iv)
                if (iv.s <= p && p < iv.e) ++c;
            if (c > max_polyphony) return false;
        }
        return true;
    };

    for (const auto& ev : events)
        if (ev.duration_s > clip_s) throw DataError("place_events: event longer than the clip");

    for (int restart = 0; restart < 50; ++restart) {
        placed_iv.clear();
        out.clear();
        bool all_ok = true;
        for (const auto& ev : events) {
            bool ok = false;
            for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
                const double onset = rng.uniform(0.0, clip_s - ev.duration_s);
                if (fits(onset, onset + ev.duration_s, ev.class_idx)) {
                    placed_iv.push_back({onset, onset + ev.duration_s, ev.class_idx});
                    PlacedEvent pe;
                    pe.onset_s = onset;
                    pe.srir_slot = int(rng.below(uint64_t(n_srir_slots)));
                    pe.event = ev;
                    out.push_back(std::move(pe));
                    ok = true;
                }
            }
            if (!ok) {
                all_ok = false;
                break;
            }
        }
        if (all_ok) return out;
    }
    throw DataError("place_events: cannot satisfy the polyphony constraint (capacity)");
}

SceneClip synthesize_clip(const std::vector<PlacedEvent>& placed,
                          const std::vector<const srir::Srir*>& srirs,
                          const dsp::Audio* noise_bed, std::optional<double> snr_db,
                          double clip_s, int fs, Rng& rng) {
    if (snr_db.has_value() != (noise_bed != nullptr))
        throw DataError("synthesize_clip: SNR must be given iff noise is given");
    const size_t n = size_t(std::llround(clip_s * fs));

    std::array<std::vector<double>, 4> sig;
    for (auto& ch : sig) ch.assign(n, 0.0);

    SceneClip clip;
    for (size_t ei = 0; ei < placed.size(); ++ei) {
        const auto& pe = placed[ei];
        if (pe.srir_slot < 0 || size_t(pe.srir_slot) >= srirs.size())
            throw DataError("synthesize_clip: SRIR slot out of range");
        const srir::Srir& ir = *srirs[size_t(pe.srir_slot)];

        std::vector<double> dry(pe.event.waveform.begin(), pe.event.waveform.end());
        const size_t at = size_t(std::llround(pe.onset_s * fs));
        for (int c = 0; c < 4; ++c) {
            const auto conv = fft_conv(dry, ir.foa_ir[size_t(c)]);
            const size_t lim = std::min(n - std::min(n, at), conv.size());
            for (size_t i = 0; i < lim; ++i) sig[size_t(c)][at + i] += conv[i];
        }

        const int f_lo = int(std::floor(pe.onset_s / 0.1));
        const int f_hi = int(std::ceil((pe.onset_s + pe.event.duration_s) / 0.1));
        for (int f = f_lo; f <= f_hi; ++f) {
            const double center = (f + 0.5) * 0.1;
            if (center < pe.onset_s || center >= pe.onset_s + pe.event.duration_s) continue;
            if (center >= clip_s) break;
            Label lb;
            lb.frame_100ms = f;
            lb.class_idx = pe.event.class_idx;
            lb.track_idx = int(ei);
            lb.doa = ir.source_doa;
            clip.labels.push_back(lb);
        }
    }
    std::sort(clip.labels.begin(), clip.labels.end(), [](const Label& a, const Label& b) {
        if (a.frame_100ms != b.frame_100ms) return a.frame_100ms < b.frame_100ms;
        if (a.class_idx != b.class_idx) return a.class_idx < b.class_idx;
        return a.track_idx < b.track_idx;
    });

    if (noise_bed) {
        if (noise_bed->channels() != 4 || noise_bed->frames() < n)
            throw DataError("synthesize_clip: noise bed too short");
        const size_t slack = noise_bed->frames() - n;
        const size_t off = slack > 0 ? size_t(rng.below(slack + 1)) : 0;

        double p_sig = 0.0, p_noise = 0.0;
        for (int c = 0; c < 4; ++c) {
            for (size_t i = 0; i < n; ++i) {
                p_sig += sig[size_t(c)][i] * sig[size_t(c)][i];
                const double nv = noise_bed->ch[size_t(c)][off + i];
                p_noise += nv * nv;
            }
        }
        double gain = 1.0;
        if (p_sig > 1e-20 && p_noise > 1e-20)
            gain = std::sqrt(p_sig / p_noise * std::pow(10.0, -*snr_db / 10.0));
        for (int c = 0; c < 4; ++c)
            for (size_t i = 0; i < n; ++i)
                sig[size_t(c)][i] += gain * noise_bed->ch[size_t(c)][off + i];
        clip.snr_db = snr_db;
    }

    double peak = 0.0;
    for (const auto& ch : sig)
        for (double v : ch) peak = std::max(peak, std::abs(v));
    if (peak > 0.999) {
        const double g = 0.999 / peak;
        clip.norm_gain = g;
        std::fprintf(stderr, "[seldlab] warning: clip peak %.3f, normalizing by %.4f\n", peak, g);
        for (auto& ch : sig)
            for (auto& v : ch) v *= g;
    }

    clip.audio.fs = fs;
    clip.audio.ch.assign(4, std::vector<float>(n));
    for (int c = 0; c < 4; ++c)
        for (size_t i = 0; i < n; ++i) clip.audio.ch[size_t(c)][i] = float(sig[size_t(c)][i]);
    return clip;
}

dsp::Audio make_diffuse_noise_bed(const srir::RoomSpec& room, const srir::MicArraySpec& array,
                                  int noise_type, double dur_s, Rng& rng) {
    const size_t n = size_t(dur_s * room.fs);
    dsp::Audio bed;
    bed.fs = room.fs;
    bed.ch.assign(4, std::vector<float>(n, 0.0f));

    for (int k = 0; k < 8; ++k) {
        // random direction, ~1.2 m from the array (clamped inside the room)
        double x, y, z;
        acoustics::Direction::from_colat_az(std::acos(std::clamp(rng.uniform(-1.0, 1.0), -1.0, 1.0)),
                                            rng.uniform(-kPi, kPi))
            .to_unit(x, y, z);
        srir::Vec3 src{array.center[0] + 1.2 * x, array.center[1] + 1.2 * y,
                       array.center[2] + 1.2 * z};
        for (int i = 0; i < 3; ++i) src[size_t(i)] = std::clamp(src[size_t(i)], 0.12, room.dims[size_t(i)] - 0.12);
        auto s = srir::simulate_srir(room, array, src);

        // keep only the late tail
        const double direct = srir::dist(src, array.center) / room.c;
        const size_t cut = std::min(s.foa_ir[0].size(), size_t((direct + 0.01) * room.fs));
        for (auto& ch : s.foa_ir) std::fill(ch.begin(), ch.begin() + long(cut), 0.0f);

        const auto noise = make_noise(noise_type, n, room.fs, rng);
        std::vector<double> nd(noise.begin(), noise.end());
        for (int c = 0; c < 4; ++c) {
            const auto conv = fft_conv(nd, s.foa_ir[size_t(c)]);
            for (size_t i = 0; i < n; ++i) bed.ch[size_t(c)][i] += float(conv[i]);
        }
    }
    return bed;
}

void write_labels_csv(const std::filesystem::path& path, const std::vector<Label>& labels) {
    std::ofstream f(path);
    if (!f) throw DataError("write_labels_csv: cannot open " + path.string());
    f << "frame_100ms,class_idx,track_idx,azimuth_deg,elevation_deg\n";
    for (const auto& l : labels) {
        int az = int(std::lround(l.doa.azimuth_deg()));
        int el = int(std::lround(l.doa.elevation_deg()));
        if (az <= -180) az += 360;
        if (az > 180) az -= 360;
        el = std::clamp(el, -90, 90);
        f << l.frame_100ms << ',' << l.class_idx << ',' << l.track_idx << ',' << az << ',' << el
          << '\n';
    }
}

std::vector<Label> read_labels_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("read_labels_csv: cannot open " + path.string());
    std::string line;
    std::getline(f, line);  // header
    std::vector<Label> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 5) throw DataError("read_labels_csv: malformed row: " + line);
        Label l;
        l.frame_100ms = std::stoi(cells[0]);
        l.class_idx = std::stoi(cells[1]);
        l.track_idx = std::stoi(cells[2]);
        l.doa = acoustics::Direction::from_az_el_deg(std::stod(cells[3]), std::stod(cells[4]));
        out.push_back(l);
    }
    return out;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
    json j;
    j["fs"] = fs;
    j["clip_s"] = clip_s;
    j["num_classes"] = num_classes;
    j["env_ids"] = env_ids;
    j["clips"] = json::array();
    for (const auto& c : clips) j["clips"].push_back({{"wav", c.wav}, {"csv", c.csv}, {"env_id", c.env_id}});
    j["env_info"] = json::object();
    for (const auto& [id, info] : env_info)
        j["env_info"][id] = {{"rt60_nominal", info.rt60_nominal}, {"noise_type", info.noise_type}};
    std::ofstream f(path);
    if (!f) throw DataError("DatasetManifest::save: cannot open " + path.string());
    f << j.dump(2) << '\n';
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("DatasetManifest::load: cannot open " + path.string());
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw DataError(std::string("DatasetManifest::load: bad JSON: ") + e.what());
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    m.fs = j.at("fs").get<int>();
    m.clip_s = j.at("clip_s").get<double>();
    m.num_classes = j.at("num_classes").get<int>();
    m.env_ids = j.at("env_ids").get<std::vector<std::string>>();
    for (const auto& c : j.at("clips")) {
        ManifestClip mc{c.at("wav").get<std::string>(), c.at("csv").get<std::string>(),
                        c.at("env_id").get<std::string>()};
        if (!std::filesystem::exists(m.base_dir / mc.wav))
            throw DataError("DatasetManifest::load: missing wav " + mc.wav);
        if (!std::filesystem::exists(m.base_dir / mc.csv))
            throw DataError("DatasetManifest::load: missing csv " + mc.csv);
        m.clips.push_back(std::move(mc));
    }
    if (j.contains("env_info"))
        for (auto& [id, info] : j.at("env_info").items())
            m.env_info[id] = {info.at("rt60_nominal").get<double>(), info.at("noise_type").get<int>()};
    // environments must partition the clips
    for (const auto& c : m.clips)
        if (std::find(m.env_ids.begin(), m.env_ids.end(), c.env_id) == m.env_ids.end())
            throw DataError("DatasetManifest::load: clip references unknown env " + c.env_id);
    return m;
}

std::vector<int> DatasetManifest::clips_of_env(const std::string& env_id) const {
    std::vector<int> idx;
    for (int i = 0; i < int(clips.size()); ++i)
        if (clips[size_t(i)].env_id == env_id) idx.push_back(i);
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return clips[size_t(a)].wav < clips[size_t(b)].wav; });
    return idx;
}

DatasetManifest build_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir) {
    if (cfg.envs.empty()) throw ConfigError("build_dataset: no environments configured");
    std::filesystem::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.fs = cfg.fs;
    manifest.clip_s = cfg.clip_s;
    manifest.num_classes = cfg.num_classes;

    for (size_t e = 0; e < cfg.envs.size(); ++e) {
        const auto& env = cfg.envs[e];
        manifest.env_ids.push_back(env.env_id);
        manifest.env_info[env.env_id] = {env.room.sabine_rt60(), env.noise_type};
        std::filesystem::create_directories(out_dir / env.env_id);

        Rng env_rng(cfg.seed, 1000 * (e + 1));
        srir::Vec3 center{env.room.dims[0] * env_rng.uniform(0.4, 0.6),
                          env.room.dims[1] * env_rng.uniform(0.4, 0.6),
                          env.room.dims[2] * env_rng.uniform(0.35, 0.55)};
        const auto array = srir::MicArraySpec::tetrahedral(center);

        // SRIR bank for this environment
        std::vector<srir::Vec3> srcs;
        for (int s = 0; s < env.n_srirs; ++s) {
            srir::Vec3 p;
            for (int tries = 0; tries < 100; ++tries) {
                p = {env_rng.uniform(0.4, env.room.dims[0] - 0.4),
                     env_rng.uniform(0.4, env.room.dims[1] - 0.4),
                     env_rng.uniform(0.4, env.room.dims[2] - 0.4)};
                if (srir::dist(p, center) > 0.5) break;
            }
            srcs.push_back(p);
        }
        std::vector<srir::Srir> bank(srcs.size());
        util::parallel_for(srcs.size(), [&](size_t s) {
            bank[s] = srir::simulate_srir(env.room, array, srcs[s]);
        });
        std::vector<const srir::Srir*> bank_ptrs;
        for (const auto& s : bank) bank_ptrs.push_back(&s);

        dsp::Audio bed;
        if (env.noise_type >= 0) {
            Rng bed_rng(cfg.seed, 1000 * (e + 1) + 777);
            bed = make_diffuse_noise_bed(env.room, array, env.noise_type, cfg.clip_s + 2.0, bed_rng);
        }

        util::parallel_for(size_t(env.n_clips), [&](size_t c) {
            Rng rng(cfg.seed, 1000 * (e + 1) + 1 + c);
            const int n_ev = cfg.min_events + int(rng.below(uint64_t(cfg.max_events - cfg.min_events + 1)));
            // classes drawn without replacement while they last (same-class
            // events cannot overlap, which makes dense clips unplaceable)
            std::vector<int> class_pool(size_t(cfg.num_classes));
            for (int k = 0; k < cfg.num_classes; ++k) class_pool[size_t(k)] = k;
            rng.shuffle(class_pool);
            std::vector<DryEvent> events;
            for (int k = 0; k < n_ev; ++k) {
                const int cls = class_pool[size_t(k % cfg.num_classes)];
                events.push_back(make_dry_event(cls, cfg.fs, rng));
            }
            auto placed = place_events(std::move(events), cfg.clip_s, cfg.max_polyphony,
                                       int(bank_ptrs.size()), rng);
            std::optional<double> snr;
            if (env.noise_type >= 0) snr = rng.uniform(env.snr_lo_db, env.snr_hi_db);
            auto clip = synthesize_clip(placed, bank_ptrs, env.noise_type >= 0 ? &bed : nullptr, snr,
                                        cfg.clip_s, cfg.fs, rng);
            clip.env_id = env.env_id;

            char name[64];
            std::snprintf(name, sizeof(name), "clip%04d", int(c));
            dsp::write_wav_f32(out_dir / env.env_id / (std::string(name) + ".wav"), clip.audio);
            write_labels_csv(out_dir / env.env_id / (std::string(name) + ".csv"), clip.labels);
        });

        for (int c = 0; c < env.n_clips; ++c) {
            char name[64];
            std::snprintf(name, sizeof(name), "clip%04d", c);
            manifest.clips.push_back({env.env_id + "/" + name + ".wav",
                                      env.env_id + "/" + name + ".csv", env.env_id});
        }
    }
    manifest.base_dir = out_dir;
    manifest.save(out_dir / "manifest.json");
    return manifest;
}

GenConfig reverb_ladder_config(int clips_per_env, uint64_t seed) {
    GenConfig cfg;
    cfg.seed = seed;
    cfg.min_events = 2;
    cfg.max_events = 4;
    for (int i = 0; i < 8; ++i) {
        EnvGenSpec env;
        char id[32];
        std::snprintf(id, sizeof(id), "reverb%02d", i);
        env.env_id = id;
        const double rt60 = 0.4 + 0.3 * i;  // 0.4 .. 2.5 s
        env.room = srir::RoomSpec::with_target_rt60({7.0, 5.5, 3.2}, rt60, 22);
        env.n_srirs = 6;
        env.noise_type = -1;
        env.n_clips = clips_per_env;
        cfg.envs.push_back(env);
    }
    return cfg;
}

GenConfig noise_set_config(int n_rooms, int clips_per_env, uint64_t seed) {
    if (n_rooms < 1 || n_rooms > noise_type_count())
        throw ConfigError("noise_set_config: n_rooms must be in [1, 15]");
    GenConfig cfg;
    cfg.seed = seed;
    for (int i = 0; i < n_rooms; ++i) {
        EnvGenSpec env;
        char id[32];
        std::snprintf(id, sizeof(id), "noise%02d", i);
        env.env_id = id;
        env.room = srir::RoomSpec::with_target_rt60({6.0, 5.0, 3.0}, 0.5, 14);
        env.n_srirs = 6;
        env.noise_type = i;  // unique noise type per room
        env.snr_lo_db = 10.0;
        env.snr_hi_db = 15.0;
        env.n_clips = clips_per_env;
        cfg.envs.push_back(env);
    }
    return cfg;
}

}  // namespace seldlab::scene
