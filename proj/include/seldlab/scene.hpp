#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seldlab/audio_io.hpp"
#include "seldlab/rng.hpp"
#include "seldlab/srir.hpp"

namespace seldlab::scene {

struct DryEvent {
    std::vector<float> waveform;  // mono, peak <= 1
    int class_idx = 0;
    double duration_s = 0.0;
};

// Procedural event classes with distinct spectral envelopes: vibrato tone,
// up-chirp, high noise burst, click train, harmonic stack. class_idx beyond 4
// reuses the recipes transposed upward.
DryEvent make_dry_event(int class_idx, int fs, Rng& rng);

// Procedural ambient noise recipes (15 distinct types).
std::vector<float> make_noise(int noise_type, size_t n, int fs, Rng& rng);
int noise_type_count();

struct PlacedEvent {
    DryEvent event;
    double onset_s = 0.0;
    int srir_slot = 0;
};

// Random onsets subject to: total simultaneous overlap <= max_polyphony and at
// most one active event per class at a time (the single-vector DOA target
// cannot represent same-class overlap).
std::vector<PlacedEvent> place_events(std::vector<DryEvent> events, double clip_s,
                                      int max_polyphony, int n_srir_slots, Rng& rng);

struct Label {
    int frame_100ms = 0;
    int class_idx = 0;
    int track_idx = 0;
    acoustics::Direction doa;
};

struct SceneClip {
    dsp::Audio audio;  // 4 x N FOA (W,Y,Z,X)
    std::vector<Label> labels;
    std::string env_id;
    std::optional<double> snr_db;
    double norm_gain = 1.0;  // gain applied when the mix clipped
};

// Sum of event-SRIR convolutions plus an optional diffuse noise bed scaled to
// the requested whole-clip SNR. rng picks the noise-bed crop offset.
SceneClip synthesize_clip(const std::vector<PlacedEvent>& placed,
                          const std::vector<const srir::Srir*>& srirs,
                          const dsp::Audio* noise_bed, std::optional<double> snr_db,
                          double clip_s, int fs, Rng& rng);

// Independent noise convolved with the late tails of SRIRs from 8 random
// directions, summed.
dsp::Audio make_diffuse_noise_bed(const srir::RoomSpec& room, const srir::MicArraySpec& array,
                                  int noise_type, double dur_s, Rng& rng);

void write_labels_csv(const std::filesystem::path& path, const std::vector<Label>& labels);
std::vector<Label> read_labels_csv(const std::filesystem::path& path);

struct EnvInfo {
    double rt60_nominal = 0.0;
    int noise_type = -1;
};

struct ManifestClip {
    std::string wav;  // relative to the manifest directory
    std::string csv;
    std::string env_id;
};

struct DatasetManifest {
    int fs = 24000;
    double clip_s = 5.0;
    int num_classes = 5;
    std::vector<std::string> env_ids;
    std::vector<ManifestClip> clips;
    std::map<std::string, EnvInfo> env_info;
    std::filesystem::path base_dir;

    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);  // checks files exist
    std::vector<int> clips_of_env(const std::string& env_id) const;  // indices, sorted by path
};

struct EnvGenSpec {
    std::string env_id;
    srir::RoomSpec room;
    int n_srirs = 8;
    int noise_type = -1;  // -1: no noise
    double snr_lo_db = 10.0, snr_hi_db = 15.0;
    int n_clips = 16;
};

struct GenConfig {
    std::vector<EnvGenSpec> envs;
    double clip_s = 5.0;
    int num_classes = 5;
    int max_polyphony = 3;
    int min_events = 1, max_events = 3;
    int fs = 24000;
    uint64_t seed = 0;
};

// Writes one directory per environment plus manifest.json; deterministic for a
// given (config, seed) regardless of worker count.
DatasetManifest build_dataset(const GenConfig& cfg, const std::filesystem::path& out_dir);

// §V-F style controlled studies at desk scale.
GenConfig reverb_ladder_config(int clips_per_env, uint64_t seed);           // 8 rooms, RT60 0.4..2.5
GenConfig noise_set_config(int n_rooms, int clips_per_env, uint64_t seed);  // unique noise per room

}  // namespace seldlab::scene
