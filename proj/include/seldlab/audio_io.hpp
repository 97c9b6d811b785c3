#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace seldlab::dsp {

// Planar multichannel float audio.
struct Audio {
    int fs = 0;
    std::vector<std::vector<float>> ch;  // ch[c][frame]

    size_t frames() const { return ch.empty() ? 0 : ch[0].size(); }
    size_t channels() const { return ch.size(); }
};

// 32-bit IEEE-float WAV (format tag 3).
void write_wav_f32(const std::filesystem::path& path, const Audio& a);
Audio read_wav_f32(const std::filesystem::path& path);

}  // namespace seldlab::dsp
