#include "seldlab/audio_io.hpp"

#include <cstring>
#include <fstream>

#include "seldlab/common.hpp"

namespace seldlab::dsp {
namespace {

void put_u32(std::string& s, uint32_t v) {
    char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    s.append(b, 4);
}
void put_u16(std::string& s, uint16_t v) {
    char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    s.append(b, 2);
}

uint32_t get_u32(const char* p) {
    return uint32_t(uint8_t(p[0])) | uint32_t(uint8_t(p[1])) << 8 | uint32_t(uint8_t(p[2])) << 16 |
           uint32_t(uint8_t(p[3])) << 24;
}
uint16_t get_u16(const char* p) { return uint16_t(uint8_t(p[0])) | uint16_t(uint8_t(p[1])) << 8; }

}  // namespace

void write_wav_f32(const std::filesystem::path& path, const Audio& a) {
    const uint32_t nch = uint32_t(a.channels());
    const uint32_t frames = uint32_t(a.frames());
    if (nch == 0) throw DataError("write_wav_f32: no channels");
    for (const auto& c : a.ch)
        if (c.size() != frames) throw DataError("write_wav_f32: ragged channels");

    const uint32_t data_bytes = frames * nch * 4;
    std::string hdr;
    hdr.reserve(58);
    hdr += "RIFF";
    put_u32(hdr, 4 + 26 + 12 + 8 + data_bytes);
    hdr += "WAVE";
    hdr += "fmt ";
    put_u32(hdr, 18);
    put_u16(hdr, 3);  // IEEE float
    put_u16(hdr, uint16_t(nch));
    put_u32(hdr, uint32_t(a.fs));
    put_u32(hdr, uint32_t(a.fs) * nch * 4);
    put_u16(hdr, uint16_t(nch * 4));
    put_u16(hdr, 32);
    put_u16(hdr, 0);  // cbSize
    hdr += "fact";
    put_u32(hdr, 4);
    put_u32(hdr, frames);
    hdr += "data";
    put_u32(hdr, data_bytes);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_wav_f32: cannot open " + path.string());
    f.write(hdr.data(), std::streamsize(hdr.size()));
    std::vector<float> inter(size_t(frames) * nch);
    for (uint32_t i = 0; i < frames; ++i)
        for (uint32_t c = 0; c < nch; ++c) inter[size_t(i) * nch + c] = a.ch[c][i];
    f.write(reinterpret_cast<const char*>(inter.data()), std::streamsize(inter.size() * 4));
    if (!f) throw DataError("write_wav_f32: write failed for " + path.string());
}

Audio read_wav_f32(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_wav_f32: cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
        throw DataError("read_wav_f32: not a RIFF/WAVE file: " + path.string());

    size_t pos = 12;
    int fs = 0;
    uint16_t nch = 0, fmt = 0, bits = 0;
    const char* data = nullptr;
    uint32_t data_bytes = 0;
    while (pos + 8 <= bytes.size()) {
        const std::string id = bytes.substr(pos, 4);
        const uint32_t len = get_u32(bytes.data() + pos + 4);
        const char* body = bytes.data() + pos + 8;
        if (pos + 8 + len > bytes.size()) break;
        if (id == "fmt ") {
            fmt = get_u16(body);
            nch = get_u16(body + 2);
            fs = int(get_u32(body + 4));
            bits = get_u16(body + 14);
        } else if (id == "data") {
            data = body;
            data_bytes = len;
        }
        pos += 8 + len + (len & 1);
    }
    if (fmt != 3 || bits != 32) throw DataError("read_wav_f32: expected 32-bit float WAV: " + path.string());
    if (!data || nch == 0) throw DataError("read_wav_f32: missing data chunk: " + path.string());

    const size_t frames = data_bytes / (size_t(nch) * 4);
    Audio a;
    a.fs = fs;
    a.ch.assign(nch, std::vector<float>(frames));
    for (size_t i = 0; i < frames; ++i)
        for (size_t c = 0; c < nch; ++c) {
            float v;
            std::memcpy(&v, data + (i * nch + c) * 4, 4);
            a.ch[c][i] = v;
        }
    return a;
}

}  // namespace seldlab::dsp
