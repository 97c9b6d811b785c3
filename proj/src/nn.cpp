#include "seldlab/nn.hpp"

#include <cstring>
#include <fstream>

#include "seldlab/common.hpp"

namespace seldlab::nn {
namespace {

constexpr uint32_t kMagic = 0x444C4553;  // "SELD"
constexpr uint32_t kVersion = 1;
constexpr uint32_t kKindParams = 1;
constexpr uint32_t kKindOpt = 2;
constexpr uint32_t kKindBlob = 3;

template <class T>
void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw DataError("checkpoint: truncated file");
    return v;
}
void put_str(std::ofstream& f, const std::string& s) {
    put<uint32_t>(f, uint32_t(s.size()));
    f.write(s.data(), std::streamsize(s.size()));
}
std::string get_str(std::ifstream& f) {
    const uint32_t n = get<uint32_t>(f);
    if (n > (1u << 24)) throw DataError("checkpoint: absurd string length");
    std::string s(n, '\0');
    f.read(s.data(), n);
    if (!f) throw DataError("checkpoint: truncated string");
    return s;
}
void put_tensor(std::ofstream& f, const Tensor<float>& t) {
    put<uint32_t>(f, 0u);  // dtype f32
    put<uint32_t>(f, uint32_t(t.shape.size()));
    for (int d : t.shape) put<uint32_t>(f, uint32_t(d));
    f.write(reinterpret_cast<const char*>(t.v.data()), std::streamsize(t.v.size() * 4));
}
Tensor<float> get_tensor(std::ifstream& f) {
    const uint32_t dtype = get<uint32_t>(f);
    if (dtype != 0u) throw DataError("checkpoint: unsupported dtype");
    const uint32_t rank = get<uint32_t>(f);
    if (rank > 8) throw DataError("checkpoint: absurd rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = int(get<uint32_t>(f));
    Tensor<float> t(shape);
    f.read(reinterpret_cast<char*>(t.v.data()), std::streamsize(t.v.size() * 4));
    if (!f) throw DataError("checkpoint: truncated tensor");
    return t;
}

}  // namespace

const ParamSet<float>& Checkpoint::section(const std::string& name) const {
    for (const auto& [n, p] : sections)
        if (n == name) return p;
    throw DataError("checkpoint: missing section " + name);
}

bool Checkpoint::has_section(const std::string& name) const {
    for (const auto& [n, p] : sections)
        if (n == name) return true;
    return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_checkpoint: cannot open " + path.string());
    put<uint32_t>(f, kMagic);
    put<uint32_t>(f, kVersion);
    const uint32_t n_sections =
        uint32_t(ck.sections.size()) + (ck.opt ? 1u : 0u) + (ck.config_json.empty() ? 0u : 1u);
    put<uint32_t>(f, n_sections);

    for (const auto& [name, params] : ck.sections) {
        put_str(f, name);
        put<uint32_t>(f, kKindParams);
        put<uint32_t>(f, uint32_t(params.entries.size()));
        for (const auto& e : params.entries) {
            put_str(f, e.name);
            put<int32_t>(f, int32_t(e.layer));
            put<uint8_t>(f, e.trainable ? 1 : 0);
            put_tensor(f, e.t);
        }
    }
    if (ck.opt) {
        put_str(f, "optimizer");
        put<uint32_t>(f, kKindOpt);
        put<double>(f, ck.opt->beta1);
        put<double>(f, ck.opt->beta2);
        put<double>(f, ck.opt->eps);
        put<double>(f, ck.opt->weight_decay);
        put<uint64_t>(f, ck.opt->step);
        put<uint32_t>(f, uint32_t(ck.opt->m.size()));
        for (size_t i = 0; i < ck.opt->m.size(); ++i) {
            put_tensor(f, ck.opt->m[i]);
            put_tensor(f, ck.opt->v[i]);
        }
    }
    if (!ck.config_json.empty()) {
        put_str(f, "config");
        put<uint32_t>(f, kKindBlob);
        put<uint64_t>(f, uint64_t(ck.config_json.size()));
        f.write(ck.config_json.data(), std::streamsize(ck.config_json.size()));
    }
    if (!f) throw DataError("save_checkpoint: write failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_checkpoint: cannot open " + path.string());
    if (get<uint32_t>(f) != kMagic) throw DataError("load_checkpoint: bad magic");
    if (get<uint32_t>(f) != kVersion) throw DataError("load_checkpoint: unsupported version");
    const uint32_t n_sections = get<uint32_t>(f);
    Checkpoint ck;
    for (uint32_t s = 0; s < n_sections; ++s) {
        const std::string name = get_str(f);
        const uint32_t kind = get<uint32_t>(f);
        if (kind == kKindParams) {
            const uint32_t count = get<uint32_t>(f);
            ParamSet<float> p;
            for (uint32_t i = 0; i < count; ++i) {
                const std::string ename = get_str(f);
                const int layer = int(get<int32_t>(f));
                const bool trainable = get<uint8_t>(f) != 0;
                p.add(ename, get_tensor(f), layer, trainable);
            }
            ck.sections.emplace_back(name, std::move(p));
        } else if (kind == kKindOpt) {
            AdamWState<float> st;
            st.beta1 = get<double>(f);
            st.beta2 = get<double>(f);
            st.eps = get<double>(f);
            st.weight_decay = get<double>(f);
            st.step = get<uint64_t>(f);
            const uint32_t count = get<uint32_t>(f);
            for (uint32_t i = 0; i < count; ++i) {
                st.m.push_back(get_tensor(f));
                st.v.push_back(get_tensor(f));
            }
            ck.opt = std::move(st);
        } else if (kind == kKindBlob) {
            const uint64_t len = get<uint64_t>(f);
            if (len > (1ull << 30)) throw DataError("load_checkpoint: absurd blob length");
            ck.config_json.resize(len);
            f.read(ck.config_json.data(), std::streamsize(len));
            if (!f) throw DataError("load_checkpoint: truncated blob");
        } else {
            throw DataError("load_checkpoint: unknown section kind");
        }
    }
    return ck;
}

}  // namespace seldlab::nn
