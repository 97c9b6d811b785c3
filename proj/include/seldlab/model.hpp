#pragma once

#include <array>
#include <string>
#include <vector>

#include "seldlab/acoustics.hpp"
#include "seldlab/nn.hpp"

namespace seldlab::model {

// CRNN backbone: four Conv-BN-ReLU-MaxPool blocks, a bidirectional GRU and a
// linear head emitting per-frame per-class Cartesian DOA vectors whose norm
// carries the activity.
struct BackboneConfig {
    int in_channels = 7;
    int T = 376;
    int F = 64;
    int num_classes = 5;
    std::array<int, 4> conv_channels{16, 32, 64, 128};
    std::array<int, 4> pool_t{2, 2, 2, 1};
    std::array<int, 4> pool_f{2, 2, 2, 8};
    int gru_hidden = 128;

    int tprime() const {
        int t = T;
        for (int p : pool_t) t /= p;
        return t;
    }
    int fprime() const {
        int f = F;
        for (int p : pool_f) f /= p;
        return f;
    }
    // per-map flattened feature size feeding the environment extractor
    std::vector<int> extractor_map_dims() const;
};

// Layer indices (p = 10): conv1..4 -> 0,2,4,6; bn1..4 -> 1,3,5,7; gru -> 8; head -> 9.
inline constexpr int kBackboneLayers = 10;

nn::ParamSet<float> init_backbone(const BackboneConfig& cfg, Rng& rng);

template <class S>
struct BackboneOut {
    int accdoa = -1;                       // [B, T', 3M]
    std::vector<nn::Tensor<S>> maps;       // detached per-layer maps: conv1..4 [B,C,T,F], gru [B,2H,T',1]
    std::vector<nn::Tensor<S>> bn_mean;    // batch stats per BN layer (train mode)
    std::vector<nn::Tensor<S>> bn_var;     // unbiased
};

template <class S>
BackboneOut<S> backbone_forward(nn::Graph<S>& g, const nn::BoundParams<S>& bp,
                                const nn::ParamSet<S>& params, int x_node, bool train,
                                const BackboneConfig& cfg, bool want_maps = false);

// Convenience: plain forward of a batch, returns ACCDOA tensor (eval or train
// normalization; running stats never updated here).
nn::Tensor<float> backbone_infer(const nn::ParamSet<float>& params, const nn::Tensor<float>& x,
                                 bool train, const BackboneConfig& cfg,
                                 std::vector<nn::Tensor<float>>* maps = nullptr);

// Momentum update of BN running statistics (momentum per §IV-C is 0.01).
void update_running_stats(nn::ParamSet<float>& params, const std::vector<nn::Tensor<float>>& mean,
                          const std::vector<nn::Tensor<float>>& var, double momentum);

// ---------------------------------------------------------------------------
// ACCDOA
// ---------------------------------------------------------------------------

struct DecodedEvent {
    int frame = 0;  // T' frame
    int class_idx = 0;
    double x = 0, y = 0, z = 0;  // unit DOA
};

// class active where ||v|| > threshold; DOA = v/||v||
std::vector<DecodedEvent> accdoa_decode(const nn::Tensor<float>& pred, double threshold);

// targets [B,T',3M] from per-frame activity. Mapping from 100 ms label frames
// to T' frames is nearest-by-center.
struct LabelFrame {
    int frame_100ms;
    int class_idx;
    acoustics::Direction doa;
};
nn::Tensor<float> make_accdoa_targets(const std::vector<std::vector<LabelFrame>>& batch_labels,
                                      double clip_s, const BackboneConfig& cfg);

// ---------------------------------------------------------------------------
// Environment extractor g. Per source map (the input feature tensor plus each
// backbone layer's output): mean and energy-weighted mean over batch and time,
// standardized dimension-wise by running statistics accumulated during
// meta-training, linearly projected to this map's slice of the D-dimensional
// representation and L2-normalized before concatenation.
// ---------------------------------------------------------------------------

struct ExtractorConfig {
    int embed_dim = 2048;
    std::vector<int> map_feat_dims;  // per source map: C*F (input stem first)

    std::vector<int> slice_sizes() const;  // equal split of embed_dim
};

nn::ParamSet<float> init_extractor(const ExtractorConfig& cfg, Rng& rng);

// pooled input per map: [1, 2*C*F] (mean ++ weighted mean over batch+time)
template <class S>
nn::Tensor<S> pooled_map_stats(const nn::Tensor<S>& map4d);

// (v - run_mean) / sqrt(run_var + 1e-5), using omega's buffers
std::vector<nn::Tensor<float>> standardize_pooled(const nn::ParamSet<float>& omega,
                                                  const std::vector<nn::Tensor<float>>& pooled);

// momentum update of the running statistics from one episode's pooled stats
void update_pooled_running_stats(nn::ParamSet<float>& omega,
                                 const std::vector<nn::Tensor<float>>& pooled, double momentum);

// pooled vectors must already be standardized
template <class S>
int extractor_graph(nn::Graph<S>& g, const nn::BoundParams<S>& bp, const ExtractorConfig& cfg,
                    const std::vector<nn::Tensor<S>>& pooled);

std::vector<float> extractor_eval(const nn::ParamSet<float>& omega, const ExtractorConfig& cfg,
                                  const std::vector<nn::Tensor<float>>& pooled);

// ---------------------------------------------------------------------------
// Attenuation network h (two linear layers with a ReLU between and a sigmoid
// output; "none" mode holds free per-layer logits instead)
// ---------------------------------------------------------------------------

enum class AttnInput { none, gradients, representations };

AttnInput attn_input_from_string(const std::string& s);
std::string to_string(AttnInput m);

struct AttenuationConfig {
    AttnInput mode = AttnInput::representations;
    int input_dim = 0;   // D for representations, 3*p for gradient summaries, 0 for none
    int hidden = 1024;
    int p = kBackboneLayers;
    // initial output-layer bias: 0 starts at lambda = 0.5, positive values
    // start the attenuation near identity
    float output_bias = 0.0f;
};

nn::ParamSet<float> init_attenuation(const AttenuationConfig& cfg, Rng& rng);

// lambda node [1,p] in (0,1); input_vec unused in none mode
template <class S>
int attenuation_graph(nn::Graph<S>& g, const nn::BoundParams<S>& bp, const AttenuationConfig& cfg,
                      const nn::Tensor<S>& input_vec);

std::vector<float> attenuation_eval(const nn::ParamSet<float>& phi, const AttenuationConfig& cfg,
                                    const std::vector<float>& input_vec);

// Theta_i = lambda ⊙ Theta: scale trainable entries by their layer coefficient.
// bypass returns an exact copy (lambda = 1).
nn::ParamSet<float> attenuate_params(const nn::ParamSet<float>& theta,
                                     const std::vector<float>& lambda, bool bypass);

// per-layer gradient summaries (mean |g|, rms, max |g|) flattened to [3p]
std::vector<float> gradient_summary(const nn::ParamSet<float>& params,
                                    const nn::Grads<float>& grads);

// ---------------------------------------------------------------------------
// template implementations
// ---------------------------------------------------------------------------

namespace detail {

// [B,T,C] -> detached [B,C,T,1]
template <class S>
nn::Tensor<S> seq_to_map(const nn::Tensor<S>& seq) {
    const int B = seq.dim(0), T = seq.dim(1), C = seq.dim(2);
    nn::Tensor<S> out({B, C, T, 1});
    for (int b = 0; b < B; ++b)
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                out.v[((size_t(b) * C + c) * T + t)] = seq.v[(size_t(b) * T + t) * C + c];
    return out;
}

template <class S>
std::vector<int> gru_direction(nn::Graph<S>& g, int x_seq, int w_ih, int b_ih, int w_hh, int b_hh,
                               int H, bool reverse) {
    const int B = g.val(x_seq).dim(0), T = g.val(x_seq).dim(1), C = g.val(x_seq).dim(2);
    const int flat = g.reshape(x_seq, {B * T, C});
    const int pre_x = g.reshape(g.add_rowvec(g.matmul(flat, w_ih), b_ih), {B, T, 3 * H});

    int h = g.constant(nn::Tensor<S>::zeros({B, H}));
    std::vector<int> outs(static_cast<size_t>(T));
    for (int step = 0; step < T; ++step) {
        const int t = reverse ? T - 1 - step : step;
        const int px = g.select_time(pre_x, t);
        const int ph = g.add_rowvec(g.matmul(h, w_hh), b_hh);
        const int r = g.sigmoid(g.add(g.col_slice(px, 0, H), g.col_slice(ph, 0, H)));
        const int z = g.sigmoid(g.add(g.col_slice(px, H, H), g.col_slice(ph, H, H)));
        const int n = g.tanh_(g.add(g.col_slice(px, 2 * H, H), g.mul(r, g.col_slice(ph, 2 * H, H))));
        h = g.add(n, g.mul(z, g.sub(h, n)));  // (1-z)*n + z*h
        outs[size_t(t)] = h;
    }
    return outs;
}

}  // namespace detail

template <class S>
BackboneOut<S> backbone_forward(nn::Graph<S>& g, const nn::BoundParams<S>& bp,
                                const nn::ParamSet<S>& params, int x_node, bool train,
                                const BackboneConfig& cfg, bool want_maps) {
    BackboneOut<S> out;
    int x = x_node;
    for (int blk = 0; blk < 4; ++blk) {
        const std::string c = "conv" + std::to_string(blk + 1);
        const std::string b = "bn" + std::to_string(blk + 1);
        const int conv = g.conv2d(x, bp[c + ".w"], bp[c + ".b"], 1);
        nn::Tensor<S> bm({cfg.conv_channels[size_t(blk)]}), bv({cfg.conv_channels[size_t(blk)]});
        const int bn = g.batchnorm2d(conv, bp[b + ".gamma"], bp[b + ".beta"],
                                     params.at(b + ".running_mean").t, params.at(b + ".running_var").t,
                                     train, &bm, &bv);
        if (train) {
            out.bn_mean.push_back(std::move(bm));
            out.bn_var.push_back(std::move(bv));
        }
        x = g.maxpool2d(g.relu(bn), cfg.pool_t[size_t(blk)], cfg.pool_f[size_t(blk)]);
        if (want_maps) out.maps.push_back(g.val(x));
    }

    const int seq = g.chw_to_seq(x);  // [B, T', C4*F']
    auto fwd = detail::gru_direction(g, seq, bp["gru.w_ih_f"], bp["gru.b_ih_f"], bp["gru.w_hh_f"],
                                     bp["gru.b_hh_f"], cfg.gru_hidden, false);
    auto bwd = detail::gru_direction(g, seq, bp["gru.w_ih_b"], bp["gru.b_ih_b"], bp["gru.w_hh_b"],
                                     bp["gru.b_hh_b"], cfg.gru_hidden, true);
    std::vector<int> joined(fwd.size());
    for (size_t t = 0; t < fwd.size(); ++t) joined[t] = g.concat_cols({fwd[t], bwd[t]});
    const int gru_out = g.stack_time(joined);  // [B, T', 2H]
    if (want_maps) out.maps.push_back(detail::seq_to_map(g.val(gru_out)));

    const int B = g.val(gru_out).dim(0);
    const int Tp = g.val(gru_out).dim(1);
    const int flat = g.reshape(gru_out, {B * Tp, 2 * cfg.gru_hidden});
    const int head = g.linear(flat, bp["head.w"], bp["head.b"]);
    out.accdoa = g.reshape(head, {B, Tp, 3 * cfg.num_classes});
    return out;
}

template <class S>
nn::Tensor<S> pooled_map_stats(const nn::Tensor<S>& m) {
    if (m.rank() != 4) throw std::invalid_argument("pooled_map_stats: expected [B,C,T,F]");
    const int B = m.dim(0), C = m.dim(1), T = m.dim(2), F = m.dim(3);
    const size_t cf = size_t(C) * F;
    nn::Tensor<S> out({1, int(2 * cf)});

    // positional energies over (b,t)
    std::vector<double> energy(size_t(B) * T, 0.0);
    double total = 0.0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int t = 0; t < T; ++t) {
                const S* p = m.v.data() + ((size_t(b) * C + c) * T + t) * F;
                double acc = 0.0;
                for (int f = 0; f < F; ++f) acc += double(p[f]) * double(p[f]);
                energy[size_t(b) * T + t] += acc;
            }
    for (double e : energy) total += e;
    const double uniform = 1.0 / double(size_t(B) * T);

    for (int c = 0; c < C; ++c)
        for (int f = 0; f < F; ++f) {
            double mean = 0.0, wmean = 0.0;
            for (int b = 0; b < B; ++b)
                for (int t = 0; t < T; ++t) {
                    const double x = double(m.v[((size_t(b) * C + c) * T + t) * F + f]);
                    const double w = total > 1e-30 ? energy[size_t(b) * T + t] / total : uniform;
                    mean += x * uniform;
                    wmean += x * w;
                }
            out.v[size_t(c) * F + f] = S(mean);
            out.v[cf + size_t(c) * F + f] = S(wmean);
        }
    return out;
}

template <class S>
int extractor_graph(nn::Graph<S>& g, const nn::BoundParams<S>& bp, const ExtractorConfig& cfg,
                    const std::vector<nn::Tensor<S>>& pooled) {
    if (pooled.size() != cfg.map_feat_dims.size())
        throw std::invalid_argument("extractor_graph: map count mismatch");
    if (pooled.empty()) throw std::invalid_argument("extractor_graph: empty batch");
    std::vector<int> slices;
    for (size_t l = 0; l < pooled.size(); ++l) {
        const int in = g.constant(pooled[l]);
        const std::string nm = "ext" + std::to_string(l);
        slices.push_back(g.l2_normalize_row(g.linear(in, bp[nm + ".w"], bp[nm + ".b"])));
    }
    return g.concat_cols(slices);  // [1, D]
}

template <class S>
int attenuation_graph(nn::Graph<S>& g, const nn::BoundParams<S>& bp, const AttenuationConfig& cfg,
                      const nn::Tensor<S>& input_vec) {
    if (cfg.mode == AttnInput::none) return g.sigmoid(bp["attn.logits"]);
    if (int(input_vec.numel()) != cfg.input_dim)
        throw std::invalid_argument("attenuation_graph: input size mismatch");
    nn::Tensor<S> in = input_vec;
    in.shape = {1, cfg.input_dim};
    const int x = g.constant(std::move(in));
    const int h = g.relu(g.linear(x, bp["attn.w1"], bp["attn.b1"]));
    return g.sigmoid(g.linear(h, bp["attn.w2"], bp["attn.b2"]));  // [1,p]
}

}  // namespace seldlab::model
