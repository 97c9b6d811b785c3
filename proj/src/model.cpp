#include "seldlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "seldlab/common.hpp"

namespace seldlab::model {

std::vector<int> BackboneConfig::extractor_map_dims() const {
    std::vector<int> dims;
    dims.push_back(in_channels * F);  // the input feature tensor is the first source map
    int t = T, f = F;
    for (int blk = 0; blk < 4; ++blk) {
        t /= pool_t[size_t(blk)];
        f /= pool_f[size_t(blk)];
        dims.push_back(conv_channels[size_t(blk)] * f);
    }
    dims.push_back(2 * gru_hidden);
    return dims;
}

nn::ParamSet<float> init_backbone(const BackboneConfig& cfg, Rng& rng) {
    nn::ParamSet<float> p;
    int cin = cfg.in_channels;
    for (int blk = 0; blk < 4; ++blk) {
        const int cout = cfg.conv_channels[size_t(blk)];
        const std::string c = "conv" + std::to_string(blk + 1);
        const std::string b = "bn" + std::to_string(blk + 1);
        const double bound = std::sqrt(1.0 / (double(cin) * 9.0));
        p.add(c + ".w", nn::uniform_init<float>({cout, cin, 3, 3}, bound, rng), 2 * blk);
        p.add(c + ".b", nn::uniform_init<float>({cout}, bound, rng), 2 * blk);
        p.add(b + ".gamma", nn::Tensor<float>::full({cout}, 1.0f), 2 * blk + 1);
        p.add(b + ".beta", nn::Tensor<float>::zeros({cout}), 2 * blk + 1);
        p.add(b + ".running_mean", nn::Tensor<float>::zeros({cout}), 2 * blk + 1, false);
        p.add(b + ".running_var", nn::Tensor<float>::full({cout}, 1.0f), 2 * blk + 1, false);
        cin = cout;
    }
    const int H = cfg.gru_hidden;
    const int gin = cfg.conv_channels[3] * cfg.fprime();
    const double gb = std::sqrt(1.0 / double(H));
    for (const char* dir : {"f", "b"}) {
        p.add(std::string("gru.w_ih_") + dir, nn::uniform_init<float>({gin, 3 * H}, gb, rng), 8);
        p.add(std::string("gru.w_hh_") + dir, nn::uniform_init<float>({H, 3 * H}, gb, rng), 8);
        p.add(std::string("gru.b_ih_") + dir, nn::uniform_init<float>({3 * H}, gb, rng), 8);
        p.add(std::string("gru.b_hh_") + dir, nn::uniform_init<float>({3 * H}, gb, rng), 8);
    }
    const double hb = std::sqrt(1.0 / double(2 * H));
    p.add("head.w", nn::uniform_init<float>({2 * H, 3 * cfg.num_classes}, hb, rng), 9);
    p.add("head.b", nn::uniform_init<float>({3 * cfg.num_classes}, hb, rng), 9);
    return p;
}

nn::Tensor<float> backbone_infer(const nn::ParamSet<float>& params, const nn::Tensor<float>& x,
                                 bool train, const BackboneConfig& cfg,
                                 std::vector<nn::Tensor<float>>* maps) {
    nn::Graph<float> g;
    auto bp = nn::bind_params(g, params);
    const int xn = g.constant(x);
    auto out = backbone_forward(g, bp, params, xn, train, cfg, maps != nullptr);
    if (maps) *maps = std::move(out.maps);
    return g.val(out.accdoa);
}

void update_running_stats(nn::ParamSet<float>& params, const std::vector<nn::Tensor<float>>& mean,
                          const std::vector<nn::Tensor<float>>& var, double momentum) {
    for (int blk = 0; blk < 4; ++blk) {
        const std::string b = "bn" + std::to_string(blk + 1);
        auto& rm = params.at(b + ".running_mean").t;
        auto& rv = params.at(b + ".running_var").t;
        for (size_t i = 0; i < rm.numel(); ++i) {
            rm.v[i] = float((1.0 - momentum) * rm.v[i] + momentum * mean[size_t(blk)].v[i]);
            rv.v[i] = float((1.0 - momentum) * rv.v[i] + momentum * var[size_t(blk)].v[i]);
        }
    }
}

std::vector<DecodedEvent> accdoa_decode(const nn::Tensor<float>& pred, double threshold) {
    if (pred.rank() != 2 || pred.dim(1) % 3 != 0)
        throw std::invalid_argument("accdoa_decode: expected [T', 3M]");
    if (threshold <= 0.0 || threshold >= 1.0)
        throw std::invalid_argument("accdoa_decode: threshold must be in (0,1)");
    const int T = pred.dim(0), M = pred.dim(1) / 3;
    std::vector<DecodedEvent> out;
    for (int t = 0; t < T; ++t)
        for (int m = 0; m < M; ++m) {
            const float x = pred.v[size_t(t) * 3 * M + 3 * m];
            const float y = pred.v[size_t(t) * 3 * M + 3 * m + 1];
            const float z = pred.v[size_t(t) * 3 * M + 3 * m + 2];
            const double n = std::sqrt(double(x) * x + double(y) * y + double(z) * z);
            if (n > threshold) out.push_back({t, m, x / n, y / n, z / n});
        }
    return out;
}

nn::Tensor<float> make_accdoa_targets(const std::vector<std::vector<LabelFrame>>& batch_labels,
                                      double clip_s, const BackboneConfig& cfg) {
    const int B = int(batch_labels.size());
    const int Tp = cfg.tprime();
    const int M = cfg.num_classes;
    nn::Tensor<float> tgt({B, Tp, 3 * M});
    const double dt = clip_s / double(Tp);
    for (int b = 0; b < B; ++b) {
        // index labels by (frame, class)
        std::map<std::pair<int, int>, acoustics::Direction> active;
        for (const auto& l : batch_labels[size_t(b)]) active[{l.frame_100ms, l.class_idx}] = l.doa;
        for (int t = 0; t < Tp; ++t) {
            const double center = (t + 0.5) * dt;
            const int f100 = int(center / 0.1);
            for (int m = 0; m < M; ++m) {
                auto it = active.find({f100, m});
                if (it == active.end()) continue;
                double x, y, z;
                it->second.to_unit(x, y, z);
                tgt.v[(size_t(b) * Tp + t) * 3 * M + 3 * m] = float(x);
                tgt.v[(size_t(b) * Tp + t) * 3 * M + 3 * m + 1] = float(y);
                tgt.v[(size_t(b) * Tp + t) * 3 * M + 3 * m + 2] = float(z);
            }
        }
    }
    return tgt;
}

std::vector<int> ExtractorConfig::slice_sizes() const {
    const int n = int(map_feat_dims.size());
    if (n == 0) throw ConfigError("ExtractorConfig: no maps");
    std::vector<int> s(size_t(n), embed_dim / n);
    s.back() += embed_dim - (embed_dim / n) * n;
    return s;
}

nn::ParamSet<float> init_extractor(const ExtractorConfig& cfg, Rng& rng) {
    nn::ParamSet<float> p;
    const auto slices = cfg.slice_sizes();
    for (size_t l = 0; l < cfg.map_feat_dims.size(); ++l) {
        const int in = 2 * cfg.map_feat_dims[l];
        const double bound = std::sqrt(1.0 / double(in));
        const std::string nm = "ext" + std::to_string(l);
        p.add(nm + ".w", nn::uniform_init<float>({in, slices[l]}, bound, rng), int(l));
        p.add(nm + ".b", nn::uniform_init<float>({slices[l]}, bound, rng), int(l));
        p.add(nm + ".run_mean", nn::Tensor<float>::zeros({1, in}), int(l), false);
        p.add(nm + ".run_var", nn::Tensor<float>::full({1, in}, 1.0f), int(l), false);
        p.add(nm + ".run_n", nn::Tensor<float>::zeros({1}), int(l), false);
    }
    return p;
}

std::vector<nn::Tensor<float>> standardize_pooled(const nn::ParamSet<float>& omega,
                                                  const std::vector<nn::Tensor<float>>& pooled) {
    std::vector<nn::Tensor<float>> out = pooled;
    for (size_t l = 0; l < pooled.size(); ++l) {
        const std::string nm = "ext" + std::to_string(l);
        const auto& m = omega.at(nm + ".run_mean").t;
        const auto& v = omega.at(nm + ".run_var").t;
        if (m.numel() != pooled[l].numel())
            throw std::invalid_argument("standardize_pooled: stat shape mismatch");
        for (size_t i = 0; i < out[l].v.size(); ++i)
            out[l].v[i] = float((out[l].v[i] - m.v[i]) / std::sqrt(double(v.v[i]) + 1e-5));
    }
    return out;
}

void update_pooled_running_stats(nn::ParamSet<float>& omega,
                                 const std::vector<nn::Tensor<float>>& pooled, double momentum) {
    for (size_t l = 0; l < pooled.size(); ++l) {
        const std::string nm = "ext" + std::to_string(l);
        auto& m = omega.at(nm + ".run_mean").t;
        auto& v = omega.at(nm + ".run_var").t;
        auto& n = omega.at(nm + ".run_n").t;
        n.v[0] += 1.0f;
        // cumulative averaging until the EWMA rate takes over: the (0,1) prior
        // would otherwise leave wildly inflated variances for large-mean dims
        const double mom = std::max(momentum, 1.0 / double(n.v[0]));
        const bool first = n.v[0] <= 1.5f;
        for (size_t i = 0; i < pooled[l].v.size(); ++i) {
            const double x = pooled[l].v[i];
            const double d = x - m.v[i];
            m.v[i] = float((1.0 - mom) * m.v[i] + mom * x);
            v.v[i] = first ? 1e-4f : float((1.0 - mom) * v.v[i] + mom * d * d);
        }
    }
}

std::vector<float> extractor_eval(const nn::ParamSet<float>& omega, const ExtractorConfig& cfg,
                                  const std::vector<nn::Tensor<float>>& pooled) {
    nn::Graph<float> g;
    auto bp = nn::bind_params(g, omega);
    const int e = extractor_graph(g, bp, cfg, pooled);
    return g.val(e).v;
}

AttnInput attn_input_from_string(const std::string& s) {
    if (s == "none") return AttnInput::none;
    if (s == "gradients") return AttnInput::gradients;
    if (s == "representations") return AttnInput::representations;
    throw ConfigError("unknown attenuation input: " + s);
}

std::string to_string(AttnInput m) {
    switch (m) {
        case AttnInput::none: return "none";
        case AttnInput::gradients: return "gradients";
        default: return "representations";
    }
}

nn::ParamSet<float> init_attenuation(const AttenuationConfig& cfg, Rng& rng) {
    nn::ParamSet<float> p;
    if (cfg.mode == AttnInput::none) {
        p.add("attn.logits", nn::Tensor<float>::full({1, cfg.p}, cfg.output_bias), 0);
        return p;
    }
    const double b1 = std::sqrt(1.0 / double(std::max(1, cfg.input_dim)));
    p.add("attn.w1", nn::uniform_init<float>({cfg.input_dim, cfg.hidden}, b1, rng), 0);
    p.add("attn.b1", nn::uniform_init<float>({cfg.hidden}, b1, rng), 0);
    // zero-init output weights; the bias sets the starting attenuation level
    // (0 -> lambda 0.5, positive -> near identity)
    p.add("attn.w2", nn::Tensor<float>::zeros({cfg.hidden, cfg.p}), 1);
    p.add("attn.b2", nn::Tensor<float>::full({cfg.p}, cfg.output_bias), 1);
    return p;
}

std::vector<float> attenuation_eval(const nn::ParamSet<float>& phi, const AttenuationConfig& cfg,
                                    const std::vector<float>& input_vec) {
    nn::Graph<float> g;
    auto bp = nn::bind_params(g, phi);
    nn::Tensor<float> in;
    if (cfg.mode != AttnInput::none)
        in = nn::Tensor<float>::from({1, int(input_vec.size())},
                                     std::vector<float>(input_vec.begin(), input_vec.end()));
    const int lam = attenuation_graph(g, bp, cfg, in);
    return g.val(lam).v;
}

nn::ParamSet<float> attenuate_params(const nn::ParamSet<float>& theta,
                                     const std::vector<float>& lambda, bool bypass) {
    nn::ParamSet<float> out = theta;
    if (bypass) return out;
    const int p = theta.num_layers();
    if (int(lambda.size()) != p)
        throw std::invalid_argument("attenuate_params: lambda size mismatch");
    for (auto& e : out.entries) {
        if (!e.trainable) continue;  // BN running statistics are not parameters
        const float s = lambda[size_t(e.layer)];
        for (auto& x : e.t.v) x *= s;
    }
    return out;
}

std::vector<float> gradient_summary(const nn::ParamSet<float>& params, const nn::Grads<float>& grads) {
    if (grads.size() != params.entries.size())
        throw std::invalid_argument("gradient_summary: alignment");
    const int p = params.num_layers();
    std::vector<double> sum_abs(size_t(p), 0.0), sum_sq(size_t(p), 0.0), mx(size_t(p), 0.0);
    std::vector<size_t> count(size_t(p), 0);
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!params.entries[i].trainable) continue;
        const int l = params.entries[i].layer;
        for (float gv : grads[i].v) {
            const double a = std::abs(double(gv));
            sum_abs[size_t(l)] += a;
            sum_sq[size_t(l)] += a * a;
            mx[size_t(l)] = std::max(mx[size_t(l)], a);
            ++count[size_t(l)];
        }
    }
    std::vector<float> out(size_t(3 * p), 0.0f);
    for (int l = 0; l < p; ++l) {
        if (count[size_t(l)] == 0) continue;
        out[size_t(3 * l)] = float(sum_abs[size_t(l)] / double(count[size_t(l)]));
        out[size_t(3 * l) + 1] = float(std::sqrt(sum_sq[size_t(l)] / double(count[size_t(l)])));
        out[size_t(3 * l) + 2] = float(mx[size_t(l)]);
    }
    return out;
}

}  // namespace seldlab::model
