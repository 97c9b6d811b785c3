#include "seldlab/meta.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "seldlab/common.hpp"

namespace seldlab::meta {

Method method_from_string(const std::string& s) {
    if (s == "seld") return Method::seld;
    if (s == "meta") return Method::meta;
    if (s == "meta_pp") return Method::meta_pp;
    if (s == "env_adaptive") return Method::env_adaptive;
    throw ConfigError("unknown method: " + s);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::seld: return "seld";
        case Method::meta: return "meta";
        case Method::meta_pp: return "meta_pp";
        default: return "env_adaptive";
    }
}

double scheduled_lr(double base, int epoch, int total_epochs, double start_frac, double every_frac,
                    double factor) {
    const int start = int(start_frac * total_epochs);
    if (epoch < start || total_epochs <= 0) return base;
    const int every = std::max(1, int(every_frac * total_epochs));
    const int steps = (epoch - start) / every + 1;
    return base * std::pow(factor, double(steps));
}

// ---------------------------------------------------------------------------
// DataStore
// ---------------------------------------------------------------------------

DataStore::DataStore(scene::DatasetManifest manifest, model::BackboneConfig cfg,
                     std::filesystem::path cache_dir)
    : manifest_(std::move(manifest)),
      cfg_(std::move(cfg)),
      cache_dir_(std::move(cache_dir)),
      extractor_(feat::StftParams{1024, 320, manifest_.fs}, feat::MelParams{cfg_.F, 50.0, 12000.0}) {
    std::filesystem::create_directories(cache_dir_);
    feat_cache_.resize(manifest_.clips.size());
    label_cache_.resize(manifest_.clips.size());
}

const feat::FeatureTensor& DataStore::features(int clip) const {
    auto& slot = feat_cache_[size_t(clip)];
    if (slot) return *slot;
    std::string key = manifest_.clips[size_t(clip)].wav;
    for (auto& ch : key)
        if (ch == '/' || ch == '\\') ch = '_';
    const auto cache_path = cache_dir_ / (key + ".feat");
    if (std::filesystem::exists(cache_path)) {
        slot = feat::read_feature_cache(cache_path);
    } else {
        const auto audio = dsp::read_wav_f32(manifest_.base_dir / manifest_.clips[size_t(clip)].wav);
        slot = extractor_.extract(audio);
        feat::write_feature_cache(cache_path, *slot, manifest_.fs, 320);
    }
    if (slot->C != cfg_.in_channels || slot->T != cfg_.T || slot->F != cfg_.F)
        throw DataError("DataStore: feature shape does not match the backbone config");
    return *slot;
}

const std::vector<model::LabelFrame>& DataStore::labels(int clip) const {
    auto& slot = label_cache_[size_t(clip)];
    if (slot) return *slot;
    const auto rows = scene::read_labels_csv(manifest_.base_dir / manifest_.clips[size_t(clip)].csv);
    std::vector<model::LabelFrame> out;
    for (const auto& r : rows) out.push_back({r.frame_100ms, r.class_idx, r.doa});
    slot = std::move(out);
    return *slot;
}

nn::Tensor<float> DataStore::stack_features(const std::vector<int>& clips) const {
    const int B = int(clips.size());
    nn::Tensor<float> out({B, cfg_.in_channels, cfg_.T, cfg_.F});
    const size_t per = size_t(cfg_.in_channels) * cfg_.T * cfg_.F;
    for (int b = 0; b < B; ++b) {
        const auto& ft = features(clips[size_t(b)]);
        std::copy(ft.data.begin(), ft.data.end(), out.v.begin() + size_t(b) * per);
    }
    return out;
}

nn::Tensor<float> DataStore::stack_targets(const std::vector<int>& clips) const {
    std::vector<std::vector<model::LabelFrame>> batch;
    for (int c : clips) batch.push_back(labels(c));
    return model::make_accdoa_targets(batch, manifest_.clip_s, cfg_);
}

// ---------------------------------------------------------------------------
// shared forward/backward helper
// ---------------------------------------------------------------------------

namespace {

double forward_loss(const nn::ParamSet<float>& theta, const nn::Tensor<float>& x,
                    const nn::Tensor<float>& tgt, bool train, const model::BackboneConfig& cfg,
                    nn::Grads<float>* grads, std::vector<nn::Tensor<float>>* bn_mean = nullptr,
                    std::vector<nn::Tensor<float>>* bn_var = nullptr) {
    nn::Graph<float> g;
    auto bp = nn::bind_params(g, theta);
    const int xn = g.constant(x);
    auto out = model::backbone_forward(g, bp, theta, xn, train, cfg, false);
    const int loss = g.mse(out.accdoa, tgt);
    const double lv = double(g.val(loss).v[0]);
    if (!std::isfinite(lv)) throw NumericError("training diverged: non-finite loss");
    if (grads) {
        g.backward(loss);
        *grads = nn::collect_grads(g, bp, theta);
    }
    if (bn_mean) *bn_mean = std::move(out.bn_mean);
    if (bn_var) *bn_var = std::move(out.bn_var);
    return lv;
}

double eval_loss_chunked(const nn::ParamSet<float>& theta, const nn::Tensor<float>& x,
                         const nn::Tensor<float>& tgt, const model::BackboneConfig& cfg) {
    const int B = x.dim(0);
    const size_t xper = x.numel() / size_t(B);
    const size_t tper = tgt.numel() / size_t(B);
    double acc = 0.0;
    const int chunk = 8;
    for (int b0 = 0; b0 < B; b0 += chunk) {
        const int bc = std::min(chunk, B - b0);
        nn::Tensor<float> xs({bc, x.dim(1), x.dim(2), x.dim(3)});
        nn::Tensor<float> ts({bc, tgt.dim(1), tgt.dim(2)});
        std::copy_n(x.v.begin() + size_t(b0) * xper, size_t(bc) * xper, xs.v.begin());
        std::copy_n(tgt.v.begin() + size_t(b0) * tper, size_t(bc) * tper, ts.v.begin());
        acc += forward_loss(theta, xs, ts, false, cfg, nullptr) * double(bc);
    }
    return acc / double(B);
}

// Pooled statistics of the input feature tensor and of every backbone layer
// map. Maps come from an eval-mode forward (frozen running statistics):
// batch-statistics normalization would strip exactly the level and spectral
// cues that distinguish environments.
std::vector<nn::Tensor<float>> episode_pooled_stats(const nn::ParamSet<float>& theta,
                                                    const nn::Tensor<float>& sx,
                                                    const model::BackboneConfig& cfg) {
    std::vector<nn::Tensor<float>> maps;
    model::backbone_infer(theta, sx, /*train=*/false, cfg, &maps);
    std::vector<nn::Tensor<float>> pooled;
    pooled.push_back(model::pooled_map_stats(sx));
    for (const auto& m : maps) pooled.push_back(model::pooled_map_stats(m));
    return pooled;
}

}  // namespace

// ---------------------------------------------------------------------------
// supervised training
// ---------------------------------------------------------------------------

nn::ParamSet<float> train_supervised(const DataStore& store, const model::BackboneConfig& cfg,
                                     const SupervisedConfig& scfg, TrainLog* log) {
    Rng init_rng(scfg.seed, 2);
    nn::ParamSet<float> theta = model::init_backbone(cfg, init_rng);
    auto opt = nn::AdamWState<float>::init(theta, scfg.weight_decay);

    Rng data_rng(scfg.seed, 1);
    std::vector<int> order(size_t(store.num_clips()));
    for (int i = 0; i < store.num_clips(); ++i) order[size_t(i)] = i;

    for (int epoch = 0; epoch < scfg.epochs; ++epoch) {
        data_rng.shuffle(order);
        const double lr = scheduled_lr(scfg.lr, epoch, scfg.epochs, scfg.lr_decay_start_frac,
                                       scfg.lr_decay_every_frac, scfg.lr_decay_factor);
        double ep_loss = 0.0;
        int n_batches = 0;
        for (size_t b0 = 0; b0 < order.size(); b0 += size_t(scfg.batch_size)) {
            std::vector<int> batch(order.begin() + long(b0),
                                   order.begin() + long(std::min(order.size(), b0 + size_t(scfg.batch_size))));
            const auto x = store.stack_features(batch);
            const auto t = store.stack_targets(batch);
            nn::Grads<float> grads;
            std::vector<nn::Tensor<float>> bm, bv;
            const double loss = forward_loss(theta, x, t, true, cfg, &grads, &bm, &bv);
            auto [theta2, opt2] = nn::adamw_step(theta, grads, opt, lr);
            theta = std::move(theta2);
            opt = std::move(opt2);
            model::update_running_stats(theta, bm, bv, scfg.bn_momentum);
            ep_loss += loss;
            ++n_batches;
        }
        if (log) log->epoch_loss.push_back(ep_loss / std::max(1, n_batches));
    }
    return theta;
}

// ---------------------------------------------------------------------------
// episodes
// ---------------------------------------------------------------------------

std::vector<EpisodeBatch> sample_episodes(const DataStore& store, const MetaConfig& cfg, Rng& rng) {
    const auto& man = store.manifest();
    if (man.env_ids.empty()) throw DataError("sample_episodes: manifest has no environments");
    std::vector<std::string> envs = man.env_ids;
    rng.shuffle(envs);

    std::vector<EpisodeBatch> out;
    for (const auto& env : envs) {
        auto clips = man.clips_of_env(env);
        if (int(clips.size()) <= cfg.K)
            throw DataError("sample_episodes: environment " + env + " has too few clips for K");
        int batch = cfg.sample_batch;
        if (int(clips.size()) < batch) {
            std::fprintf(stderr,
                         "[seldlab] warning: env %s has %zu clips < sample_batch %d, shrinking\n",
                         env.c_str(), clips.size(), batch);
            batch = int(clips.size());
        }
        rng.shuffle(clips);
        std::vector<int> support(clips.begin(), clips.begin() + cfg.K);
        std::vector<int> query(clips.begin() + cfg.K, clips.begin() + batch);

        EpisodeBatch ep;
        ep.env_id = env;
        ep.sx = store.stack_features(support);
        ep.st = store.stack_targets(support);
        ep.qx = store.stack_features(query);
        ep.qt = store.stack_targets(query);
        out.push_back(std::move(ep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// inner loop
// ---------------------------------------------------------------------------

InnerResult inner_adapt(const nn::ParamSet<float>& theta_init, const nn::Tensor<float>& sx,
                        const nn::Tensor<float>& st, double alpha, int n_steps,
                        const model::BackboneConfig& cfg) {
    if (n_steps < 1) throw std::invalid_argument("inner_adapt: n_steps must be >= 1");
    InnerResult res;
    res.adapted = theta_init;
    for (int step = 0; step < n_steps; ++step) {
        nn::Grads<float> grads;
        std::vector<nn::Tensor<float>> bm, bv;
        const double loss =
            forward_loss(res.adapted, sx, st, true, cfg, &grads,
                         step == 0 ? &res.first_bn_mean : &bm, step == 0 ? &res.first_bn_var : &bv);
        res.support_losses.push_back(loss);
        res.adapted = nn::sgd_step(res.adapted, grads, alpha);
    }
    return res;
}

// ---------------------------------------------------------------------------
// meta state + outer loop
// ---------------------------------------------------------------------------

MetaState init_meta(const MetaConfig& cfg, const model::BackboneConfig& bb,
                    std::optional<nn::ParamSet<float>> theta0) {
    MetaState st;
    st.cfg = cfg;
    st.bb_cfg = bb;

    if (theta0) {
        st.theta = std::move(*theta0);
    } else {
        Rng rng(cfg.seed, 2);
        st.theta = model::init_backbone(bb, rng);
    }

    st.ext_cfg.embed_dim = cfg.embed_dim;
    st.ext_cfg.map_feat_dims = bb.extractor_map_dims();
    Rng rng_ext(cfg.seed, 3);
    st.omega = model::init_extractor(st.ext_cfg, rng_ext);

    st.attn_cfg.mode = cfg.attenuation_input;
    st.attn_cfg.hidden = cfg.attn_hidden;
    st.attn_cfg.p = model::kBackboneLayers;
    st.attn_cfg.output_bias = cfg.attn_output_bias;
    st.attn_cfg.input_dim = cfg.attenuation_input == model::AttnInput::representations
                                ? cfg.embed_dim
                                : (cfg.attenuation_input == model::AttnInput::gradients
                                       ? 3 * model::kBackboneLayers
                                       : 0);
    Rng rng_attn(cfg.seed, 4);
    st.phi = model::init_attenuation(st.attn_cfg, rng_attn);

    st.opt_theta = nn::AdamWState<float>::init(st.theta, cfg.weight_decay);
    st.opt_omega = nn::AdamWState<float>::init(st.omega, cfg.weight_decay);
    st.opt_phi = nn::AdamWState<float>::init(st.phi, cfg.weight_decay);
    return st;
}

namespace {

struct LambdaOut {
    std::vector<float> lambda;
    std::vector<float> representation;
};

// Attenuation coefficients at theta for one support set (no graph, inference).
LambdaOut compute_lambda(const MetaState& st, const nn::Tensor<float>& sx,
                         const nn::Tensor<float>& st_targets) {
    LambdaOut out;
    const auto& cfg = st.cfg;
    if (cfg.attenuation_bypass) {
        out.lambda.assign(size_t(st.attn_cfg.p), 1.0f);
        return out;
    }
    std::vector<float> input;
    switch (cfg.attenuation_input) {
        case model::AttnInput::representations: {
            if (cfg.skip_extractor) {
                input.assign(size_t(st.attn_cfg.input_dim), 0.0f);
            } else {
                const auto pooled = model::standardize_pooled(
                    st.omega, episode_pooled_stats(st.theta, sx, st.bb_cfg));
                out.representation = model::extractor_eval(st.omega, st.ext_cfg, pooled);
                input = out.representation;
            }
            break;
        }
        case model::AttnInput::gradients: {
            nn::Grads<float> grads;
            forward_loss(st.theta, sx, st_targets, true, st.bb_cfg, &grads);
            input = model::gradient_summary(st.theta, grads);
            break;
        }
        case model::AttnInput::none:
            break;
    }
    out.lambda = model::attenuation_eval(st.phi, st.attn_cfg, input);
    return out;
}

}  // namespace

std::vector<EpisodeStats> meta_outer_step(MetaState& state, const std::vector<EpisodeBatch>& episodes,
                                          nn::Grads<float>* captured_theta_grad) {
    if (episodes.empty()) throw DataError("meta_outer_step: no episodes");
    const auto& cfg = state.cfg;
    const bool use_attn = cfg.method == Method::env_adaptive && !cfg.attenuation_bypass;

    nn::Grads<float> acc_theta, acc_omega, acc_phi;
    nn::ParamSet<float> working_theta = state.theta;  // BN buffers update sequentially
    nn::ParamSet<float> working_omega = state.omega;  // pooled-stat buffers likewise
    std::vector<EpisodeStats> stats;

    for (const auto& ep : episodes) {
        EpisodeStats es;
        es.env_id = ep.env_id;

        // 1) attenuated starting point
        std::vector<float> lambda;
        std::vector<float> attn_input;
        if (use_attn) {
            // keep the Omega/Phi graph alive so the exact gradients can flow
            // through the attenuation product after the query gradient is known
            switch (cfg.attenuation_input) {
                case model::AttnInput::representations:
                    if (!cfg.skip_extractor) break;  // pooled stats computed below
                    attn_input.assign(size_t(state.attn_cfg.input_dim), 0.0f);
                    break;
                case model::AttnInput::gradients: {
                    nn::Grads<float> sgrads;
                    forward_loss(state.theta, ep.sx, ep.st, true, state.bb_cfg, &sgrads);
                    attn_input = model::gradient_summary(state.theta, sgrads);
                    break;
                }
                case model::AttnInput::none:
                    break;
            }
        }

        nn::Graph<float> gof;  // omega/phi graph
        int lambda_node = -1;
        nn::BoundParams<float> b_omega, b_phi;
        if (use_attn) {
            b_omega = nn::bind_params(gof, state.omega);
            b_phi = nn::bind_params(gof, state.phi);
            if (cfg.attenuation_input == model::AttnInput::representations && !cfg.skip_extractor) {
                const auto raw_pooled = episode_pooled_stats(state.theta, ep.sx, state.bb_cfg);
                const auto pooled = model::standardize_pooled(state.omega, raw_pooled);
                model::update_pooled_running_stats(working_omega, raw_pooled, cfg.pooled_stat_momentum);
                const int e_node = model::extractor_graph(gof, b_omega, state.ext_cfg, pooled);
                // h_phi on the representation node
                const int h = gof.relu(gof.linear(e_node, b_phi["attn.w1"], b_phi["attn.b1"]));
                lambda_node = gof.sigmoid(gof.linear(h, b_phi["attn.w2"], b_phi["attn.b2"]));
            } else {
                nn::Tensor<float> in;
                if (state.attn_cfg.mode != model::AttnInput::none)
                    in = nn::Tensor<float>::from({1, int(attn_input.size())}, attn_input);
                lambda_node = model::attenuation_graph(gof, b_phi, state.attn_cfg, in);
            }
            lambda = gof.val(lambda_node).v;
        }
        es.lambda = lambda;

        const auto theta_start =
            model::attenuate_params(state.theta, lambda, !use_attn /*bypass => exact copy*/);

        // 2) inner adaptation (theta only; running stats frozen)
        auto inner = inner_adapt(theta_start, ep.sx, ep.st, cfg.inner_lr, cfg.inner_steps, state.bb_cfg);
        es.inner_start_loss = inner.support_losses.front();

        // 3) query loss and gradient at the adapted parameters
        nn::Grads<float> qgrads;
        es.query_loss = forward_loss(inner.adapted, ep.qx, ep.qt, true, state.bb_cfg, &qgrads);

        // 4) first-order meta-gradient for theta: the query gradient mapped
        // onto theta's slots through the identity
        nn::grads_axpy(acc_theta, qgrads, 1.0f);

        // 5) exact gradients for omega/phi through lambda ⊙ theta
        if (use_attn) {
            std::vector<float> coef(size_t(state.attn_cfg.p), 0.0f);
            for (size_t i = 0; i < state.theta.entries.size(); ++i) {
                const auto& e = state.theta.entries[i];
                if (!e.trainable) continue;
                double d = 0.0;
                for (size_t j = 0; j < e.t.v.size(); ++j)
                    d += double(e.t.v[j]) * double(qgrads[i].v[j]);
                coef[size_t(e.layer)] += float(d);
            }
            const int pseudo =
                gof.inner_const(lambda_node, nn::Tensor<float>::from({1, state.attn_cfg.p}, coef));
            gof.backward(pseudo);
            nn::grads_axpy(acc_omega, nn::collect_grads(gof, b_omega, state.omega), 1.0f);
            nn::grads_axpy(acc_phi, nn::collect_grads(gof, b_phi, state.phi), 1.0f);
        }

        // 6) BN running statistics from the first inner forward
        model::update_running_stats(working_theta, inner.first_bn_mean, inner.first_bn_var,
                                    cfg.bn_momentum);
        stats.push_back(std::move(es));
    }

    const float inv = 1.0f / float(episodes.size());
    for (auto& t : acc_theta)
        for (auto& x : t.v) x *= inv;
    if (captured_theta_grad) *captured_theta_grad = acc_theta;

    const double lr = scheduled_lr(cfg.outer_lr, state.epoch, cfg.epochs, cfg.lr_decay_start_frac,
                                   cfg.lr_decay_every_frac, cfg.lr_decay_factor);
    {
        auto [t2, o2] = nn::adamw_step(working_theta, acc_theta, state.opt_theta, lr);
        state.theta = std::move(t2);
        state.opt_theta = std::move(o2);
    }
    if (use_attn) {
        for (auto& t : acc_omega)
            for (auto& x : t.v) x *= inv;
        for (auto& t : acc_phi)
            for (auto& x : t.v) x *= inv;
        if (!acc_omega.empty()) {
            auto [p2, o2] = nn::adamw_step(working_omega, acc_omega, state.opt_omega, lr);
            state.omega = std::move(p2);
            state.opt_omega = std::move(o2);
        }
        if (!acc_phi.empty()) {
            auto [p2, o2] = nn::adamw_step(state.phi, acc_phi, state.opt_phi, lr);
            state.phi = std::move(p2);
            state.opt_phi = std::move(o2);
        }
    }
    state.epoch += 1;
    return stats;
}

// ---------------------------------------------------------------------------
// meta-test adaptation and evaluation
// ---------------------------------------------------------------------------

EvalEvents evaluate_on_clips(const nn::ParamSet<float>& theta, const DataStore& store,
                             const std::vector<int>& clips, const model::BackboneConfig& cfg,
                             double threshold) {
    EvalEvents ev;
    const int frames_per_clip = int(std::ceil(store.manifest().clip_s / 0.1));
    const int stride = ((frames_per_clip + 9) / 10) * 10 + 10;
    const double dt = store.manifest().clip_s / double(cfg.tprime());

    double loss_acc = 0.0;
    for (size_t i = 0; i < clips.size(); ++i) {
        const auto x = store.stack_features({clips[i]});
        const auto t = store.stack_targets({clips[i]});
        nn::Graph<float> g;
        auto bp = nn::bind_params(g, theta);
        auto out = model::backbone_forward(g, bp, theta, g.constant(x), false, cfg, false);
        loss_acc += double(g.val(g.mse(out.accdoa, t)).v[0]);

        nn::Tensor<float> pred({cfg.tprime(), 3 * cfg.num_classes});
        pred.v.assign(g.val(out.accdoa).v.begin(), g.val(out.accdoa).v.end());
        const auto events = model::accdoa_decode(pred, threshold);
        const int base = int(i) * stride;
        // nearest T' frame for each 100 ms frame
        for (int f = 0; f < frames_per_clip; ++f) {
            const double center = (f + 0.5) * 0.1;
            const int tp = std::min(cfg.tprime() - 1, int(center / dt));
            for (const auto& de : events)
                if (de.frame == tp)
                    ev.pred[base + f].push_back({de.class_idx, {de.x, de.y, de.z}});
        }
        for (const auto& l : store.labels(clips[i])) {
            double x3, y3, z3;
            l.doa.to_unit(x3, y3, z3);
            ev.ref[base + l.frame_100ms].push_back({l.class_idx, {x3, y3, z3}});
        }
    }
    ev.mean_loss = clips.empty() ? 0.0 : loss_acc / double(clips.size());
    return ev;
}

std::vector<float> environment_representation(const MetaState& state, const nn::Tensor<float>& x) {
    const auto pooled = model::standardize_pooled(state.omega,
                                                  episode_pooled_stats(state.theta, x, state.bb_cfg));
    return model::extractor_eval(state.omega, state.ext_cfg, pooled);
}

namespace {

AdaptationResult adapt_core(const MetaState& state, const nn::Tensor<float>& sx,
                            const nn::Tensor<float>& st_t, const nn::Tensor<float>& qx,
                            const nn::Tensor<float>& qt) {
    const auto& cfg = state.cfg;
    AdaptationResult res;

    const bool use_attn = cfg.method == Method::env_adaptive && !cfg.attenuation_bypass;
    nn::ParamSet<float> theta_start = state.theta;
    if (use_attn) {
        const auto lam = compute_lambda(state, sx, st_t);
        res.lambda = lam.lambda;
        res.representation = lam.representation;
        theta_start = model::attenuate_params(state.theta, lam.lambda, false);
    }

    res.zero_shot_query_loss = eval_loss_chunked(state.theta, qx, qt, state.bb_cfg);

    nn::ParamSet<float> cur = theta_start;
    for (int step = 0; step < cfg.inner_steps; ++step) {
        nn::Grads<float> grads;
        forward_loss(cur, sx, st_t, true, state.bb_cfg, &grads);
        cur = nn::sgd_step(cur, grads, cfg.inner_lr);
        res.query_losses.push_back(eval_loss_chunked(cur, qx, qt, state.bb_cfg));
    }
    res.adapted = std::move(cur);
    return res;
}

}  // namespace

AdaptationResult meta_test_adapt(const MetaState& state, const DataStore& store,
                                 const std::string& env_id, bool with_metrics) {
    const auto clips = store.manifest().clips_of_env(env_id);
    if (clips.empty()) throw DataError("meta_test_adapt: unknown environment " + env_id);
    if (int(clips.size()) <= state.cfg.K)
        throw DataError("meta_test_adapt: environment " + env_id + " has too few clips for K=" +
                        std::to_string(state.cfg.K));

    const std::vector<int> support(clips.begin(), clips.begin() + state.cfg.K);
    const std::vector<int> query(clips.begin() + state.cfg.K, clips.end());

    const auto sx = store.stack_features(support);
    const auto st_t = store.stack_targets(support);
    const auto qx = store.stack_features(query);
    const auto qt = store.stack_targets(query);

    auto res = adapt_core(state, sx, st_t, qx, qt);
    if (with_metrics) {
        const auto ev0 = evaluate_on_clips(state.theta, store, query, state.bb_cfg, state.cfg.decode_threshold);
        res.zero_shot_scores =
            evalkit::match_and_score(ev0.pred, ev0.ref, store.manifest().num_classes);
        const auto& final_theta = state.cfg.inner_steps > 0 ? res.adapted : state.theta;
        const auto ev1 = evaluate_on_clips(final_theta, store, query, state.bb_cfg, state.cfg.decode_threshold);
        res.scores = evalkit::match_and_score(ev1.pred, ev1.ref, store.manifest().num_classes);
    }
    return res;
}

AdaptationResult adapt_on_episode(const MetaState& state, const EpisodeBatch& ep) {
    return adapt_core(state, ep.sx, ep.st, ep.qx, ep.qt);
}

}  // namespace seldlab::meta
