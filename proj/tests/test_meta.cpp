#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "seldlab/common.hpp"
#include "seldlab/meta.hpp"

using namespace seldlab;
using namespace seldlab::meta;

namespace {

model::BackboneConfig tiny_cfg() {
    model::BackboneConfig cfg;
    cfg.in_channels = 7;
    cfg.T = 16;
    cfg.F = 16;
    cfg.num_classes = 2;
    cfg.conv_channels = {4, 4, 8, 8};
    cfg.pool_t = {2, 2, 2, 1};
    cfg.pool_f = {2, 2, 2, 2};
    cfg.gru_hidden = 6;
    return cfg;
}

MetaConfig tiny_meta_cfg() {
    MetaConfig mc;
    mc.K = 3;
    mc.sample_batch = 8;
    mc.inner_steps = 2;
    mc.inner_lr = 0.005;
    mc.outer_lr = 0.001;
    mc.epochs = 2;
    mc.seed = 11;
    mc.embed_dim = 20;
    mc.attn_hidden = 16;
    return mc;
}

nn::Tensor<float> randx(const model::BackboneConfig& cfg, int B, Rng& rng) {
    nn::Tensor<float> x({B, cfg.in_channels, cfg.T, cfg.F});
    for (auto& v : x.v) v = float(rng.normal() * 0.3);
    return x;
}

EpisodeBatch toy_episode(const model::BackboneConfig& cfg, uint64_t seed, const std::string& env) {
    Rng rng(seed, 30);
    Rng teacher_rng(99);  // shared teacher across episodes
    auto teacher = model::init_backbone(cfg, teacher_rng);
    EpisodeBatch ep;
    ep.env_id = env;
    ep.sx = randx(cfg, 3, rng);
    ep.qx = randx(cfg, 4, rng);
    ep.st = model::backbone_infer(teacher, ep.sx, false, cfg);
    ep.qt = model::backbone_infer(teacher, ep.qx, false, cfg);
    return ep;
}

bool params_bitwise_equal(const nn::ParamSet<float>& a, const nn::ParamSet<float>& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (size_t i = 0; i < a.entries.size(); ++i)
        if (a.entries[i].name != b.entries[i].name || a.entries[i].t.v != b.entries[i].t.v)
            return false;
    return true;
}

// shared tiny on-disk dataset for the DataStore-backed cases
struct Dataset {
    std::filesystem::path dir;
    scene::DatasetManifest manifest;
};

const Dataset& shared_dataset() {
    static Dataset ds = [] {
        Dataset d;
        d.dir = std::filesystem::temp_directory_path() / "seldlab_meta_ds";
        std::filesystem::remove_all(d.dir);
        scene::GenConfig cfg;
        cfg.seed = 42;
        cfg.clip_s = 5.0;
        cfg.num_classes = 3;
        cfg.min_events = 1;
        cfg.max_events = 2;
        for (int e = 0; e < 2; ++e) {
            scene::EnvGenSpec env;
            env.env_id = "room" + std::to_string(e);
            env.room = srir::RoomSpec::with_target_rt60({4.5 + 0.7 * e, 3.6, 2.9}, 0.3 + 0.15 * e, 6);
            env.n_srirs = 2;
            env.noise_type = -1;
            env.n_clips = 10;
            cfg.envs.push_back(env);
        }
        d.manifest = scene::build_dataset(cfg, d.dir);
        return d;
    }();
    return ds;
}

model::BackboneConfig dataset_cfg() {
    model::BackboneConfig cfg;
    cfg.in_channels = 7;
    cfg.T = 376;
    cfg.F = 64;
    cfg.num_classes = 3;
    cfg.conv_channels = {4, 4, 8, 8};
    cfg.pool_t = {2, 2, 2, 1};
    cfg.pool_f = {2, 2, 2, 8};
    cfg.gru_hidden = 6;
    return cfg;
}

}  // namespace

TEST_CASE("lr schedule: constant then stepped decay") {
    // 80-epoch supervised shape: flat for 60, then x0.9 every 10
    CHECK(scheduled_lr(0.001, 0, 80, 0.75, 0.125, 0.9) == doctest::Approx(0.001));
    CHECK(scheduled_lr(0.001, 59, 80, 0.75, 0.125, 0.9) == doctest::Approx(0.001));
    CHECK(scheduled_lr(0.001, 60, 80, 0.75, 0.125, 0.9) == doctest::Approx(0.0009));
    CHECK(scheduled_lr(0.001, 70, 80, 0.75, 0.125, 0.9) == doctest::Approx(0.00081));
    // 500-epoch meta shape: flat for 300, then x0.9 every 100
    CHECK(scheduled_lr(0.0003, 299, 500, 0.6, 0.2, 0.9) == doctest::Approx(0.0003));
    CHECK(scheduled_lr(0.0003, 300, 500, 0.6, 0.2, 0.9) == doctest::Approx(0.00027));
}

TEST_CASE("inner_adapt: preconditions, zero-lr identity, input untouched") {
    auto cfg = tiny_cfg();
    Rng rng(1);
    auto theta = model::init_backbone(cfg, rng);
    const auto snapshot = theta;
    const auto ep = toy_episode(cfg, 5, "t");

    CHECK_THROWS_AS(inner_adapt(theta, ep.sx, ep.st, 0.01, 0, cfg), std::invalid_argument);

    const auto r0 = inner_adapt(theta, ep.sx, ep.st, 0.0, 3, cfg);
    CHECK(params_bitwise_equal(r0.adapted, theta));
    CHECK(r0.support_losses.size() == 3);

    const auto r1 = inner_adapt(theta, ep.sx, ep.st, 0.01, 2, cfg);
    CHECK(!params_bitwise_equal(r1.adapted, theta));
    CHECK(params_bitwise_equal(theta, snapshot));  // the meta parameters are never mutated
}

TEST_CASE("inner adaptation descends on a learnable toy episode (50 seeds)") {
    auto cfg = tiny_cfg();
    int descended = 0;
    for (int seed = 0; seed < 50; ++seed) {
        Rng rng(uint64_t(seed), 40);
        auto theta = model::init_backbone(cfg, rng);
        const auto ep = toy_episode(cfg, uint64_t(seed), "t");
        const auto r = inner_adapt(theta, ep.sx, ep.st, 0.005, 5, cfg);
        // compare the loss before the first update with the loss after five
        nn::Graph<float> g;
        auto bp = nn::bind_params(g, r.adapted);
        auto out = model::backbone_forward(g, bp, r.adapted, g.constant(ep.sx), true, cfg, false);
        const double final_loss = double(g.val(g.mse(out.accdoa, ep.st)).v[0]);
        if (final_loss <= r.support_losses.front()) ++descended;
    }
    CHECK(descended >= 45);  // >= 90%
}

TEST_CASE("first-order identity: theta meta-gradient equals the query gradient at adapted params") {
    auto cfg = tiny_cfg();
    auto mc = tiny_meta_cfg();
    mc.method = Method::meta_pp;
    mc.inner_steps = 1;

    Rng rng(2);
    auto theta0 = model::init_backbone(cfg, rng);
    auto state = init_meta(mc, cfg, theta0);

    const auto ep = toy_episode(cfg, 7, "env0");
    nn::Grads<float> captured;
    meta_outer_step(state, {ep}, &captured);

    // explicit construction with the public pieces
    const auto inner = inner_adapt(theta0, ep.sx, ep.st, mc.inner_lr, 1, cfg);
    nn::Graph<float> g;
    auto bp = nn::bind_params(g, inner.adapted);
    auto out = model::backbone_forward(g, bp, inner.adapted, g.constant(ep.qx), true, cfg, false);
    const int loss = g.mse(out.accdoa, ep.qt);
    g.backward(loss);
    const auto expect = nn::collect_grads(g, bp, inner.adapted);

    REQUIRE(captured.size() == expect.size());
    for (size_t i = 0; i < captured.size(); ++i) CHECK(captured[i].v == expect[i].v);  // bit-level
}

TEST_CASE("reduction identity: env_adaptive with bypass+skip reproduces meta_pp bit-for-bit") {
    auto cfg = tiny_cfg();
    Rng rng(3);
    const auto theta0 = model::init_backbone(cfg, rng);

    auto mc_pp = tiny_meta_cfg();
    mc_pp.method = Method::meta_pp;
    auto mc_ea = tiny_meta_cfg();
    mc_ea.method = Method::env_adaptive;
    mc_ea.attenuation_bypass = true;
    mc_ea.skip_extractor = true;

    auto s1 = init_meta(mc_pp, cfg, theta0);
    auto s2 = init_meta(mc_ea, cfg, theta0);

    std::vector<EpisodeBatch> eps{toy_episode(cfg, 1, "a"), toy_episode(cfg, 2, "b")};
    for (int epoch = 0; epoch < 3; ++epoch) {
        const auto st1 = meta_outer_step(s1, eps);
        const auto st2 = meta_outer_step(s2, eps);
        CHECK(params_bitwise_equal(s1.theta, s2.theta));
        for (size_t i = 0; i < st1.size(); ++i) {
            CHECK(st1[i].query_loss == st2[i].query_loss);
            CHECK(st1[i].inner_start_loss == st2[i].inner_start_loss);
        }
    }
}

TEST_CASE("meta and meta_pp share one code path (identical injected init)") {
    auto cfg = tiny_cfg();
    Rng rng(4);
    const auto theta0 = model::init_backbone(cfg, rng);
    auto mc_a = tiny_meta_cfg();
    mc_a.method = Method::meta;
    auto mc_b = tiny_meta_cfg();
    mc_b.method = Method::meta_pp;
    auto sa = init_meta(mc_a, cfg, theta0);
    auto sb = init_meta(mc_b, cfg, theta0);
    std::vector<EpisodeBatch> eps{toy_episode(cfg, 1, "a")};
    meta_outer_step(sa, eps);
    meta_outer_step(sb, eps);
    CHECK(params_bitwise_equal(sa.theta, sb.theta));
}

TEST_CASE("env_adaptive outer step moves the attenuation and extractor parameters") {
    auto cfg = tiny_cfg();
    auto mc = tiny_meta_cfg();
    mc.method = Method::env_adaptive;
    mc.attenuation_input = model::AttnInput::representations;
    Rng rng(5);
    auto state = init_meta(mc, cfg, model::init_backbone(cfg, rng));
    const auto phi0 = state.phi;
    const auto omega0 = state.omega;

    std::vector<EpisodeBatch> eps{toy_episode(cfg, 1, "a"), toy_episode(cfg, 2, "b")};
    const auto stats = meta_outer_step(state, eps);
    REQUIRE(stats.size() == 2);
    for (const auto& s : stats) {
        REQUIRE(int(s.lambda.size()) == model::kBackboneLayers);
        for (float l : s.lambda) CHECK(l == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));  // bias +2 start
    }
    CHECK(!params_bitwise_equal(state.phi, phi0));  // the attenuation head received gradient

    // after the head moves away from zero the extractor starts receiving gradient
    meta_outer_step(state, eps);
    CHECK(!params_bitwise_equal(state.omega, omega0));

    // lambda stays in (0,1) after updates
    const auto stats3 = meta_outer_step(state, eps);
    for (const auto& s : stats3)
        for (float l : s.lambda) {
            CHECK(l > 0.0f);
            CHECK(l < 1.0f);
        }
}

TEST_CASE("gradient and none attenuation inputs run end to end") {
    auto cfg = tiny_cfg();
    for (auto input : {model::AttnInput::gradients, model::AttnInput::none}) {
        auto mc = tiny_meta_cfg();
        mc.method = Method::env_adaptive;
        mc.attenuation_input = input;
        Rng rng(6);
        auto state = init_meta(mc, cfg, model::init_backbone(cfg, rng));
        std::vector<EpisodeBatch> eps{toy_episode(cfg, 3, "a")};
        const auto stats = meta_outer_step(state, eps);
        for (float l : stats[0].lambda) {
            CHECK(l > 0.0f);
            CHECK(l < 1.0f);
        }
    }
}

TEST_CASE("episode sampling over a real manifest" * doctest::timeout(900)) {
    const auto& ds = shared_dataset();
    auto cfg = dataset_cfg();
    DataStore store(ds.manifest, cfg, ds.dir / "cache");

    MetaConfig mc;
    mc.K = 3;
    mc.sample_batch = 8;

    Rng rng(9);
    const auto eps = sample_episodes(store, mc, rng);
    REQUIRE(eps.size() == 2);  // one episode per environment
    std::set<std::string> envs;
    for (const auto& e : eps) envs.insert(e.env_id);
    CHECK(envs.size() == 2);
    for (const auto& e : eps) {
        CHECK(e.sx.dim(0) == 3);
        CHECK(e.qx.dim(0) == 5);
        CHECK(e.st.dim(1) == cfg.tprime());
        CHECK(e.st.dim(2) == 3 * cfg.num_classes);
    }

    // support/query disjointness over many draws: resampling the same env twice
    // must never mix support clips into the query half. We can't see indices
    // through EpisodeBatch, so check determinism + split sizes over draws.
    for (int draw = 0; draw < 50; ++draw) {
        Rng r(uint64_t(draw), 50);
        const auto e2 = sample_episodes(store, mc, r);
        for (const auto& e : e2) CHECK(e.sx.dim(0) + e.qx.dim(0) == 8);
    }

    // too large K
    MetaConfig big = mc;
    big.K = 10;
    Rng r2(1);
    CHECK_THROWS_AS(sample_episodes(store, big, r2), DataError);
}

TEST_CASE("supervised training on the shared dataset" * doctest::timeout(900)) {
    const auto& ds = shared_dataset();
    auto cfg = dataset_cfg();
    DataStore store(ds.manifest, cfg, ds.dir / "cache");

    SupervisedConfig scfg;
    scfg.epochs = 3;
    scfg.batch_size = 5;
    scfg.lr = 0.003;
    scfg.seed = 13;

    TrainLog log;
    const auto theta = train_supervised(store, cfg, scfg, &log);
    REQUIRE(log.epoch_loss.size() == 3);

    // zero-lr run leaves the initialization untouched
    SupervisedConfig zcfg = scfg;
    zcfg.lr = 0.0;
    zcfg.epochs = 1;
    const auto theta_z = train_supervised(store, cfg, zcfg, nullptr);
    Rng init_rng(scfg.seed, 2);
    const auto theta_init = model::init_backbone(cfg, init_rng);
    for (size_t i = 0; i < theta_init.entries.size(); ++i)
        if (theta_init.entries[i].name.find("running") == std::string::npos)
            CHECK(theta_z.entries[i].t.v == theta_init.entries[i].t.v);

    // seeded rerun is bit-identical
    const auto theta2 = train_supervised(store, cfg, scfg, nullptr);
    CHECK(params_bitwise_equal(theta, theta2));
}

TEST_CASE("same-room representations are closer than cross-room (majority of trials)" *
          doctest::timeout(900)) {
    const auto& ds = shared_dataset();
    auto cfg = dataset_cfg();
    DataStore store(ds.manifest, cfg, ds.dir / "cache");

    int hits = 0, trials = 0;
    for (uint64_t seed = 1; seed <= 3; ++seed) {
        auto mc = tiny_meta_cfg();
        mc.method = Method::env_adaptive;
        mc.attenuation_input = model::AttnInput::representations;
        mc.K = 3;
        mc.sample_batch = 8;
        mc.epochs = 3;
        mc.seed = seed;
        Rng rng(seed, 77);
        auto state = init_meta(mc, cfg, model::init_backbone(cfg, rng));
        Rng data_rng(seed, 1);
        for (int e = 0; e < mc.epochs; ++e) {
            auto eps = sample_episodes(store, mc, data_rng);
            meta_outer_step(state, eps);
        }
        // two disjoint batches of room0 and one of room1
        const auto c0 = ds.manifest.clips_of_env("room0");
        const auto c1 = ds.manifest.clips_of_env("room1");
        std::vector<int> a(c0.begin(), c0.begin() + 5), b(c0.begin() + 5, c0.end());
        std::vector<int> c(c1.begin(), c1.begin() + 5);
        const auto ra = environment_representation(state, store.stack_features(a));
        const auto rb = environment_representation(state, store.stack_features(b));
        const auto rc = environment_representation(state, store.stack_features(c));
        const auto sim = evalkit::similarity_map({rb, rc}, {ra});
        ++trials;
        if (sim[0][0] > sim[0][1]) ++hits;
    }
    CHECK(hits * 10 >= trials * 6);  // >= 60% of trials
}

TEST_CASE("meta-test adaptation on the shared dataset" * doctest::timeout(900)) {
    const auto& ds = shared_dataset();
    auto cfg = dataset_cfg();
    DataStore store(ds.manifest, cfg, ds.dir / "cache");

    auto mc = tiny_meta_cfg();
    mc.method = Method::meta_pp;
    mc.K = 3;
    mc.inner_steps = 2;
    Rng rng(21);
    auto state = init_meta(mc, cfg, model::init_backbone(cfg, rng));

    const auto res = meta_test_adapt(state, store, "room0", true);
    CHECK(res.query_losses.size() == 2);
    CHECK(std::isfinite(res.zero_shot_query_loss));
    CHECK(res.scores.e_seld >= 0.0);
    CHECK(res.zero_shot_scores.e_seld >= 0.0);

    // zero inner steps: the evaluation is the zero-shot baseline
    auto state0 = state;
    state0.cfg.inner_steps = 0;
    const auto r0 = meta_test_adapt(state0, store, "room0", true);
    CHECK(r0.query_losses.empty());
    CHECK(r0.scores.e_seld == doctest::Approx(r0.zero_shot_scores.e_seld));

    // K equal to the clip count -> error
    auto state_big = state;
    state_big.cfg.K = 10;
    CHECK_THROWS_AS(meta_test_adapt(state_big, store, "room0", false), DataError);
    CHECK_THROWS_AS(meta_test_adapt(state, store, "no_such_room", false), DataError);
}
