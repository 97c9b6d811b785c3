#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "seldlab/common.hpp"
#include "seldlab/nn.hpp"
#include "seldlab/rng.hpp"

using namespace seldlab;
using namespace seldlab::nn;

namespace {

Tensor<double> randt(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.v) v = rng.normal() * scale;
    return t;
}

}  // namespace

TEST_CASE("d/dx x^2 at x=3 is 6") {
    Graph<double> g;
    const int x = g.leaf(Tensor<double>::full({1}, 3.0), true);
    const int y = g.mean_all(g.mul(x, x));
    g.backward(y);
    CHECK(g.grad(x).v[0] == doctest::Approx(6.0));
}

TEST_CASE("elementwise and reduction ops pass finite differences") {
    Rng rng(1);
    ParamSet<double> p;
    p.add("a", randt({3, 4}, rng), 0);
    p.add("b", randt({3, 4}, rng), 0);
    auto rep = grad_check(p, [](Graph<double>& g, const BoundParams<double>& bp) {
        const int s = g.mul(g.add(bp["a"], bp["b"]), g.sub(bp["a"], g.scale(bp["b"], 0.3)));
        const int t = g.tanh_(g.sigmoid(s));
        const int m0 = g.mean_over(t, 0);
        return g.mean_all(g.relu(m0));
    });
    CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("matmul + bias + mse gradients are near-exact") {
    Rng rng(2);
    ParamSet<double> p;
    p.add("w", randt({5, 3}, rng), 0);
    p.add("b", randt({3}, rng), 0);
    const auto x = randt({4, 5}, rng);
    const auto tgt = randt({4, 3}, rng);
    auto rep = grad_check(p, [&](Graph<double>& g, const BoundParams<double>& bp) {
        return g.mse(g.linear(g.constant(x), bp["w"], bp["b"]), tgt);
    });
    CHECK(rep.max_rel_err < 1e-9);  // linear map: central differences are exact
}

TEST_CASE("conv2d gradient vs central differences on random 2x3x8x8") {
    Rng rng(3);
    ParamSet<double> p;
    p.add("w", randt({4, 3, 3, 3}, rng, 0.5), 0);
    p.add("b", randt({4}, rng, 0.5), 0);
    p.add("x", randt({2, 3, 8, 8}, rng), 0);
    const auto tgt = randt({2, 4, 8, 8}, rng);
    auto rep = grad_check(p, [&](Graph<double>& g, const BoundParams<double>& bp) {
        return g.mse(g.conv2d(bp["x"], bp["w"], bp["b"], 1), tgt);
    });
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("batchnorm2d gradients (train and eval)") {
    Rng rng(4);
    ParamSet<double> p;
    p.add("x", randt({3, 2, 4, 4}, rng), 0);
    p.add("gamma", randt({2}, rng, 0.5), 0);
    p.add("beta", randt({2}, rng, 0.5), 0);
    const auto tgt = randt({3, 2, 4, 4}, rng);
    const auto rm = randt({2}, rng, 0.1);
    auto rv = Tensor<double>::full({2}, 0.9);

    for (bool train : {true, false}) {
        auto rep = grad_check(p, [&](Graph<double>& g, const BoundParams<double>& bp) {
            return g.mse(g.batchnorm2d(bp["x"], bp["gamma"], bp["beta"], rm, rv, train), tgt);
        });
        CHECK(rep.max_rel_err < 1e-6);
    }
}

TEST_CASE("batchnorm2d batch statistics and running-stat momentum") {
    // with momentum 0.01 the running mean moves 1% toward the batch mean
    Graph<float> g;
    Tensor<float> x({2, 1, 2, 2});
    for (size_t i = 0; i < 8; ++i) x.v[i] = float(i);  // batch mean 3.5
    const int xn = g.constant(x);
    const int gamma = g.constant(Tensor<float>::full({1}, 1.0f));
    const int beta = g.constant(Tensor<float>::zeros({1}));
    Tensor<float> bm({1}), bv({1});
    g.batchnorm2d(xn, gamma, beta, Tensor<float>::zeros({1}), Tensor<float>::full({1}, 1.0f), true,
                  &bm, &bv);
    CHECK(bm.v[0] == doctest::Approx(3.5));

    float rm = 0.0f;
    rm = float((1.0 - 0.01) * rm + 0.01 * bm.v[0]);
    CHECK(rm == doctest::Approx(0.035));  // moved exactly 1% toward 3.5
}

TEST_CASE("maxpool2d forward and gradient") {
    Rng rng(5);
    ParamSet<double> p;
    p.add("x", randt({2, 2, 4, 6}, rng), 0);
    const auto tgt = randt({2, 2, 2, 3}, rng);
    auto rep = grad_check(p, [&](Graph<double>& g, const BoundParams<double>& bp) {
        return g.mse(g.maxpool2d(bp["x"], 2, 2), tgt);
    });
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("bidirectional GRU gradient vs finite differences (T=5, hidden=8)") {
    Rng rng(6);
    const int C = 6, H = 8, T = 5, B = 2;
    ParamSet<double> p;
    const double s = 0.4;
    for (const char* dir : {"f", "b"}) {
        p.add(std::string("w_ih_") + dir, randt({C, 3 * H}, rng, s), 0);
        p.add(std::string("w_hh_") + dir, randt({H, 3 * H}, rng, s), 0);
        p.add(std::string("b_ih_") + dir, randt({3 * H}, rng, s), 0);
        p.add(std::string("b_hh_") + dir, randt({3 * H}, rng, s), 0);
    }
    p.add("x", randt({B, T, C}, rng), 0);
    const auto tgt = randt({B, T, 2 * H}, rng);

    auto bigru = [&](Graph<double>& g, const BoundParams<double>& bp) {
        auto dir_pass = [&](bool rev, const char* d) {
            const int flat = g.reshape(bp["x"], {B * T, C});
            const int pre_x = g.reshape(
                g.add_rowvec(g.matmul(flat, bp[std::string("w_ih_") + d]), bp[std::string("b_ih_") + d]),
                {B, T, 3 * H});
            int h = g.constant(Tensor<double>::zeros({B, H}));
            std::vector<int> outs(static_cast<size_t>(T));
            for (int step = 0; step < T; ++step) {
                const int t = rev ? T - 1 - step : step;
                const int px = g.select_time(pre_x, t);
                const int ph = g.add_rowvec(g.matmul(h, bp[std::string("w_hh_") + d]),
                                            bp[std::string("b_hh_") + d]);
                const int r = g.sigmoid(g.add(g.col_slice(px, 0, H), g.col_slice(ph, 0, H)));
                const int z = g.sigmoid(g.add(g.col_slice(px, H, H), g.col_slice(ph, H, H)));
                const int n =
                    g.tanh_(g.add(g.col_slice(px, 2 * H, H), g.mul(r, g.col_slice(ph, 2 * H, H))));
                h = g.add(n, g.mul(z, g.sub(h, n)));
                outs[size_t(t)] = h;
            }
            return outs;
        };
        auto f = dir_pass(false, "f");
        auto b = dir_pass(true, "b");
        std::vector<int> joined(static_cast<size_t>(T));
        for (int t = 0; t < T; ++t) joined[size_t(t)] = g.concat_cols({f[size_t(t)], b[size_t(t)]});
        return g.mse(g.stack_time(joined), tgt);
    };
    auto rep = grad_check(p, bigru, 1e-5);
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("sgd_step: pure functional, trivial values, two-step composition") {
    ParamSet<float> p;
    p.add("w", Tensor<float>::full({1}, 1.0f), 0);
    Grads<float> g{Tensor<float>::full({1}, 2.0f)};

    const auto p1 = sgd_step(p, g, 0.1);
    CHECK(p1.at("w").t.v[0] == doctest::Approx(0.8f));
    CHECK(p.at("w").t.v[0] == 1.0f);  // input untouched

    const auto p0 = sgd_step(p, g, 0.0);
    CHECK(p0.at("w").t.v[0] == 1.0f);

    // two sequential steps with a fixed gradient equal one step at summed scale
    const auto p2 = sgd_step(sgd_step(p, g, 0.05), g, 0.05);
    const auto p2b = sgd_step(p, g, 0.1);
    CHECK(p2.at("w").t.v[0] == doctest::Approx(p2b.at("w").t.v[0]));

    Grads<float> bad{Tensor<float>::full({2}, 1.0f)};
    CHECK_THROWS_AS(sgd_step(p, bad, 0.1), std::invalid_argument);
}

TEST_CASE("adamw_step against a hand-rolled 64-bit reference") {
    ParamSet<float> p;
    p.add("w", Tensor<float>::full({1}, 0.5f), 0);
    auto st = AdamWState<float>::init(p, 0.0);
    Grads<float> g{Tensor<float>::full({1}, 1.0f)};

    // first step: m=0.1g/0.1, v=0.001g^2/0.001 -> update = lr * 1/(1+eps)
    auto [p1, st1] = adamw_step(p, g, st, 1e-3);
    const double mhat = 0.1 / 0.1, vhat = 1e-3 / 1e-3;
    const double want = 0.5 - 1e-3 * (mhat / (std::sqrt(vhat) + 1e-8));
    CHECK(p1.at("w").t.v[0] == doctest::Approx(want).epsilon(1e-7));

    // zero grads, zero weight decay: parameters unchanged
    Grads<float> z{Tensor<float>::zeros({1})};
    auto [p2, st2] = adamw_step(p, z, st, 1e-3);
    CHECK(p2.at("w").t.v[0] == 0.5f);

    // zero grads with decoupled decay 0.01: w shrinks by lr*0.01*w
    auto std3 = AdamWState<float>::init(p, 0.01);
    auto [p3, st4] = adamw_step(p, z, std3, 1e-3);
    CHECK(p3.at("w").t.v[0] == doctest::Approx(0.5 - 1e-3 * 0.01 * 0.5).epsilon(1e-7));

    // longer run against a double-precision reference
    ParamSet<float> pr;
    pr.add("w", Tensor<float>::full({1}, 0.3f), 0);
    auto str = AdamWState<float>::init(pr, 0.004);
    double w_ref = 0.3, m_ref = 0, v_ref = 0;
    Rng rng(8);
    for (int k = 1; k <= 25; ++k) {
        const double gv = rng.normal();
        Grads<float> gg{Tensor<float>::full({1}, float(gv))};
        auto [pn, sn] = adamw_step(pr, gg, str, 0.01);
        pr = std::move(pn);
        str = std::move(sn);
        m_ref = 0.9 * m_ref + 0.1 * gv;
        v_ref = 0.999 * v_ref + 0.001 * gv * gv;
        const double mh = m_ref / (1 - std::pow(0.9, k));
        const double vh = v_ref / (1 - std::pow(0.999, k));
        w_ref -= 0.01 * (mh / (std::sqrt(vh) + 1e-8) + 0.004 * w_ref);
    }
    CHECK(pr.at("w").t.v[0] == doctest::Approx(w_ref).epsilon(1e-4));

    // buffers (non-trainable entries) are never touched
    ParamSet<float> pb;
    pb.add("w", Tensor<float>::full({1}, 1.0f), 0);
    pb.add("buf", Tensor<float>::full({1}, 7.0f), 0, false);
    auto stb = AdamWState<float>::init(pb, 0.5);
    Grads<float> gb{Tensor<float>::full({1}, 1.0f), Tensor<float>::full({1}, 1.0f)};
    auto [pb1, stb1] = adamw_step(pb, gb, stb, 0.1);
    CHECK(pb1.at("buf").t.v[0] == 7.0f);
    const auto pb2 = sgd_step(pb, gb, 0.1);
    CHECK(pb2.at("buf").t.v[0] == 7.0f);
}

TEST_CASE("grad_check utility: identity and linear are exact") {
    Rng rng(9);
    ParamSet<double> p;
    p.add("w", randt({4}, rng), 0);
    auto rep1 = grad_check(p, [](Graph<double>& g, const BoundParams<double>& bp) {
        return g.mean_all(bp["w"]);
    });
    CHECK(rep1.max_rel_err < 1e-10);
    CHECK(rep1.per_param.size() == 1);
}

TEST_CASE("graph determinism: identical runs produce identical values and grads") {
    auto run = [] {
        Rng rng(12);
        Graph<float> g;
        const int x = g.leaf(Tensor<float>::from({2, 3}, {0.1f, -0.2f, 0.3f, 0.4f, -0.5f, 0.6f}), true);
        const int w = g.leaf(Tensor<float>::from({3, 2}, {1.f, 2.f, 3.f, 4.f, 5.f, 6.f}), true);
        Tensor<float> tgt({2, 2});
        for (auto& v : tgt.v) v = float(rng.uniform());
        const int loss = g.mse(g.sigmoid(g.matmul(x, w)), tgt);
        g.backward(loss);
        auto out = g.grad(w).v;
        out.push_back(g.val(loss).v[0]);
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("shape mismatches carry the op name") {
    Graph<float> g;
    const int a = g.constant(Tensor<float>::zeros({2, 3}));
    const int b = g.constant(Tensor<float>::zeros({3, 3}));
    try {
        g.add(a, b);
        FAIL("expected a throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
    CHECK_THROWS_AS(g.matmul(a, g.constant(Tensor<float>::zeros({2, 2}))), std::invalid_argument);
}

TEST_CASE("checkpoint round trip with optimizer state and config blob") {
    Rng rng(13);
    ParamSet<float> theta;
    theta.add("conv.w", Tensor<float>::from({2, 2}, {1, 2, 3, 4}), 0);
    theta.add("bn.running_mean", Tensor<float>::from({2}, {0.5f, -0.5f}), 1, false);
    ParamSet<float> omega;
    omega.add("proj.w", Tensor<float>::from({2}, {7, 8}), 0);

    auto opt = AdamWState<float>::init(theta, 0.01);
    opt.step = 42;
    opt.m[0].v = {0.1f, 0.2f, 0.3f, 0.4f};

    Checkpoint ck;
    ck.sections.emplace_back("backbone", theta);
    ck.sections.emplace_back("extractor", omega);
    ck.opt = opt;
    ck.config_json = "{\"note\":\"roundtrip\"}";

    const auto path = std::filesystem::temp_directory_path() / "seldlab_ckpt_test.ckpt";
    save_checkpoint(path, ck);
    const auto r = load_checkpoint(path);
    CHECK(r.sections.size() == 2);
    CHECK(r.section("backbone").at("conv.w").t.v == theta.at("conv.w").t.v);
    CHECK(r.section("backbone").at("bn.running_mean").trainable == false);
    CHECK(r.section("backbone").at("bn.running_mean").layer == 1);
    CHECK(r.section("extractor").at("proj.w").t.v == omega.at("proj.w").t.v);
    REQUIRE(r.opt.has_value());
    CHECK(r.opt->step == 42);
    CHECK(r.opt->weight_decay == 0.01);
    CHECK(r.opt->m[0].v == opt.m[0].v);
    CHECK(r.config_json == ck.config_json);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
}
