#include "seldlab/runconfig.hpp"

#include <chrono>
#include <fstream>
#include <set>

#include <json.hpp>

#include "seldlab/common.hpp"
#include "seldlab/meta.hpp"
#include "seldlab/util.hpp"

namespace seldlab::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

json load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path.string());
    try {
        json j;
        f >> j;
        return j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <class T>
T get_or(const json& j, const std::string& key, T def) {
    if (!j.contains(key)) return def;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

template <class T>
T get_req(const json& j, const std::string& key) {
    if (!j.contains(key)) throw ConfigError("config is missing required key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
    }
}

model::BackboneConfig backbone_from_json(const json& j, int num_classes, double clip_s, int fs) {
    model::BackboneConfig cfg;
    cfg.num_classes = num_classes;
    cfg.T = 1 + int(size_t(clip_s * fs) / 320);
    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        check_keys(b, {"conv_channels", "gru_hidden", "pool_t", "pool_f", "embed_note"}, "backbone");
        if (b.contains("conv_channels")) {
            const auto v = b.at("conv_channels").get<std::vector<int>>();
            if (v.size() != 4) throw ConfigError("backbone.conv_channels must have 4 entries");
            for (int i = 0; i < 4; ++i) cfg.conv_channels[size_t(i)] = v[size_t(i)];
        }
        cfg.gru_hidden = get_or<int>(b, "gru_hidden", cfg.gru_hidden);
        if (b.contains("pool_t")) {
            const auto v = b.at("pool_t").get<std::vector<int>>();
            if (v.size() != 4) throw ConfigError("backbone.pool_t must have 4 entries");
            for (int i = 0; i < 4; ++i) cfg.pool_t[size_t(i)] = v[size_t(i)];
        }
        if (b.contains("pool_f")) {
            const auto v = b.at("pool_f").get<std::vector<int>>();
            if (v.size() != 4) throw ConfigError("backbone.pool_f must have 4 entries");
            for (int i = 0; i < 4; ++i) cfg.pool_f[size_t(i)] = v[size_t(i)];
        }
    }
    int t = cfg.T, f = cfg.F;
    for (int i = 0; i < 4; ++i) {
        if (t % cfg.pool_t[size_t(i)] != 0 || f % cfg.pool_f[size_t(i)] != 0)
            throw ConfigError("backbone pooling does not divide the input frames/bins");
        t /= cfg.pool_t[size_t(i)];
        f /= cfg.pool_f[size_t(i)];
    }
    return cfg;
}

json backbone_to_json(const model::BackboneConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"T", c.T},
                {"F", c.F},
                {"num_classes", c.num_classes},
                {"conv_channels", c.conv_channels},
                {"pool_t", c.pool_t},
                {"pool_f", c.pool_f},
                {"gru_hidden", c.gru_hidden}};
}

model::BackboneConfig backbone_from_echo(const json& j) {
    model::BackboneConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.T = j.at("T").get<int>();
    c.F = j.at("F").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    const auto cc = j.at("conv_channels").get<std::vector<int>>();
    const auto pt = j.at("pool_t").get<std::vector<int>>();
    const auto pf = j.at("pool_f").get<std::vector<int>>();
    for (int i = 0; i < 4; ++i) {
        c.conv_channels[size_t(i)] = cc[size_t(i)];
        c.pool_t[size_t(i)] = pt[size_t(i)];
        c.pool_f[size_t(i)] = pf[size_t(i)];
    }
    c.gru_hidden = j.at("gru_hidden").get<int>();
    return c;
}

void write_run_manifest(const fs::path& out_dir, const std::string& command, uint64_t seed,
                        const fs::path& config_path,
                        const std::vector<fs::path>& inputs,
                        const std::vector<std::string>& outputs) {
    json j;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config_path.string();
    j["config_sha256"] = util::sha256_file_hex(config_path);
    j["inputs"] = json::object();
    for (const auto& p : inputs)
        if (fs::exists(p) && fs::is_regular_file(p)) j["inputs"][p.string()] = util::sha256_file_hex(p);
    j["outputs"] = outputs;
    std::ofstream f(out_dir / "run_manifest.json");
    f << j.dump(2) << '\n';
}

fs::path resolve_out(const json& j, const CliOverrides& ov) {
    if (ov.out_dir) return *ov.out_dir;
    if (j.contains("out_dir")) return fs::path(j.at("out_dir").get<std::string>());
    throw ConfigError("no output directory: set out_dir in the config or pass --out");
}

uint64_t resolve_seed(const json& j, const CliOverrides& ov, uint64_t def = 1) {
    if (ov.seed) return *ov.seed;
    return get_or<uint64_t>(j, "seed", def);
}

srir::RoomSpec room_from_json(const json& r) {
    const auto dims = get_req<std::vector<double>>(r, "dims");
    if (dims.size() != 3) throw ConfigError("room dims must have 3 entries");
    const int max_order = get_or<int>(r, "max_order", 16);
    const int fs = get_or<int>(r, "fs", 24000);
    if (r.contains("rt60"))
        return srir::RoomSpec::with_target_rt60({dims[0], dims[1], dims[2]}, r.at("rt60").get<double>(),
                                                max_order, fs);
    const double alpha = get_or<double>(r, "absorption", 0.3);
    return srir::RoomSpec::with_uniform_absorption({dims[0], dims[1], dims[2]}, alpha, max_order, fs);
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

void cmd_synth_srir(const json& cfg, const fs::path& config_path, const CliOverrides& ov) {
    check_keys(cfg, {"out_dir", "seed", "rooms"}, "synth-srir");
    const fs::path out = resolve_out(cfg, ov);
    const uint64_t seed = resolve_seed(cfg, ov);
    fs::create_directories(out);

    std::vector<srir::SrirBankEntry> bank;
    const auto rooms = get_req<json>(cfg, "rooms");
    if (!rooms.is_array() || rooms.empty()) throw ConfigError("synth-srir: rooms must be a non-empty array");
    size_t room_idx = 0;
    for (const auto& r : rooms) {
        check_keys(r, {"room_id", "dims", "absorption", "rt60", "max_order", "fs", "sources", "n_sources"},
                   "synth-srir.rooms[]");
        const std::string room_id = get_req<std::string>(r, "room_id");
        const auto room = room_from_json(r);
        Rng rng(seed, 1000 * (room_idx + 1));
        srir::Vec3 center{room.dims[0] * rng.uniform(0.4, 0.6), room.dims[1] * rng.uniform(0.4, 0.6),
                          room.dims[2] * rng.uniform(0.35, 0.55)};
        const auto array = srir::MicArraySpec::tetrahedral(center);

        std::vector<srir::Vec3> srcs;
        if (r.contains("sources")) {
            for (const auto& s : r.at("sources")) {
                const auto v = s.get<std::vector<double>>();
                if (v.size() != 3) throw ConfigError("synth-srir: source must have 3 coordinates");
                srcs.push_back({v[0], v[1], v[2]});
            }
        } else {
            const int n = get_or<int>(r, "n_sources", 6);
            for (int i = 0; i < n; ++i)
                srcs.push_back({rng.uniform(0.4, room.dims[0] - 0.4), rng.uniform(0.4, room.dims[1] - 0.4),
                                rng.uniform(0.4, room.dims[2] - 0.4)});
        }
        std::vector<srir::Srir> irs(srcs.size());
        util::parallel_for(srcs.size(), [&](size_t i) { irs[i] = srir::simulate_srir(room, array, srcs[i]); });
        for (size_t i = 0; i < srcs.size(); ++i) bank.push_back({room_id, srcs[i], std::move(irs[i])});
        ++room_idx;
    }
    srir::export_srir_bank(out, bank);
    write_run_manifest(out, "synth-srir", seed, config_path, {}, {"srir_index.csv"});
}

scene::GenConfig scenes_config_from_json(const json& cfg, uint64_t seed, const std::string& study) {
    if (study == "reverb-ladder")
        return scene::reverb_ladder_config(get_or<int>(cfg, "clips_per_env", 16), seed);
    if (study == "noise-set")
        return scene::noise_set_config(get_or<int>(cfg, "n_rooms", 6),
                                       get_or<int>(cfg, "clips_per_env", 16), seed);
    if (!study.empty()) throw ConfigError("unknown study preset: " + study);

    scene::GenConfig gc;
    gc.seed = seed;
    gc.clip_s = get_or<double>(cfg, "clip_s", 5.0);
    gc.num_classes = get_or<int>(cfg, "num_classes", 5);
    gc.max_polyphony = get_or<int>(cfg, "max_polyphony", 3);
    gc.min_events = get_or<int>(cfg, "min_events", 1);
    gc.max_events = get_or<int>(cfg, "max_events", 3);
    gc.fs = get_or<int>(cfg, "fs", 24000);
    if (!cfg.contains("envs")) throw ConfigError("synth-scenes: needs 'envs' or --study");
    for (const auto& e : cfg.at("envs")) {
        check_keys(e, {"env_id", "dims", "absorption", "rt60", "max_order", "fs", "n_srirs",
                       "noise_type", "snr_lo", "snr_hi", "n_clips"},
                   "synth-scenes.envs[]");
        scene::EnvGenSpec env;
        env.env_id = get_req<std::string>(e, "env_id");
        env.room = room_from_json(e);
        env.room.fs = gc.fs;
        env.n_srirs = get_or<int>(e, "n_srirs", 6);
        env.noise_type = get_or<int>(e, "noise_type", -1);
        env.snr_lo_db = get_or<double>(e, "snr_lo", 10.0);
        env.snr_hi_db = get_or<double>(e, "snr_hi", 15.0);
        env.n_clips = get_or<int>(e, "n_clips", 16);
        gc.envs.push_back(std::move(env));
    }
    return gc;
}

void cmd_synth_scenes(const json& cfg, const fs::path& config_path, const CliOverrides& ov) {
    check_keys(cfg,
               {"out_dir", "seed", "study", "clips_per_env", "n_rooms", "envs", "clip_s", "num_classes",
                "max_polyphony", "min_events", "max_events", "fs"},
               "synth-scenes");
    const fs::path out = resolve_out(cfg, ov);
    const uint64_t seed = resolve_seed(cfg, ov);
    const std::string study = ov.study ? *ov.study : get_or<std::string>(cfg, "study", "");
    const auto gc = scenes_config_from_json(cfg, seed, study);
    scene::build_dataset(gc, out);
    write_run_manifest(out, "synth-scenes", seed, config_path, {}, {"manifest.json"});
}

meta::DataStore open_store(const json& cfg, const fs::path& manifest_path,
                           const model::BackboneConfig& bb) {
    auto manifest = scene::DatasetManifest::load(manifest_path);
    const fs::path cache =
        cfg.contains("feature_cache")
            ? fs::path(cfg.at("feature_cache").get<std::string>())
            : manifest_path.parent_path() / "feature_cache";
    return meta::DataStore(std::move(manifest), bb, cache);
}

void cmd_train_ei(const json& cfg, const fs::path& config_path, const CliOverrides& ov) {
    check_keys(cfg,
               {"out_dir", "seed", "dataset", "epochs", "lr", "batch_size", "weight_decay",
                "backbone", "feature_cache"},
               "train-ei");
    const fs::path out = resolve_out(cfg, ov);
    const uint64_t seed = resolve_seed(cfg, ov);
    fs::create_directories(out);
    const fs::path manifest_path = get_req<std::string>(cfg, "dataset");
    auto manifest = scene::DatasetManifest::load(manifest_path);
    const auto bb = backbone_from_json(cfg, manifest.num_classes, manifest.clip_s, manifest.fs);
    auto store = open_store(cfg, manifest_path, bb);

    meta::SupervisedConfig scfg;
    scfg.epochs = get_or<int>(cfg, "epochs", 20);
    scfg.lr = get_or<double>(cfg, "lr", 0.001);
    scfg.batch_size = get_or<int>(cfg, "batch_size", 16);
    scfg.weight_decay = get_or<double>(cfg, "weight_decay", 0.0);
    scfg.seed = seed;

    meta::TrainLog log;
    const auto t0 = std::chrono::steady_clock::now();
    auto theta = meta::train_supervised(store, bb, scfg, &log);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    nn::Checkpoint ck;
    ck.sections.emplace_back("backbone", std::move(theta));
    ck.config_json = json{{"backbone", backbone_to_json(bb)}, {"kind", "ei"}}.dump();
    nn::save_checkpoint(out / "ei_model.ckpt", ck);

    std::ofstream runlog(out / "run_log.csv");
    runlog << "epoch,train_loss,wall_s\n";
    for (size_t e = 0; e < log.epoch_loss.size(); ++e)
        runlog << e << ',' << log.epoch_loss[e] << ',' << (e + 1 == log.epoch_loss.size() ? wall : 0.0)
               << '\n';
    write_run_manifest(out, "train-ei", seed, config_path, {manifest_path}, {"ei_model.ckpt", "run_log.csv"});
}

meta::MetaConfig meta_config_from_json(const json& cfg, uint64_t seed) {
    meta::MetaConfig mc;
    mc.K = get_or<int>(cfg, "K", 30);
    mc.sample_batch = get_or<int>(cfg, "sample_batch", 128);
    mc.inner_steps = get_or<int>(cfg, "inner_steps", 5);
    mc.inner_lr = get_or<double>(cfg, "inner_lr", 0.001);
    mc.outer_lr = get_or<double>(cfg, "outer_lr", 0.0003);
    mc.epochs = get_or<int>(cfg, "epochs", 10);
    mc.seed = seed;
    mc.method = meta::method_from_string(get_or<std::string>(cfg, "method", "meta_pp"));
    mc.attenuation_input =
        model::attn_input_from_string(get_or<std::string>(cfg, "attenuation_input", "representations"));
    mc.attenuation_bypass = get_or<bool>(cfg, "attenuation_bypass", false);
    mc.skip_extractor = get_or<bool>(cfg, "skip_extractor", false);
    mc.weight_decay = get_or<double>(cfg, "weight_decay", 0.0);
    mc.embed_dim = get_or<int>(cfg, "embed_dim", 2048);
    mc.attn_hidden = get_or<int>(cfg, "attn_hidden", 1024);
    mc.attn_output_bias = float(get_or<double>(cfg, "attn_output_bias", 2.0));
    mc.pooled_stat_momentum = get_or<double>(cfg, "pooled_stat_momentum", 0.05);
    if (mc.K >= mc.sample_batch) throw ConfigError("meta config: K must be < sample_batch");
    if (mc.inner_steps < 1) throw ConfigError("meta config: inner_steps must be >= 1");
    return mc;
}

void cmd_meta_train(const json& cfg, const fs::path& config_path, const CliOverrides& ov) {
    check_keys(cfg,
               {"out_dir", "seed", "dataset", "init_checkpoint", "method", "attenuation_input",
                "attenuation_bypass", "skip_extractor", "K", "sample_batch", "inner_steps", "inner_lr",
                "outer_lr", "epochs", "weight_decay", "embed_dim", "attn_hidden",
                "attn_output_bias", "pooled_stat_momentum", "backbone", "feature_cache"},
               "meta-train");
    const fs::path out = resolve_out(cfg, ov);
    const uint64_t seed = resolve_seed(cfg, ov);
    fs::create_directories(out);
    const fs::path manifest_path = get_req<std::string>(cfg, "dataset");
    auto manifest = scene::DatasetManifest::load(manifest_path);

    json cfg2 = cfg;
    if (ov.attenuation_input) cfg2["attenuation_input"] = *ov.attenuation_input;
    auto mc = meta_config_from_json(cfg2, seed);

    std::optional<nn::ParamSet<float>> theta0;
    model::BackboneConfig bb;
    std::vector<fs::path> inputs{manifest_path};
    if (cfg.contains("init_checkpoint")) {
        const fs::path ckpath = cfg.at("init_checkpoint").get<std::string>();
        const auto ck = nn::load_checkpoint(ckpath);
        theta0 = ck.section("backbone");
        bb = backbone_from_echo(json::parse(ck.config_json).at("backbone"));
        inputs.push_back(ckpath);
    } else {
        if (mc.method == meta::Method::meta_pp || mc.method == meta::Method::env_adaptive)
            throw ConfigError("meta-train: " + meta::to_string(mc.method) + " requires init_checkpoint");
        bb = backbone_from_json(cfg, manifest.num_classes, manifest.clip_s, manifest.fs);
    }
    auto store = open_store(cfg, manifest_path, bb);

    auto state = meta::init_meta(mc, bb, std::move(theta0));
    Rng data_rng(seed, 1);

    std::ofstream runlog(out / "run_log.csv");
    runlog << "epoch,mean_inner_start_loss,mean_query_loss,wall_s\n";
    for (int epoch = 0; epoch < mc.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto episodes = meta::sample_episodes(store, mc, data_rng);
        const auto stats = meta::meta_outer_step(state, episodes);
        double s0 = 0, q = 0;
        for (const auto& s : stats) {
            s0 += s.inner_start_loss;
            q += s.query_loss;
        }
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        runlog << epoch << ',' << s0 / double(stats.size()) << ',' << q / double(stats.size()) << ','
               << wall << '\n';
    }

    nn::Checkpoint ck;
    ck.sections.emplace_back("backbone", state.theta);
    ck.sections.emplace_back("extractor", state.omega);
    ck.sections.emplace_back("attenuation", state.phi);
    json echo{{"backbone", backbone_to_json(bb)},
              {"kind", "meta"},
              {"method", meta::to_string(mc.method)},
              {"attenuation_input", model::to_string(mc.attenuation_input)},
              {"attenuation_bypass", mc.attenuation_bypass},
              {"skip_extractor", mc.skip_extractor},
              {"K", mc.K},
              {"inner_steps", mc.inner_steps},
              {"inner_lr", mc.inner_lr},
              {"embed_dim", mc.embed_dim},
              {"attn_hidden", mc.attn_hidden}};
    ck.config_json = echo.dump();
    nn::save_checkpoint(out / "meta_model.ckpt", ck);
    write_run_manifest(out, "meta-train", seed, config_path, inputs, {"meta_model.ckpt", "run_log.csv"});
}

meta::MetaState state_from_checkpoint(const fs::path& ckpath, const json& overrides,
                                      model::BackboneConfig* bb_out) {
    const auto ck = nn::load_checkpoint(ckpath);
    const json echo = json::parse(ck.config_json);
    const auto bb = backbone_from_echo(echo.at("backbone"));
    if (bb_out) *bb_out = bb;

    meta::MetaConfig mc;
    const bool is_meta = echo.at("kind").get<std::string>() == "meta";
    if (is_meta) {
        mc.method = meta::method_from_string(echo.at("method").get<std::string>());
        mc.attenuation_input =
            model::attn_input_from_string(echo.at("attenuation_input").get<std::string>());
        mc.attenuation_bypass = echo.at("attenuation_bypass").get<bool>();
        mc.skip_extractor = echo.at("skip_extractor").get<bool>();
        mc.K = echo.at("K").get<int>();
        mc.inner_steps = echo.at("inner_steps").get<int>();
        mc.inner_lr = echo.at("inner_lr").get<double>();
        mc.embed_dim = echo.at("embed_dim").get<int>();
        mc.attn_hidden = echo.at("attn_hidden").get<int>();
    } else {
        mc.method = meta::Method::seld;  // plain supervised checkpoint: fine-tuning semantics
    }
    mc.K = get_or<int>(overrides, "K", mc.K);
    mc.inner_steps = get_or<int>(overrides, "inner_steps", mc.inner_steps);
    mc.inner_lr = get_or<double>(overrides, "inner_lr", mc.inner_lr);
    mc.decode_threshold = get_or<double>(overrides, "decode_threshold", 0.5);
    mc.seed = get_or<uint64_t>(overrides, "seed", 1);

    auto state = meta::init_meta(mc, bb, ck.section("backbone"));
    if (ck.has_section("extractor")) state.omega = ck.section("extractor");
    if (ck.has_section("attenuation")) state.phi = ck.section("attenuation");
    return state;
}

void cmd_adapt(const json& cfg, const fs::path& config_path, const CliOverrides& ov) {
    check_keys(cfg,
               {"out_dir", "seed", "dataset", "checkpoint", "env_id", "K", "inner_steps", "inner_lr",
                "decode_threshold", "feature_cache"},
               "adapt");
    const fs::path out = resolve_out(cfg, ov);
    const uint64_t seed = resolve_seed(cfg, ov);
    fs::create_directories(out);
    const fs::path manifest_path = get_req<std::string>(cfg, "dataset");
    const fs::path ckpath = get_req<std::string>(cfg, "checkpoint");
    const std::string env_id = get_req<std::string>(cfg, "env_id");

    model::BackboneConfig bb;
    auto state = state_from_checkpoint(ckpath, cfg, &bb);
    auto store = open_store(cfg, manifest_path, bb);

    const auto res = meta::meta_test_adapt(state, store, env_id, true);

    nn::Checkpoint ck;
    ck.sections.emplace_back("backbone", res.adapted);
    ck.config_json = json{{"backbone", backbone_to_json(bb)}, {"kind", "ei"}, {"adapted_env", env_id}}.dump();
    nn::save_checkpoint(out / "adapted_model.ckpt", ck);

    std::ofstream rep(out / "adapt_report.csv");
    rep << "step,query_loss\n";
    rep << "0," << res.zero_shot_query_loss << '\n';
    for (size_t i = 0; i < res.query_losses.size(); ++i)
        rep << (i + 1) << ',' << res.query_losses[i] << '\n';
    rep << "# zero_shot_e_seld," << res.zero_shot_scores.e_seld << '\n';
    rep << "# adapted_e_seld," << res.scores.e_seld << '\n';
    write_run_manifest(out, "adapt", seed, config_path, {manifest_path, ckpath},
                       {"adapted_model.ckpt", "adapt_report.csv"});
}

void write_scores_csv(std::ofstream& f, const std::string& room, const evalkit::MetricScores& s) {
    f << room << ",-1," << s.er20 << ',' << s.f20 << ',' << s.le_cd << ',' << s.lr_cd << ','
      << s.e_seld << '\n';
    for (const auto& row : s.per_class)
        f << room << ',' << int(row[0]) << ',' << s.er20 << ',' << row[1] << ',' << row[2] << ','
          << row[3] << ',' << evalkit::e_seld(s.er20, row[1], row[2], row[3]) << '\n';
}

evalkit::FrameEvents events_from_prediction_csvs(const meta::DataStore& store,
                                                 const std::vector<int>& clips,
                                                 const fs::path& pred_dir, double clip_s) {
    evalkit::FrameEvents out;
    const int frames_per_clip = int(std::ceil(clip_s / 0.1));
    const int stride = ((frames_per_clip + 9) / 10) * 10 + 10;
    for (size_t i = 0; i < clips.size(); ++i) {
        const auto rel = store.manifest().clips[size_t(clips[i])].csv;
        const auto rows = scene::read_labels_csv(pred_dir / rel);
        for (const auto& r : rows) {
            double x, y, z;
            r.doa.to_unit(x, y, z);
            out[int(i) * stride + r.frame_100ms].push_back({r.class_idx, {x, y, z}});
        }
    }
    return out;
}

evalkit::FrameEvents events_from_reference(const meta::DataStore& store, const std::vector<int>& clips,
                                           double clip_s) {
    evalkit::FrameEvents out;
    const int frames_per_clip = int(std::ceil(clip_s / 0.1));
    const int stride = ((frames_per_clip + 9) / 10) * 10 + 10;
    for (size_t i = 0; i < clips.size(); ++i) {
        for (const auto& l : store.labels(clips[size_t(i)])) {
            double x, y, z;
            l.doa.to_unit(x, y, z);
            out[int(i) * stride + l.frame_100ms].push_back({l.class_idx, {x, y, z}});
        }
    }
    return out;
}

void cmd_evaluate(const json& cfg, const fs::path& config_path, const CliOverrides& ov) {
    check_keys(cfg,
               {"out_dir", "seed", "dataset", "checkpoint", "predictions_dir", "K", "decode_threshold",
                "feature_cache", "query_only"},
               "evaluate");
    const fs::path out = resolve_out(cfg, ov);
    const uint64_t seed = resolve_seed(cfg, ov);
    fs::create_directories(out);
    const fs::path manifest_path = get_req<std::string>(cfg, "dataset");

    const bool from_files = cfg.contains("predictions_dir");
    model::BackboneConfig bb;
    std::optional<meta::MetaState> state;
    std::vector<fs::path> inputs{manifest_path};
    if (!from_files) {
        const fs::path ckpath = get_req<std::string>(cfg, "checkpoint");
        state = state_from_checkpoint(ckpath, cfg, &bb);
        inputs.push_back(ckpath);
    } else {
        auto manifest = scene::DatasetManifest::load(manifest_path);
        bb = backbone_from_json(cfg, manifest.num_classes, manifest.clip_s, manifest.fs);
    }
    auto store = open_store(cfg, manifest_path, bb);
    const bool query_only = get_or<bool>(cfg, "query_only", false);
    const int K = get_or<int>(cfg, "K", state ? state->cfg.K : 0);
    const double thresh = get_or<double>(cfg, "decode_threshold", 0.5);

    std::ofstream f(out / "scores.csv");
    f << "room,class,er20,f20,le_cd_deg,lr_cd,e_seld\n";
    std::vector<evalkit::MetricScores> rooms;
    for (const auto& env : store.manifest().env_ids) {
        auto clips = store.manifest().clips_of_env(env);
        if (query_only) {
            if (int(clips.size()) <= K) throw DataError("evaluate: env " + env + " has too few clips");
            clips.erase(clips.begin(), clips.begin() + K);
        }
        evalkit::MetricScores sc;
        if (from_files) {
            const fs::path pred_dir = cfg.at("predictions_dir").get<std::string>();
            const auto pred = events_from_prediction_csvs(store, clips, pred_dir, store.manifest().clip_s);
            const auto ref = events_from_reference(store, clips, store.manifest().clip_s);
            sc = evalkit::match_and_score(pred, ref, store.manifest().num_classes);
        } else {
            const auto ev = meta::evaluate_on_clips(state->theta, store, clips, bb, thresh);
            sc = evalkit::match_and_score(ev.pred, ev.ref, store.manifest().num_classes);
        }
        write_scores_csv(f, env, sc);
        rooms.push_back(sc);
    }
    const auto macro = evalkit::macro_average(rooms);
    write_scores_csv(f, "MACRO", macro);
    std::printf("evaluate: macro ER %.3f F %.3f LE %.1f LR %.3f E_SELD %.3f over %zu rooms\n",
                macro.er20, macro.f20, macro.le_cd, macro.lr_cd, macro.e_seld, rooms.size());
    write_run_manifest(out, "evaluate", seed, config_path, inputs, {"scores.csv"});
}

void cmd_analyze(const json& cfg, const fs::path& config_path, const CliOverrides& ov) {
    check_keys(cfg,
               {"out_dir", "seed", "dataset", "checkpoint", "K", "analyses", "steps", "shots",
                "decode_threshold", "feature_cache", "inner_lr"},
               "analyze");
    const fs::path out = resolve_out(cfg, ov);
    const uint64_t seed = resolve_seed(cfg, ov);
    fs::create_directories(out);
    const fs::path manifest_path = get_req<std::string>(cfg, "dataset");
    const fs::path ckpath = get_req<std::string>(cfg, "checkpoint");

    model::BackboneConfig bb;
    auto state = state_from_checkpoint(ckpath, cfg, &bb);
    auto store = open_store(cfg, manifest_path, bb);
    const auto analyses = get_or<std::vector<std::string>>(cfg, "analyses",
                                                           {"similarity", "attenuation"});
    std::vector<std::string> outputs;

    for (const auto& an : analyses) {
        if (an == "similarity") {
            std::vector<std::vector<float>> sup, qry;
            for (const auto& env : store.manifest().env_ids) {
                const auto clips = store.manifest().clips_of_env(env);
                if (int(clips.size()) <= state.cfg.K)
                    throw DataError("analyze: env " + env + " too small for K");
                std::vector<int> s(clips.begin(), clips.begin() + state.cfg.K);
                std::vector<int> q(clips.begin() + state.cfg.K, clips.end());
                sup.push_back(meta::environment_representation(state, store.stack_features(s)));
                qry.push_back(meta::environment_representation(state, store.stack_features(q)));
            }
            const auto sim = evalkit::similarity_map(sup, qry);
            std::ofstream f(out / "similarity.csv");
            f << "query_env";
            for (const auto& e : store.manifest().env_ids) f << ',' << e;
            f << '\n';
            for (size_t r = 0; r < sim.size(); ++r) {
                f << store.manifest().env_ids[r];
                for (double v : sim[r]) f << ',' << v;
                f << '\n';
            }
            outputs.push_back("similarity.csv");
        } else if (an == "attenuation") {
            if (state.cfg.method != meta::Method::env_adaptive)
                throw DataError("analyze: attenuation report needs an env_adaptive checkpoint");
            std::vector<std::vector<float>> lambdas;
            for (const auto& env : store.manifest().env_ids) {
                const auto clips = store.manifest().clips_of_env(env);
                std::vector<int> s(clips.begin(),
                                   clips.begin() + std::min<size_t>(clips.size(), size_t(state.cfg.K)));
                const auto res = meta::meta_test_adapt(state, store, env, false);
                lambdas.push_back(res.lambda);
            }
            const auto rep = evalkit::make_attenuation_report(store.manifest().env_ids, lambdas);
            std::ofstream f(out / "attenuation.csv");
            f << "env";
            for (size_t l = 0; l < rep.layer_std.size(); ++l) f << ",layer" << l;
            f << '\n';
            for (size_t e = 0; e < rep.env_ids.size(); ++e) {
                f << rep.env_ids[e];
                for (float v : rep.lambda[e]) f << ',' << v;
                f << '\n';
            }
            f << "std";
            for (double v : rep.layer_std) f << ',' << v;
            f << "\ninsensitive";
            for (bool b : rep.environment_insensitive) f << ',' << (b ? 1 : 0);
            f << '\n';
            outputs.push_back("attenuation.csv");
        } else if (an == "steps-sweep" || an == "shots-sweep") {
            const bool steps_mode = an == "steps-sweep";
            const auto values = steps_mode ? get_or<std::vector<int>>(cfg, "steps", {0, 1, 5, 20})
                                           : get_or<std::vector<int>>(cfg, "shots", {2, 5, 10});
            const std::string fname = steps_mode ? "steps_sweep.csv" : "shots_sweep.csv";
            std::ofstream f(out / fname);
            f << (steps_mode ? "steps" : "shots") << ",env,query_loss,e_seld\n";
            for (int v : values) {
                meta::MetaState st2 = state;
                if (steps_mode)
                    st2.cfg.inner_steps = v;
                else
                    st2.cfg.K = v;
                for (const auto& env : store.manifest().env_ids) {
                    const auto res = meta::meta_test_adapt(st2, store, env, true);
                    const double loss =
                        res.query_losses.empty() ? res.zero_shot_query_loss : res.query_losses.back();
                    f << v << ',' << env << ',' << loss << ',' << res.scores.e_seld << '\n';
                }
            }
            outputs.push_back(fname);
        } else {
            throw ConfigError("analyze: unknown analysis '" + an + "'");
        }
    }
    write_run_manifest(out, "analyze", seed, config_path, {manifest_path, ckpath}, outputs);
}

}  // namespace

void run_command(const std::string& command, const fs::path& config_path, const CliOverrides& ov) {
    const json cfg = load_config(config_path);
    if (command == "synth-srir")
        cmd_synth_srir(cfg, config_path, ov);
    else if (command == "synth-scenes")
        cmd_synth_scenes(cfg, config_path, ov);
    else if (command == "train-ei")
        cmd_train_ei(cfg, config_path, ov);
    else if (command == "meta-train")
        cmd_meta_train(cfg, config_path, ov);
    else if (command == "adapt")
        cmd_adapt(cfg, config_path, ov);
    else if (command == "evaluate")
        cmd_evaluate(cfg, config_path, ov);
    else if (command == "analyze")
        cmd_analyze(cfg, config_path, ov);
    else
        throw ConfigError("unknown command: " + command);
}

}  // namespace seldlab::cli
