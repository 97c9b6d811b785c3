#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "seldlab/common.hpp"
#include "seldlab/runconfig.hpp"

int main(int argc, char** argv) {
    CLI::App app{"seldlab: spatial sound-event synthesis, meta-training and evaluation"};
    app.require_subcommand(1);

    std::string config_path;
    seldlab::cli::CliOverrides ov;
    std::string out_dir, study, attn_input;
    uint64_t seed = 0;
    bool seed_set = false;

    const char* names[] = {"synth-srir", "synth-scenes", "train-ei", "meta-train",
                           "adapt",      "evaluate",     "analyze"};
    const char* descs[] = {"simulate an SRIR bank per room specs",
                           "synthesize a labeled multi-environment FOA dataset",
                           "train the environment-independent model",
                           "meta-train (meta / meta_pp / env_adaptive)",
                           "fast adaptation to one environment",
                           "room-wise + macro metric report over query sets",
                           "similarity maps, attenuation reports, steps/shots sweeps"};
    for (int i = 0; i < 7; ++i) {
        auto* sub = app.add_subcommand(names[i], descs[i]);
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        auto* sopt = sub->add_option("--seed", seed, "seed (overrides config)");
        sopt->each([&](const std::string&) { seed_set = true; });
        if (std::string(names[i]) == "synth-scenes")
            sub->add_option("--study", study, "preset: reverb-ladder | noise-set");
        if (std::string(names[i]) == "meta-train")
            sub->add_option("--attenuation-input", attn_input, "none | gradients | representations");
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (!out_dir.empty()) ov.out_dir = out_dir;
        if (seed_set) ov.seed = seed;
        if (!study.empty()) ov.study = study;
        if (!attn_input.empty()) ov.attenuation_input = attn_input;
        const std::string cmd = app.get_subcommands().front()->get_name();
        seldlab::cli::run_command(cmd, config_path, ov);
        return 0;
    } catch (const seldlab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const seldlab::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const seldlab::NumericError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
