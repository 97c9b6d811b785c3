#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace seldlab::cli {

struct CliOverrides {
    std::optional<std::filesystem::path> out_dir;
    std::optional<uint64_t> seed;
    std::optional<std::string> study;             // synth-scenes
    std::optional<std::string> attenuation_input; // meta-train
};

// Dispatch one subcommand. Throws ConfigError/DataError/NumericError; the
// binary maps them to exit codes 2/3/4.
void run_command(const std::string& command, const std::filesystem::path& config_path,
                 const CliOverrides& ov);

}  // namespace seldlab::cli
