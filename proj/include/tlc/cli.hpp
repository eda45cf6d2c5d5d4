#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace tlc::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;
inline constexpr int kConfigError = 3;

struct RunManifest {
    std::string subcommand;
    std::vector<std::string> argv;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    nlohmann::json inputs = nlohmann::json::object();
    nlohmann::json outputs = nlohmann::json::object();
    double wall_seconds = 0.0;
    int exit_status = 0;

    nlohmann::json to_json() const;
    // Temp file in the same directory, then rename.
    void write_atomic(const std::filesystem::path& path) const;
};

// Entry point of the temporal-lulc executable; args exclude the program name.
int dispatch(const std::vector<std::string>& args);
int dispatch(int argc, char** argv);

std::string usage();

}  // namespace tlc::cli
