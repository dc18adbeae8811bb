// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end: generate / train / eval / ablate / export.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bb::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

const char* version();

/// Value of BB_THREADS (default 1). Throws ConfigError unless a positive integer.
unsigned threads_from_env();

struct ManifestEntry {
    std::string path; // relative to the output directory
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct RunManifest {
    std::string command;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string started;
    std::string finished;
    unsigned threads = 1;
    std::vector<ManifestEntry> files;

    nlohmann::json to_json() const;
};

/// Digests every listed file under `dir` and writes dir/manifest.json.
void write_manifest(RunManifest m, const std::filesystem::path& dir, const std::vector<std::string>& files);

struct GenerateArgs {
    std::filesystem::path config;
    std::filesystem::path out;
    std::optional<std::uint64_t> seed;
};
struct TrainArgs {
    std::filesystem::path config;
    std::filesystem::path data;
    std::filesystem::path out;
    std::optional<std::uint64_t> seed;
    bool resume = false;
    std::optional<std::size_t> stop_after;
};
struct EvalArgs {
    std::filesystem::path config;
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::filesystem::path out;
    std::optional<std::string> flow;
    std::optional<std::uint64_t> seed;
    std::string arm = "full";
};
struct AblateArgs {
    std::filesystem::path config;
    std::filesystem::path out;
    std::vector<std::string> arms;
    std::vector<std::uint64_t> seeds;
};
struct ExportArgs {
    std::filesystem::path data;
    std::filesystem::path out;
};

void cmd_generate(const GenerateArgs& a);
void cmd_train(const TrainArgs& a);
void cmd_eval(const EvalArgs& a);
void cmd_ablate(const AblateArgs& a);
void cmd_export(const ExportArgs& a);

/// Parses argv, dispatches, and maps exceptions to exit codes.
int main(int argc, char** argv);

} // namespace bb::cli
