// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "brokenbind/cli.hpp"
#include "brokenbind/config.hpp"
#include "brokenbind/errors.hpp"
#include "brokenbind/synthgen.hpp"

namespace fs = std::filesystem;
using namespace bb;

namespace {

fs::path root() {
    static const fs::path dir = [] {
        const auto d = fs::temp_directory_path() / "bb_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void replace(std::string& text, const std::string& from, const std::string& to) {
    const auto pos = text.find(from);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, from.size(), to);
}

// Reference config shrunk so a full run takes well under a second.
fs::path small_config() {
    std::string text = read(fs::path(BB_SOURCE_DIR) / "configs/reference.yaml");
    for (int i = 0; i < 2; ++i) replace(text, "num_samples: 2000, num_test_samples: 500", "num_samples: 160, num_test_samples: 48");
    replace(text, "epochs: 50", "epochs: 4");
    replace(text, "pretrain_epochs: 25", "pretrain_epochs: 2");
    replace(text, "stage1_epochs: 5", "stage1_epochs: 1");
    const auto p = root() / "small.yaml";
    std::ofstream(p) << text;
    return p;
}

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "bbind");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli::main(static_cast<int>(argv.size()), argv.data());
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(read(dir / "manifest.json")); }

fs::path generated() {
    static const fs::path dir = [] {
        const auto d = root() / "data";
        REQUIRE(run({"generate", "--config", small_config().string(), "--out", d.string()}) == cli::kExitOk);
        return d;
    }();
    return dir;
}

} // namespace

TEST_CASE("usage errors exit with the config code") {
    CHECK(run({}) == cli::kExitConfig);
    CHECK(run({"frobnicate"}) == cli::kExitConfig);
    CHECK(run({"generate", "--out", (root() / "x").string()}) == cli::kExitConfig);
    CHECK(run({"generate", "--config", (root() / "missing.yaml").string(), "--out", (root() / "x").string()}) ==
          cli::kExitConfig);
}

TEST_CASE("a dataset naming an undeclared modality is a config error") {
    std::string text = read(small_config());
    replace(text, "observable: [vi, ta]", "observable: [vi, au]");
    const auto p = root() / "bad_modality.yaml";
    std::ofstream(p) << text;
    CHECK(run({"generate", "--config", p.string(), "--out", (root() / "bad").string()}) == cli::kExitConfig);
}

TEST_CASE("generate writes datasets and a manifest with their digests") {
    const auto dir = generated();
    CHECK(fs::exists(dir / "d1.bbdata"));
    CHECK(fs::exists(dir / "d2.bbdata"));
    const auto m = manifest(dir);
    CHECK(m["command"] == "generate");
    CHECK(m["seed"] == 0);
    CHECK(m["config_hash"] == config::config_hash(config::load_config(small_config())));
    REQUIRE(m["files"].size() == 2);
    for (const auto& f : m["files"]) {
        const auto p = dir / f["path"].get<std::string>();
        CHECK(f["sha256"] == config::sha256_file(p));
        CHECK(f["bytes"] == fs::file_size(p));
    }

    const auto again = root() / "data_again";
    REQUIRE(run({"generate", "--config", small_config().string(), "--out", again.string()}) == cli::kExitOk);
    CHECK(manifest(again)["files"] == m["files"]);

    const auto other = root() / "data_seed7";
    REQUIRE(run({"generate", "--config", small_config().string(), "--out", other.string(), "--seed", "7"}) ==
            cli::kExitOk);
    CHECK(manifest(other)["seed"] == 7);
    CHECK(manifest(other)["files"][0]["sha256"] != m["files"][0]["sha256"]);
}

TEST_CASE("train, interrupt and resume reproduce the uninterrupted run") {
    const auto cfg = small_config().string();
    const auto full = root() / "train_full";
    REQUIRE(run({"train", "--config", cfg, "--data", generated().string(), "--out", full.string()}) == cli::kExitOk);
    CHECK(fs::exists(full / "checkpoint.bbckpt"));
    std::ifstream log(full / "train_log.jsonl");
    std::size_t lines = 0;
    for (std::string l; std::getline(log, l);) {
        const auto j = nlohmann::json::parse(l);
        CHECK(j["epoch"] == lines);
        CHECK(j["loss"].contains("total"));
        ++lines;
    }
    CHECK(lines == 4);
    CHECK(manifest(full)["command"] == "train");

    const auto part = root() / "train_resumed";
    REQUIRE(run({"train", "--config", cfg, "--data", generated().string(), "--out", part.string(), "--stop-after",
                 "2"}) == cli::kExitOk);
    REQUIRE(run({"train", "--config", cfg, "--data", generated().string(), "--out", part.string(), "--resume"}) ==
            cli::kExitOk);
    CHECK(config::sha256_file(part / "checkpoint.bbckpt") == config::sha256_file(full / "checkpoint.bbckpt"));
    CHECK(read(part / "train_log.jsonl") == read(full / "train_log.jsonl"));

    // A checkpoint written under one seed cannot be resumed under another.
    CHECK(run({"train", "--config", cfg, "--data", generated().string(), "--out", part.string(), "--resume", "--seed",
               "9"}) == cli::kExitData);
}

TEST_CASE("train reports missing data with the data code") {
    CHECK(run({"train", "--config", small_config().string(), "--data", (root() / "nowhere").string(), "--out",
               (root() / "t").string()}) == cli::kExitData);
}

TEST_CASE("a zero raw row surfaces as a numerical failure") {
    const auto dir = root() / "data_zero";
    fs::create_directories(dir);
    const auto d1 = synthgen::load_dataset(generated() / "d1.bbdata");
    std::map<std::string, Matrix> raw;
    for (const auto& m : d1.modalities()) raw[m] = synthgen::reveal_ground_truth(d1, m);
    for (auto& row : raw) {
        for (double& v : row.second.data()) v = 0.0;
    }
    synthgen::save_dataset({d1.spec(), d1.labels(), d1.splits(), d1.latents(), d1.modalities(), raw}, dir / "d1.bbdata");
    fs::copy_file(generated() / "d2.bbdata", dir / "d2.bbdata", fs::copy_options::overwrite_existing);
    CHECK(run({"train", "--config", small_config().string(), "--data", dir.string(), "--out",
               (root() / "t_zero").string()}) == cli::kExitNumerical);
}

TEST_CASE("eval writes reports, projections and fidelity") {
    const auto cfg = small_config().string();
    const auto trained = root() / "train_eval";
    REQUIRE(run({"train", "--config", cfg, "--data", generated().string(), "--out", trained.string()}) ==
            cli::kExitOk);
    const auto out = root() / "eval";
    REQUIRE(run({"eval", "--config", cfg, "--checkpoint", (trained / "checkpoint.bbckpt").string(), "--data",
                 generated().string(), "--out", out.string(), "--seed", "3", "--arm", "full"}) == cli::kExitOk);
    const auto s = nlohmann::json::parse(read(out / "eval_te-vi-ta_summary.json"));
    CHECK(s["flow"] == "te-vi-ta");
    CHECK(s["seed"] == 3);
    CHECK(s["n_queries"] == 48);
    CHECK(s["map"].get<double>() > 0.0);
    CHECK(fs::exists(out / "eval_te-vi-ta_queries.csv"));
    CHECK(fs::exists(out / "projection_te-vi-ta.csv"));
    const auto f = nlohmann::json::parse(read(out / "fidelity.json"));
    CHECK(f["n"] == 48);
    CHECK(manifest(out)["files"].size() == 4);

    CHECK(run({"eval", "--config", cfg, "--checkpoint", (trained / "checkpoint.bbckpt").string(), "--data",
               generated().string(), "--out", out.string(), "--flow", "te--ta"}) == cli::kExitConfig);
    CHECK(run({"eval", "--config", cfg, "--checkpoint", (trained / "checkpoint.bbckpt").string(), "--data",
               generated().string(), "--out", out.string(), "--flow", "au-vi-ta"}) == cli::kExitData);
    CHECK(run({"eval", "--config", cfg, "--checkpoint", (root() / "none.bbckpt").string(), "--data",
               generated().string(), "--out", out.string()}) == cli::kExitData);
}

TEST_CASE("export writes one CSV per dataset") {
    const auto out = root() / "export";
    REQUIRE(run({"export", "--data", generated().string(), "--out", out.string()}) == cli::kExitOk);
    CHECK(fs::exists(out / "d1.csv"));
    CHECK(fs::exists(out / "d2.csv"));
    CHECK(run({"export", "--data", (root() / "eval").string(), "--out", out.string()}) == cli::kExitData);
}

TEST_CASE("ablate writes the table and validates arms and seeds") {
    const auto cfg = small_config().string();
    const auto out = root() / "ablate";
    REQUIRE(run({"ablate", "--config", cfg, "--out", out.string(), "--arms", "full,clip_only", "--seeds", "0"}) ==
            cli::kExitOk);
    const auto j = nlohmann::json::parse(read(out / "ablation.json"));
    CHECK(j["runs"].size() == 2);
    CHECK(fs::exists(out / "ablation.csv"));
    CHECK(run({"ablate", "--config", cfg, "--out", out.string(), "--arms", "nope", "--seeds", "0"}) ==
          cli::kExitConfig);
    CHECK(run({"ablate", "--config", cfg, "--out", out.string(), "--seeds", "x"}) == cli::kExitConfig);
}

TEST_CASE("BB_THREADS") {
    ::unsetenv("BB_THREADS");
    CHECK(cli::threads_from_env() == 1);
    ::setenv("BB_THREADS", "3", 1);
    CHECK(cli::threads_from_env() == 3);
    ::setenv("BB_THREADS", "0", 1);
    CHECK_THROWS_AS(cli::threads_from_env(), ConfigError);
    ::setenv("BB_THREADS", "2x", 1);
    CHECK_THROWS_AS(cli::threads_from_env(), ConfigError);
    CHECK(run({"generate", "--config", small_config().string(), "--out", (root() / "thr").string()}) ==
          cli::kExitConfig);
    ::unsetenv("BB_THREADS");
}
