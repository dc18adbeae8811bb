// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <string>

#include "brokenbind/config.hpp"
#include "brokenbind/errors.hpp"

using namespace bb;
using namespace bb::config;

namespace {

const std::string kMinimal = R"(
data:
  modalities:
    - {name: a, raw_dim: 10}
    - {name: b, raw_dim: 12}
    - {name: c, raw_dim: 9}
  datasets:
    - {id: d1, observable: [a, b], hidden_target: c}
    - {id: d2, observable: [b, c], shift: 1.0}
)";

std::string error_of(const std::string& text) {
    try {
        parse_config(text, "test.yaml");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("defaults") {
    const auto c = parse_config(kMinimal);
    CHECK(c.epochs == 50);
    CHECK(c.pretrain_epochs == 25);
    CHECK(c.stage1_epochs == 5);
    CHECK(c.batch_size == 16);
    CHECK(c.lr == 5e-4);
    CHECK(c.weight_decay == 0.2);
    CHECK(c.tau == 0.07);
    CHECK(c.latent_dim == 8);
    CHECK(c.num_classes == 10);
    CHECK(c.embed_dim == 16);
    CHECK(c.hidden == std::vector<std::size_t>{64});
    CHECK(c.weights.fro == 1.0);
    CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
    CHECK(c.datasets[0].num_samples == 2000);
    CHECK(c.modalities[0].noise_std == 0.1);
    CHECK(c.pinv_grad == xtrap::PinvGrad::frozen);
}

TEST_CASE("reference config") {
    const auto c = load_config(std::string(BB_SOURCE_DIR) + "/configs/reference.yaml");
    CHECK(c.datasets.size() == 2);
    CHECK(c.modality("ta").raw_dim == 40);
    CHECK(c.dataset("d2").shift == 1.0);
    CHECK(c.flows == std::vector<std::string>{"te-vi-ta"});
    const auto specs = c.encoder_specs();
    REQUIRE(specs.size() == 3);
    CHECK(specs[0].layer_dims == std::vector<std::size_t>{32, 64, 16});
    CHECK_NOTHROW(load_config(std::string(BB_SOURCE_DIR) + "/configs/three_dataset.yaml"));
}

TEST_CASE("errors name the field and line") {
    const std::string missing = R"(
data:
  modalities:
    - {name: a, raw_dim: 10}
    - {name: b, raw_dim: 12}
  datasets:
    - {id: d1, observable: [a, b], hidden_target: c}
    - {id: d2, observable: [b, a]}
)";
    const auto e = error_of(missing);
    CHECK(e.find("test.yaml:7") != std::string::npos);
    CHECK(e.find("data.datasets[0].hidden_target") != std::string::npos);
    CHECK(e.find("modality 'c' has no entry in data.modalities") != std::string::npos);

    const auto unknown = error_of(kMinimal + "training: {epochz: 3}\n");
    CHECK(unknown.find("training.epochz") != std::string::npos);
    CHECK(unknown.find("unknown key") != std::string::npos);

    CHECK(error_of(kMinimal + "training: {lr: fast}\n").find("training.lr") != std::string::npos);
    CHECK(error_of(kMinimal + "training: {epochs: 10, pretrain_epochs: 20}\n").find("pretrain_epochs") !=
          std::string::npos);
    CHECK(error_of(kMinimal + "training: {batch_size: 15}\n").find("batch_size") != std::string::npos);
    CHECK(error_of(kMinimal + "training: {weights: {clip: -1}}\n").find("weights") != std::string::npos);
    CHECK(error_of("data: [1, 2\n").find("test.yaml:") != std::string::npos);
    CHECK_FALSE(error_of("").empty());
    CHECK_THROWS_AS(load_config("/nonexistent/config.yaml"), ConfigError);
}

TEST_CASE("config hash ignores key order and formatting") {
    const std::string a = config_hash(parse_config(kMinimal));
    CHECK(a.size() == 64);
    const std::string reordered_ok = R"(
data:
  datasets:
    - {observable: [a, b], id: d1, hidden_target: c}
    - {shift: 1.0, id: d2, observable: [b, c]}
  modalities:
    - {raw_dim: 10, name: a}
    - name: b
      raw_dim: 12
    - {name: c, raw_dim: 9}
)";
    CHECK(config_hash(parse_config(reordered_ok)) == a);
    CHECK(config_hash(parse_config(kMinimal + "training: {epochs: 51}\n")) != a);
    CHECK(config_hash(parse_config(kMinimal + "training: {epochs: 50}\n")) == a);
}

TEST_CASE("sha256 of a known string") {
    CHECK(sha256_hex("abc", 3) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("generated data follows the config") {
    auto c = parse_config(kMinimal + "training: {batch_size: 4}\n");
    for (auto& d : c.datasets) {
        d.num_samples = 30;
        d.num_test_samples = 5;
    }
    const auto data = generate_all(c, 3);
    REQUIRE(data.size() == 2);
    CHECK(data[0].observed("a").cols() == 10);
    CHECK(data[0].role("c") == synthgen::Role::hidden);
    CHECK_FALSE(data[1].has_modality("a"));
    CHECK(data[0].size() == 35);
    CHECK(generate_all(c, 3) == data);
    CHECK_FALSE(generate_all(c, 4) == data);
}
