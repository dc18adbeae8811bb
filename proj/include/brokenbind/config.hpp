// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration: one YAML file fully determines a run. The key
// grammar and the table of defaults live in docs/config.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brokenbind/encoder.hpp"
#include "brokenbind/losses.hpp"
#include "brokenbind/synthgen.hpp"
#include "brokenbind/xtrap.hpp"

namespace bb::config {

struct ModalityConfig {
    std::string name;
    std::size_t raw_dim = 0;
    bool squash = true;
    double noise_std = 0.1;
    double temperature_scale = 1.0;
};

struct DatasetConfig {
    std::string id;
    std::vector<std::string> observable;
    std::optional<std::string> hidden_target;
    double shift = 0.0; // multiples of within_class_std
    double extra_noise_std = 0.0;
    std::size_t num_samples = 2000;
    std::size_t num_test_samples = 500;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

    std::size_t latent_dim = 8;
    std::size_t num_classes = 10;
    double center_scale = 1.0;
    double within_class_std = 1.0;
    std::vector<ModalityConfig> modalities;
    std::vector<DatasetConfig> datasets;

    std::vector<std::size_t> hidden{64};
    std::size_t embed_dim = 16;
    diffnet::Nonlinearity nonlinearity = diffnet::Nonlinearity::tanh;

    std::size_t epochs = 50;
    std::size_t pretrain_epochs = 25;
    std::size_t stage1_epochs = 5;
    std::size_t batch_size = 16;
    double lr = 5e-4;
    double weight_decay = 0.2;
    double tau = 0.07;
    xtrap::PinvGrad pinv_grad = xtrap::PinvGrad::frozen;
    losses::LossWeights weights;
    std::size_t eval_every = 0; // 0: evaluate only after the final epoch

    std::vector<std::string> flows;

    /// Throws ConfigError on cross-field violations.
    void validate() const;

    const ModalityConfig& modality(const std::string& name) const;
    const DatasetConfig& dataset(const std::string& id) const;
    std::vector<diffnet::EncoderSpec> encoder_specs() const;
    double temperature_scale(const std::string& modality) const;
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical document with every field spelled out (object keys sorted).
nlohmann::json to_json(const ExperimentConfig& c);
/// Lowercase hex SHA-256 of the canonical document's compact dump.
std::string config_hash(const ExperimentConfig& c);
std::string sha256_hex(const void* data, std::size_t n);
std::string sha256_file(const std::filesystem::path& path);

/// World model and dataset specs for generation under `seed`.
synthgen::LatentSpec latent_spec(const ExperimentConfig& c, std::uint64_t seed);
std::vector<synthgen::ModalityViewSpec> view_specs(const ExperimentConfig& c, std::uint64_t seed);
synthgen::DatasetSpec dataset_spec(const ExperimentConfig& c, std::size_t index, std::uint64_t seed);

/// Every configured dataset, generated from independent streams of `seed`.
std::vector<synthgen::MultiModalDataset> generate_all(const ExperimentConfig& c, std::uint64_t seed);

} // namespace bb::config
