// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training loop: batch sampling, encoding, per-batch pseudo-inverses held
// fixed, loss assembly, backprop and AdamW, under the consistency
// pre-training schedule and the final-layer-first trainability schedule.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brokenbind/config.hpp"
#include "brokenbind/encoder.hpp"
#include "brokenbind/losses.hpp"
#include "brokenbind/synthgen.hpp"

namespace bb::trainer {

struct PhaseSettings {
    losses::LossWeights weights; // effective weights for this epoch
    bool mox_enabled = false;
    bool final_layer_only = false;
    std::string stage; // "pretrain", "mox", "chain-a", "chain-b"
};

PhaseSettings phase_schedule(std::size_t epoch, const config::ExperimentConfig& c);

/// Stage layout for three datasets: pre-training, then the first half of the
/// remaining epochs binds the intermediate modality ("chain-a"), the rest
/// binds the final target through the chained pseudo embeddings ("chain-b").
PhaseSettings three_dataset_phase(std::size_t epoch, const config::ExperimentConfig& c);

/// Roles of the modalities in a two-dataset run: d1 observes (a, b), d2
/// observes (b, c).
struct TwoDatasetRoles {
    std::string a, b, c;
};
/// Three datasets: d1 observes a, d2 observes (a, b), d3 observes (b, c).
struct ThreeDatasetRoles {
    std::string a, b, c;
};

/// Throws DataError when the datasets do not follow the expected pattern.
TwoDatasetRoles two_dataset_roles(const synthgen::MultiModalDataset& d1,
                                  const synthgen::MultiModalDataset& d2);
ThreeDatasetRoles three_dataset_roles(const synthgen::MultiModalDataset& d1,
                                      const synthgen::MultiModalDataset& d2,
                                      const synthgen::MultiModalDataset& d3);

struct EpochRecord {
    std::size_t epoch = 0;
    std::uint64_t step = 0; // optimizer steps completed after this epoch
    std::string stage;
    losses::LossReport mean; // batch average of each component
    losses::LossWeights weights;
    std::map<std::string, double> metrics;
};

nlohmann::json to_json(const EpochRecord& r);

/// Called with the frozen encoders after each epoch; returns metrics to log.
using EpochHook = std::function<std::map<std::string, double>(std::size_t epoch, const diffnet::EncoderStack&)>;

struct TrainOptions {
    /// Written at the end of every epoch when set.
    std::optional<std::filesystem::path> checkpoint;
    /// Resume from this checkpoint (must come from the same config and seed).
    std::optional<std::filesystem::path> resume_from;
    /// Stop after this many completed epochs (for interrupted-run tests).
    std::optional<std::size_t> stop_after;
    EpochHook on_epoch;
    /// Lines go here as each epoch completes (JSON, one per line).
    std::function<void(const std::string&)> log_sink;
};

struct TrainResult {
    diffnet::EncoderStack encoders;
    std::vector<EpochRecord> log;
    std::size_t epochs_completed = 0;
};

/// Fresh encoders for `seed` (before any training).
diffnet::EncoderStack initial_encoders(const config::ExperimentConfig& c, std::uint64_t seed);

TrainResult train(const config::ExperimentConfig& c, std::uint64_t seed,
                  const synthgen::MultiModalDataset& d1, const synthgen::MultiModalDataset& d2,
                  const TrainOptions& opt = {});

TrainResult run_three_dataset(const config::ExperimentConfig& c, std::uint64_t seed,
                              const synthgen::MultiModalDataset& d1,
                              const synthgen::MultiModalDataset& d2,
                              const synthgen::MultiModalDataset& d3, const TrainOptions& opt = {});

/// Dispatches on the number of datasets.
TrainResult train_any(const config::ExperimentConfig& c, std::uint64_t seed,
                      const std::vector<synthgen::MultiModalDataset>& data, const TrainOptions& opt = {});

/// Objective of one two-dataset batch on `tape`.
losses::ObjectiveVars batch_objective(diffnet::Tape& tape, const diffnet::EncoderStack& enc,
                                      const config::ExperimentConfig& c, const TwoDatasetRoles& roles,
                                      const synthgen::MultiModalBatch& batch, const PhaseSettings& phase);

/// Loss and gradient of one two-dataset batch at the stack's current θ.
struct BatchGradient {
    losses::LossReport report;
    std::vector<double> grad;
};
BatchGradient batch_gradient(const diffnet::EncoderStack& enc, const config::ExperimentConfig& c,
                             const TwoDatasetRoles& roles, const synthgen::MultiModalBatch& batch,
                             const PhaseSettings& phase);

/// Loads a trained checkpoint's parameters into fresh encoders built from `c`.
diffnet::EncoderStack load_encoders(const config::ExperimentConfig& c, const std::filesystem::path& checkpoint);

} // namespace bb::trainer
