// SPDX-License-Identifier: Apache-2.0
#pragma once

// Retrieval mAP along modality flows, fidelity of pseudo embeddings against
// revealed ground truth, PCA projections for plotting, and ablation runs.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brokenbind/config.hpp"
#include "brokenbind/encoder.hpp"
#include "brokenbind/synthgen.hpp"

namespace bb::eval {

/// "te-vi-ta": begin te, pivot vi, target ta. Arrows ("→", "->") are accepted
/// in place of '-'.
struct ModalityFlow {
    std::string begin;
    std::vector<std::string> pivots;
    std::string target;
    std::vector<std::string> datasets; // filled by resolve_flow

    std::string str() const;
};

/// Throws ConfigError naming the character position of the first bad token.
ModalityFlow parse_flow(const std::string& text);

/// Default flow for a config: a-b-c across the two (or three) datasets.
std::string default_flow(const config::ExperimentConfig& c);

struct RetrievalReport {
    std::string flow;
    double map_score = 0.0;
    std::size_t num_queries = 0; // scored queries
    std::vector<double> ap;      // one per scored query
    std::vector<std::size_t> query_index;
    std::size_t excluded = 0; // queries with no relevant gallery item
    std::string relevance = "class";
    std::vector<std::string> warnings;
};

/// Gallery ranked by similarity, ties by ascending gallery index.
/// AP = mean over relevant items of precision at that item's rank.
double average_precision(std::span<const double> similarities, std::span<const std::uint8_t> relevant);

/// relevance is queries × gallery, row-major, nonzero = relevant.
RetrievalReport retrieval_map(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                              const std::vector<std::uint8_t>& relevance);
RetrievalReport retrieval_map(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                              const std::vector<std::int64_t>& query_labels,
                              const std::vector<std::int64_t>& gallery_labels);

/// Finds the dataset that observes the flow's begin modality and holds the
/// target as generated ground truth (hidden preferred). Throws DataError if none.
const synthgen::MultiModalDataset& resolve_flow(ModalityFlow& flow,
                                                const std::vector<synthgen::MultiModalDataset>& data);

/// Queries: begin-modality test rows; gallery: target ground truth on the same
/// rows; relevance: same class.
RetrievalReport evaluate_flow(const diffnet::EncoderStack& enc, ModalityFlow flow,
                              const std::vector<synthgen::MultiModalDataset>& data);

struct FidelityReport {
    double mean = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    std::size_t n = 0;
};

FidelityReport summarize(std::vector<double> cosines);

/// Test rows of the datasets are walked in order in per-dataset chunks of
/// batch_size / (number of datasets); each chunk builds X-data pseudo
/// embeddings of the hidden target for the first dataset, scored by cosine
/// against the encoded ground truth.
FidelityReport pseudo_fidelity(const diffnet::EncoderStack& enc, const config::ExperimentConfig& c,
                               const std::vector<synthgen::MultiModalDataset>& data);

struct Projection {
    Matrix coords; // N × 2
    std::vector<std::int64_t> labels;
    std::vector<double> variance_ratio; // per component
    Matrix components;                  // 2 × d, orthonormal rows
    std::vector<std::string> warnings;
};

/// Top-2 principal components of the pooled, mean-centered rows. Each
/// component's largest-magnitude loading is made positive.
Projection project_2d(const std::vector<Matrix>& sets, const std::vector<std::vector<std::int64_t>>& labels);

void write_projection_csv(const Projection& p, const std::filesystem::path& path);
void write_queries_csv(const RetrievalReport& r, const std::filesystem::path& path);
nlohmann::json summary_json(const RetrievalReport& r, std::uint64_t seed, const std::string& arm);

extern const std::vector<std::string> kArms; // full, no_fro, no_cons, no_mox, clip_only

/// Weight projection for an ablation arm. Throws ConfigError for unknown arms.
config::ExperimentConfig apply_arm(const config::ExperimentConfig& c, const std::string& arm);

struct AblationRow {
    std::string arm;
    std::uint64_t seed = 0;
    RetrievalReport report;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    double mean(const std::string& arm) const;
    double stddev(const std::string& arm) const;
    std::vector<double> maps(const std::string& arm) const;
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

/// One run per (arm, seed); datasets come from generate_all(c, seed), so every
/// arm sees the same data for a given seed.
AblationTable run_ablation(const config::ExperimentConfig& c, const std::vector<std::string>& arms,
                           const std::vector<std::uint64_t>& seeds,
                           const std::function<void(const AblationRow&)>& progress = {});

} // namespace bb::eval
