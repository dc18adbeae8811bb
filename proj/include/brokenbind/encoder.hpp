// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "brokenbind/linalg.hpp"
#include "brokenbind/tape.hpp"

namespace bb::diffnet {

enum class Nonlinearity { tanh, relu };

Nonlinearity parse_nonlinearity(const std::string& name);
std::string to_string(Nonlinearity n);

struct EncoderSpec {
    std::string modality;
    /// input width, hidden widths..., embedding width.
    std::vector<std::size_t> layer_dims;
    Nonlinearity nonlinearity = Nonlinearity::tanh;
    /// Multiplies similarities involving this modality before division by τ.
    double temperature_scale = 1.0;

    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t embed_dim() const { return layer_dims.back(); }
    void validate() const;
};

struct Slice {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }

    friend bool operator==(const Slice&, const Slice&) = default;
};

/// Flat parameter vector θ with named slices and AdamW moment buffers.
class ParameterStore {
  public:
    std::size_t add_slice(std::string name, std::size_t rows, std::size_t cols);

    const std::vector<Slice>& slices() const noexcept { return slices_; }
    const Slice& slice(std::size_t i) const { return slices_.at(i); }
    std::optional<std::size_t> find(const std::string& name) const;

    Matrix slice_matrix(std::size_t i) const;

    std::size_t size() const noexcept { return theta.size(); }

    std::vector<double> theta;
    std::vector<double> moment1;
    std::vector<double> moment2;
    /// Optimizer steps taken per slice (slices frozen by a mask do not advance).
    std::vector<std::uint64_t> slice_steps;

    friend bool operator==(const ParameterStore&, const ParameterStore&) = default;

  private:
    std::vector<Slice> slices_;
};

/// Per-modality MLP encoders sharing one parameter store.
class EncoderStack {
  public:
    EncoderStack() = default;
    /// Registers slices and draws uniform ±sqrt(6/(fan_in+fan_out)) weights
    /// (zero biases) from `seed`.
    EncoderStack(std::vector<EncoderSpec> specs, std::uint64_t seed);

    const EncoderSpec& spec(const std::string& modality) const;
    const std::vector<EncoderSpec>& specs() const noexcept { return specs_; }
    bool has(const std::string& modality) const;

    ParameterStore& store() noexcept { return store_; }
    const ParameterStore& store() const noexcept { return store_; }

    /// Records the forward pass of one encoder on `tape`.
    Var encode(Tape& tape, const std::string& modality, const Matrix& raw) const;
    /// Forward pass without gradient bookkeeping.
    EmbeddingMatrix encode(const std::string& modality, const Matrix& raw) const;

    /// Per-parameter trainability: 1 for the final affine layer of every
    /// encoder, 0 elsewhere.
    std::vector<std::uint8_t> final_layer_mask() const;

  private:
    struct Layers {
        std::vector<std::size_t> weight;
        std::vector<std::size_t> bias;
    };
    std::vector<EncoderSpec> specs_;
    std::map<std::string, Layers> layers_;
    ParameterStore store_;
};

/// AdamW with bias correction; weight decay is applied to θ directly.
struct AdamW {
    double lr = 5e-4;
    double weight_decay = 0.2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One update. Slices whose mask entries are all zero are skipped entirely
/// (no decay, no moment update, no step advance). An empty mask trains all.
void optimizer_step(ParameterStore& store, std::span<const double> grads, const AdamW& opt,
                    std::span<const std::uint8_t> trainable = {});

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
};

/// Compares `analytic` against central differences of `objective` on
/// `num_samples` coordinates drawn from `seed` (all coordinates when
/// num_samples ≥ θ size). Error per coordinate is
/// |analytic − fd| / (|fd| + 1e-8).
GradCheckResult grad_check(const std::function<double(const ParameterStore&)>& objective,
                           std::span<const double> analytic, const ParameterStore& at,
                           double step, std::size_t num_samples, std::uint64_t seed);

} // namespace bb::diffnet
