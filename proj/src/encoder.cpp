// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "brokenbind/errors.hpp"

namespace bb::diffnet {

Nonlinearity parse_nonlinearity(const std::string& name) {
    if (name == "tanh") return Nonlinearity::tanh;
    if (name == "relu") return Nonlinearity::relu;
    throw ConfigError("unknown nonlinearity '" + name + "' (expected tanh or relu)");
}

std::string to_string(Nonlinearity n) { return n == Nonlinearity::tanh ? "tanh" : "relu"; }

void EncoderSpec::validate() const {
    if (layer_dims.size() < 2) {
        throw ConfigError("encoder '" + modality + "': needs at least one affine layer");
    }
    if (std::any_of(layer_dims.begin(), layer_dims.end(), [](std::size_t d) { return d == 0; })) {
        throw ConfigError("encoder '" + modality + "': zero layer width");
    }
    if (!(temperature_scale > 0.0)) {
        throw ConfigError("encoder '" + modality + "': temperature_scale must be > 0");
    }
}

std::size_t ParameterStore::add_slice(std::string name, std::size_t rows, std::size_t cols) {
    if (find(name)) throw ContractError("ParameterStore: duplicate slice '" + name + "'");
    Slice s{std::move(name), theta.size(), rows, cols};
    theta.resize(theta.size() + s.size(), 0.0);
    moment1.resize(theta.size(), 0.0);
    moment2.resize(theta.size(), 0.0);
    slices_.push_back(std::move(s));
    slice_steps.push_back(0);
    return slices_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < slices_.size(); ++i)
        if (slices_[i].name == name) return i;
    return std::nullopt;
}

Matrix ParameterStore::slice_matrix(std::size_t i) const {
    const Slice& s = slices_.at(i);
    Matrix m(s.rows, s.cols);
    std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), m.data().begin());
    return m;
}

EncoderStack::EncoderStack(std::vector<EncoderSpec> specs, std::uint64_t seed)
    : specs_(std::move(specs)) {
    if (specs_.empty()) throw ConfigError("EncoderStack: no encoders");
    const std::size_t d = specs_.front().embed_dim();
    for (const auto& s : specs_) {
        s.validate();
        if (s.embed_dim() != d) {
            throw ConfigError("encoder '" + s.modality + "': embed dim " +
                              std::to_string(s.embed_dim()) + " differs from " + std::to_string(d));
        }
        if (layers_.count(s.modality)) {
            throw ConfigError("duplicate encoder for modality '" + s.modality + "'");
        }
        Layers l;
        for (std::size_t k = 0; k + 1 < s.layer_dims.size(); ++k) {
            const std::string base = s.modality + ".l" + std::to_string(k);
            l.weight.push_back(store_.add_slice(base + ".weight", s.layer_dims[k], s.layer_dims[k + 1]));
            l.bias.push_back(store_.add_slice(base + ".bias", 1, s.layer_dims[k + 1]));
        }
        layers_.emplace(s.modality, std::move(l));
    }

    std::mt19937_64 rng(seed);
    for (const auto& s : specs_) {
        const Layers& l = layers_.at(s.modality);
        for (std::size_t k = 0; k < l.weight.size(); ++k) {
            const Slice& w = store_.slice(l.weight[k]);
            const double limit = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
            std::uniform_real_distribution<double> u(-limit, limit);
            for (std::size_t i = 0; i < w.size(); ++i) store_.theta[w.offset + i] = u(rng);
        }
    }
}

const EncoderSpec& EncoderStack::spec(const std::string& modality) const {
    for (const auto& s : specs_)
        if (s.modality == modality) return s;
    throw ConfigError("no encoder for modality '" + modality + "'");
}

bool EncoderStack::has(const std::string& modality) const { return layers_.count(modality) > 0; }

Var EncoderStack::encode(Tape& tape, const std::string& modality, const Matrix& raw) const {
    const EncoderSpec& s = spec(modality);
    if (raw.cols() != s.input_dim()) {
        throw ShapeError("encode '" + modality + "': input has " + std::to_string(raw.cols()) +
                         " columns, encoder expects " + std::to_string(s.input_dim()));
    }
    const Layers& l = layers_.at(modality);
    Var h = tape.constant(raw, "input:" + modality);
    for (std::size_t k = 0; k < l.weight.size(); ++k) {
        h = matmul(h, tape.parameter(store_, l.weight[k]));
        h = add_row_bias(h, tape.parameter(store_, l.bias[k]));
        if (k + 1 < l.weight.size()) {
            h = s.nonlinearity == Nonlinearity::tanh ? diffnet::tanh(h) : diffnet::relu(h);
        }
    }
    return normalize_rows(h);
}

EmbeddingMatrix EncoderStack::encode(const std::string& modality, const Matrix& raw) const {
    Tape tape;
    Var out = encode(tape, modality, raw);
    return EmbeddingMatrix(out.value());
}

std::vector<std::uint8_t> EncoderStack::final_layer_mask() const {
    std::vector<std::uint8_t> mask(store_.size(), 0);
    for (const auto& [name, l] : layers_) {
        for (std::size_t idx : {l.weight.back(), l.bias.back()}) {
            const Slice& s = store_.slice(idx);
            std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), 1);
        }
    }
    return mask;
}

void optimizer_step(ParameterStore& store, std::span<const double> grads, const AdamW& opt,
                    std::span<const std::uint8_t> trainable) {
    if (grads.size() != store.size()) {
        throw ShapeError("optimizer_step: gradient length " + std::to_string(grads.size()) +
                         " != parameter count " + std::to_string(store.size()));
    }
    if (!trainable.empty() && trainable.size() != store.size()) {
        throw ShapeError("optimizer_step: mask length mismatch");
    }
    for (std::size_t si = 0; si < store.slices().size(); ++si) {
        const Slice& s = store.slice(si);
        if (!trainable.empty()) {
            const auto first = trainable.begin() + static_cast<std::ptrdiff_t>(s.offset);
            if (std::all_of(first, first + static_cast<std::ptrdiff_t>(s.size()),
                            [](std::uint8_t m) { return m == 0; })) {
                continue;
            }
        }
        const std::uint64_t t = ++store.slice_steps[si];
        const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
        for (std::size_t k = s.offset; k < s.offset + s.size(); ++k) {
            if (!trainable.empty() && trainable[k] == 0) continue;
            const double g = grads[k];
            store.theta[k] *= 1.0 - opt.lr * opt.weight_decay;
            store.moment1[k] = opt.beta1 * store.moment1[k] + (1.0 - opt.beta1) * g;
            store.moment2[k] = opt.beta2 * store.moment2[k] + (1.0 - opt.beta2) * g * g;
            const double mhat = store.moment1[k] / bc1;
            const double vhat = store.moment2[k] / bc2;
            store.theta[k] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

GradCheckResult grad_check(const std::function<double(const ParameterStore&)>& objective,
                           std::span<const double> analytic, const ParameterStore& at,
                           double step, std::size_t num_samples, std::uint64_t seed) {
    if (analytic.size() != at.size()) throw ShapeError("grad_check: gradient length mismatch");
    std::vector<std::size_t> coords(at.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (num_samples < coords.size()) {
        std::mt19937_64 rng(seed);
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(num_samples);
        std::sort(coords.begin(), coords.end());
    }
    GradCheckResult r;
    r.coordinates = coords.size();
    ParameterStore probe = at;
    for (std::size_t k : coords) {
        const double orig = probe.theta[k];
        probe.theta[k] = orig + step;
        const double fp = objective(probe);
        probe.theta[k] = orig - step;
        const double fm = objective(probe);
        probe.theta[k] = orig;
        const double fd = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[k] - fd) / (std::abs(fd) + 1e-8);
        if (err > r.max_rel_error || !std::isfinite(err)) {
            r.max_rel_error = err;
            r.worst_index = k;
        }
    }
    return r;
}

} // namespace bb::diffnet
