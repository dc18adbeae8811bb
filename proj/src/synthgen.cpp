// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "brokenbind/binary_io.hpp"
#include "brokenbind/errors.hpp"
#include "brokenbind/linalg.hpp"

namespace bb::synthgen {
namespace {

std::mt19937_64 seeded(std::initializer_list<std::uint64_t> parts) {
    std::vector<std::uint32_t> words;
    for (std::uint64_t p : parts) {
        words.push_back(static_cast<std::uint32_t>(p));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

} // namespace

void LatentSpec::validate() const {
    if (latent_dim == 0 || num_classes == 0) throw ConfigError("latent: dims and classes must be > 0");
    if (!(within_class_std > 0.0)) throw ConfigError("latent: within_class_std must be > 0");
    if (class_centers.rows() != num_classes || class_centers.cols() != latent_dim) {
        throw ConfigError("latent: class_centers must be " + std::to_string(num_classes) + "x" +
                          std::to_string(latent_dim));
    }
    for (std::size_t i = 0; i < num_classes; ++i) {
        for (std::size_t j = i + 1; j < num_classes; ++j) {
            bool same = true;
            for (std::size_t k = 0; k < latent_dim && same; ++k) {
                same = class_centers(i, k) == class_centers(j, k);
            }
            if (same) throw ConfigError("latent: class centers " + std::to_string(i) + " and " +
                                        std::to_string(j) + " coincide");
        }
    }
}

LatentSpec make_latent_spec(std::size_t latent_dim, std::size_t num_classes, double center_scale,
                            double within_class_std, std::uint64_t seed) {
    auto rng = seeded({seed, 0x6c61u});
    std::normal_distribution<double> n(0.0, center_scale);
    LatentSpec s;
    s.latent_dim = latent_dim;
    s.num_classes = num_classes;
    s.within_class_std = within_class_std;
    s.class_centers = Matrix(num_classes, latent_dim);
    for (double& v : s.class_centers.data()) v = n(rng);
    s.validate();
    return s;
}

void ModalityViewSpec::validate() const {
    if (modality.empty()) throw ConfigError("view: empty modality name");
    if (view_map.rows() == 0 || view_map.cols() == 0) throw ConfigError("view '" + modality + "': empty map");
    if (offset.size() != raw_dim()) throw ConfigError("view '" + modality + "': offset length mismatch");
    if (noise_std < 0.0) throw ConfigError("view '" + modality + "': noise_std must be >= 0");
    if (raw_dim() < latent_dim()) {
        throw ConfigError("view '" + modality + "': raw_dim below latent_dim cannot have full column rank");
    }
    const auto f = linalg::svd(view_map);
    const auto& s = f.singular_values;
    if (s.empty() || s.back() <= 1e-8 * s.front()) {
        throw ConfigError("view '" + modality + "': map is rank deficient");
    }
}

ModalityViewSpec make_view_spec(std::string modality, std::size_t raw_dim, std::size_t latent_dim,
                                bool squash, double noise_std, std::uint64_t seed) {
    auto rng = seeded({seed, 0x7669u});
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(latent_dim)));
    std::normal_distribution<double> o(0.0, 0.1);
    ModalityViewSpec v;
    v.modality = std::move(modality);
    v.view_map = Matrix(raw_dim, latent_dim);
    for (double& x : v.view_map.data()) x = n(rng);
    v.offset.resize(raw_dim);
    for (double& x : v.offset) x = o(rng);
    v.squash = squash;
    v.noise_std = noise_std;
    v.validate();
    return v;
}

Matrix apply_view(const ModalityViewSpec& view, const Matrix& latents) {
    if (latents.cols() != view.latent_dim()) {
        throw ShapeError("apply_view: latents " + latents.shape_string() + " vs map " +
                         view.view_map.shape_string());
    }
    Matrix out = matmul_nt(latents, view.view_map);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
            double v = out(i, j) + view.offset[j];
            out(i, j) = view.squash ? std::tanh(v) : v;
        }
    }
    return out;
}

void DatasetSpec::validate() const {
    if (id.empty()) throw ConfigError("dataset: empty id");
    if (num_samples == 0) throw ConfigError("dataset '" + id + "': num_samples must be > 0");
    if (observable.empty()) throw ConfigError("dataset '" + id + "': no observable modalities");
    std::set<std::string> seen(observable.begin(), observable.end());
    if (seen.size() != observable.size()) throw ConfigError("dataset '" + id + "': duplicate modality");
    if (hidden_target && seen.count(*hidden_target)) {
        throw ConfigError("dataset '" + id + "': hidden target '" + *hidden_target + "' is also observable");
    }
    if (extra_noise_std < 0.0) throw ConfigError("dataset '" + id + "': extra_noise_std must be >= 0");
    for (double v : latent_shift) {
        if (!std::isfinite(v)) throw ConfigError("dataset '" + id + "': non-finite latent shift");
    }
}

std::vector<double> shift_vector(std::size_t latent_dim, double magnitude, std::uint64_t seed) {
    std::vector<double> v(latent_dim, 0.0);
    if (magnitude == 0.0 || latent_dim == 0) return v;
    auto rng = seeded({seed, 0x7368u});
    std::normal_distribution<double> n(0.0, 1.0);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : v) {
            x = n(rng);
            norm += x * x;
        }
    } while (norm < 1e-12);
    norm = std::sqrt(norm);
    for (double& x : v) x *= magnitude / norm;
    return v;
}

MultiModalDataset::MultiModalDataset(DatasetSpec spec, std::vector<std::int64_t> labels,
                                     std::vector<Split> splits, Matrix latents,
                                     std::vector<std::string> modality_order,
                                     std::map<std::string, Matrix> raw)
    : spec_(std::move(spec)), labels_(std::move(labels)), splits_(std::move(splits)),
      latents_(std::move(latents)), order_(std::move(modality_order)), raw_(std::move(raw)) {
    const std::size_t n = labels_.size();
    if (splits_.size() != n || latents_.rows() != n) throw DataError("dataset '" + spec_.id + "': row counts disagree");
    for (const auto& m : order_) {
        auto it = raw_.find(m);
        if (it == raw_.end() || it->second.rows() != n) {
            throw DataError("dataset '" + spec_.id + "': modality '" + m + "' rows disagree");
        }
    }
}

bool MultiModalDataset::is_observable(const std::string& m) const {
    return std::find(spec_.observable.begin(), spec_.observable.end(), m) != spec_.observable.end();
}

Role MultiModalDataset::role(const std::string& m) const {
    if (!has_modality(m)) throw DataError("dataset '" + spec_.id + "' has no modality '" + m + "'");
    return is_observable(m) ? Role::observable : Role::hidden;
}

std::vector<std::size_t> MultiModalDataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits_.size(); ++i) {
        if (splits_[i] == s) out.push_back(i);
    }
    return out;
}

const Matrix& MultiModalDataset::observed(const std::string& m) const {
    if (!is_observable(m)) {
        throw DataError("dataset '" + spec_.id + "': modality '" + m + "' is not observable");
    }
    return raw_.at(m);
}

Matrix reveal_ground_truth(const MultiModalDataset& d, const std::string& modality) {
    auto it = d.raw_.find(modality);
    if (it == d.raw_.end()) {
        throw DataError("dataset '" + d.id() + "': modality '" + modality + "' was never generated");
    }
    return it->second;
}

Matrix reveal_ground_truth(const MultiModalDataset& d, const std::string& modality, Split split) {
    const Matrix all = reveal_ground_truth(d, modality);
    const auto idx = d.indices(split);
    return gather_rows(all, idx);
}

MultiModalDataset generate_dataset(const LatentSpec& latent, const std::vector<ModalityViewSpec>& views,
                                   const DatasetSpec& spec, std::uint64_t seed) {
    latent.validate();
    spec.validate();
    const std::size_t ld = latent.latent_dim;
    if (!spec.latent_shift.empty() && spec.latent_shift.size() != ld) {
        throw ConfigError("dataset '" + spec.id + "': latent_shift has " +
                          std::to_string(spec.latent_shift.size()) + " entries, expected " + std::to_string(ld));
    }

    std::vector<std::string> order = spec.observable;
    if (spec.hidden_target) order.push_back(*spec.hidden_target);
    std::vector<const ModalityViewSpec*> vs;
    for (const auto& m : order) {
        auto it = std::find_if(views.begin(), views.end(), [&](const auto& v) { return v.modality == m; });
        if (it == views.end()) {
            throw ConfigError("dataset '" + spec.id + "': no view spec for modality '" + m + "'");
        }
        it->validate();
        if (it->latent_dim() != ld) throw ConfigError("view '" + m + "': latent_dim mismatch");
        vs.push_back(&*it);
    }

    const std::size_t n = spec.num_samples + spec.num_test_samples;
    auto rng = seeded({seed, 0x6473u});
    std::uniform_int_distribution<std::size_t> cls(0, latent.num_classes - 1);
    std::normal_distribution<double> g(0.0, 1.0);

    std::vector<std::int64_t> labels(n);
    std::vector<Split> splits(n);
    Matrix z(n, ld);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = cls(rng);
        labels[i] = static_cast<std::int64_t>(k);
        splits[i] = i < spec.num_samples ? Split::train : Split::test;
        for (std::size_t j = 0; j < ld; ++j) {
            const double shift = spec.latent_shift.empty() ? 0.0 : spec.latent_shift[j];
            z(i, j) = latent.class_centers(k, j) + shift + latent.within_class_std * g(rng);
        }
    }

    std::map<std::string, Matrix> raw;
    for (const auto* v : vs) {
        Matrix x = apply_view(*v, z);
        const double sd = std::sqrt(v->noise_std * v->noise_std + spec.extra_noise_std * spec.extra_noise_std);
        if (sd > 0.0) {
            for (double& e : x.data()) e += sd * g(rng);
        }
        raw.emplace(v->modality, std::move(x));
    }
    DatasetSpec stored = spec;
    stored.latent_shift.resize(ld, 0.0);
    return MultiModalDataset(std::move(stored), std::move(labels), std::move(splits), std::move(z), std::move(order),
                             std::move(raw));
}

std::vector<MultiModalBatch> make_batches(const std::vector<const MultiModalDataset*>& datasets,
                                          std::size_t batch_size, std::uint64_t seed,
                                          std::uint64_t epoch) {
    if (datasets.empty()) throw ContractError("make_batches: no datasets");
    if (batch_size == 0 || batch_size % datasets.size() != 0) {
        throw ContractError("make_batches: batch_size " + std::to_string(batch_size) +
                            " is not divisible by " + std::to_string(datasets.size()) + " datasets");
    }
    const std::size_t per = batch_size / datasets.size();

    std::vector<std::vector<std::size_t>> orders;
    std::size_t num_batches = SIZE_MAX;
    for (std::size_t k = 0; k < datasets.size(); ++k) {
        auto idx = datasets[k]->indices(Split::train);
        auto rng = seeded({seed, epoch, k, 0x6274u});
        std::shuffle(idx.begin(), idx.end(), rng);
        num_batches = std::min(num_batches, idx.size() / per);
        orders.push_back(std::move(idx));
    }

    std::vector<MultiModalBatch> out(num_batches);
    for (std::size_t b = 0; b < num_batches; ++b) {
        for (std::size_t k = 0; k < datasets.size(); ++k) {
            const auto& d = *datasets[k];
            DatasetBatch part;
            part.dataset = d.id();
            part.indices.assign(orders[k].begin() + static_cast<std::ptrdiff_t>(b * per),
                                orders[k].begin() + static_cast<std::ptrdiff_t>((b + 1) * per));
            for (std::size_t i : part.indices) part.labels.push_back(d.labels()[i]);
            for (const auto& m : d.spec().observable) part.raw.emplace(m, gather_rows(d.observed(m), part.indices));
            out[b].parts.push_back(std::move(part));
        }
    }
    return out;
}

std::vector<std::uint8_t> encode_dataset(const MultiModalDataset& d) {
    io::Writer w;
    w.bytes(kDatasetMagic, 8);
    const auto& s = d.spec();
    w.str32(s.id);
    w.u64(s.num_samples);
    w.u64(s.num_test_samples);
    const std::size_t ld = d.latents().cols();
    w.u64(ld);
    for (std::size_t j = 0; j < ld; ++j) w.f64(s.latent_shift.empty() ? 0.0 : s.latent_shift[j]);
    w.f64(s.extra_noise_std);
    w.u32(static_cast<std::uint32_t>(d.modalities().size()));
    for (const auto& m : d.modalities()) {
        w.str32(m);
        w.u64(reveal_ground_truth(d, m).cols());
        w.u8(static_cast<std::uint8_t>(d.role(m)));
    }
    std::vector<const Matrix*> mats;
    std::vector<Matrix> keep;
    keep.reserve(d.modalities().size());
    for (const auto& m : d.modalities()) keep.push_back(reveal_ground_truth(d, m));
    for (const auto& m : keep) mats.push_back(&m);
    for (std::size_t i = 0; i < d.size(); ++i) {
        w.u8(static_cast<std::uint8_t>(d.splits()[i]));
        w.i64(d.labels()[i]);
        for (double v : d.latents().row(i)) w.f64(v);
        for (const Matrix* m : mats) {
            for (double v : m->row(i)) w.f64(v);
        }
    }
    return w.buffer();
}

void save_dataset(const MultiModalDataset& d, const std::filesystem::path& path) {
    io::Writer w;
    const auto bytes = encode_dataset(d);
    w.bytes(bytes.data(), bytes.size());
    w.save(path);
}

MultiModalDataset load_dataset(const std::filesystem::path& path) {
    auto r = io::Reader::load(path);
    r.expect_magic(kDatasetMagic, "dataset");
    DatasetSpec s;
    s.id = r.str32();
    s.num_samples = r.u64();
    s.num_test_samples = r.u64();
    const std::uint64_t ld = r.u64();
    r.require(ld * 8, "latent shift");
    s.latent_shift.resize(ld);
    for (double& v : s.latent_shift) v = r.f64();
    s.extra_noise_std = r.f64();
    const std::uint32_t nm = r.u32();
    std::vector<std::string> order;
    std::vector<std::size_t> dims;
    for (std::uint32_t k = 0; k < nm; ++k) {
        order.push_back(r.str32());
        dims.push_back(r.u64());
        const std::uint8_t role = r.u8();
        if (role == static_cast<std::uint8_t>(Role::observable)) {
            s.observable.push_back(order.back());
        } else if (role == static_cast<std::uint8_t>(Role::hidden)) {
            if (s.hidden_target) throw DataError(path.string() + ": more than one hidden modality");
            s.hidden_target = order.back();
        } else {
            throw DataError(path.string() + ": bad modality role " + std::to_string(role));
        }
    }
    const std::size_t n = s.num_samples + s.num_test_samples;
    std::size_t row_bytes = 1 + 8 + 8 * ld;
    for (std::size_t dm : dims) row_bytes += 8 * dm;
    r.require(static_cast<std::uint64_t>(n) * row_bytes, "samples");

    std::vector<std::int64_t> labels(n);
    std::vector<Split> splits(n);
    Matrix z(n, ld);
    std::vector<Matrix> raws;
    for (std::size_t dm : dims) raws.emplace_back(n, dm);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t sp = r.u8();
        if (sp > 1) throw DataError(path.string() + ": bad split tag at row " + std::to_string(i));
        splits[i] = static_cast<Split>(sp);
        labels[i] = r.i64();
        for (std::size_t j = 0; j < ld; ++j) z(i, j) = r.f64();
        for (auto& m : raws) {
            for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
        }
    }
    if (!r.at_end()) throw DataError(path.string() + ": trailing bytes");
    std::map<std::string, Matrix> raw;
    for (std::size_t k = 0; k < order.size(); ++k) raw.emplace(order[k], std::move(raws[k]));
    return MultiModalDataset(std::move(s), std::move(labels), std::move(splits), std::move(z), std::move(order),
                             std::move(raw));
}

void export_csv(const MultiModalDataset& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.precision(17);
    std::vector<Matrix> mats;
    out << "index,split,label";
    for (std::size_t j = 0; j < d.latents().cols(); ++j) out << ",latent_" << j;
    for (const auto& m : d.modalities()) {
        mats.push_back(reveal_ground_truth(d, m));
        const char* tag = d.role(m) == Role::hidden ? "hidden_" : "";
        for (std::size_t j = 0; j < mats.back().cols(); ++j) out << ',' << tag << m << '_' << j;
    }
    out << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) {
        out << i << ',' << (d.splits()[i] == Split::train ? "train" : "test") << ',' << d.labels()[i];
        for (double v : d.latents().row(i)) out << ',' << v;
        for (const auto& m : mats) {
            for (double v : m.row(i)) out << ',' << v;
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

} // namespace bb::synthgen
