// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic mismatched multi-modal datasets. Every instance has a class label
// and a latent vector; each modality observes the latent through its own
// affine view (optionally squashed by tanh) plus Gaussian noise. Datasets
// differ by a latent mean shift and only expose some modalities to training.
//
// Dataset file layout (little-endian):
//
//   magic          8 bytes "BBDATA1\0"
//   id             str32
//   n_train        u64
//   n_test         u64
//   latent_dim     u64
//   latent_shift   latent_dim × f64
//   extra_noise    f64
//   n_modalities   u32
//   per modality:  name str32, raw_dim u64, role u8 (1 observable, 2 hidden)
//   per sample (train rows first, then test rows):
//     split u8 (0 train, 1 test), label i64, latent latent_dim × f64,
//     then raw_dim × f64 for each modality in table order

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "brokenbind/matrix.hpp"

namespace bb::synthgen {

inline constexpr char kDatasetMagic[8] = {'B', 'B', 'D', 'A', 'T', 'A', '1', '\0'};

struct LatentSpec {
    std::size_t latent_dim = 0;
    std::size_t num_classes = 0;
    Matrix class_centers; // num_classes × latent_dim
    double within_class_std = 1.0;

    void validate() const;
};

/// Centers drawn i.i.d. N(0, center_scale²) per coordinate.
LatentSpec make_latent_spec(std::size_t latent_dim, std::size_t num_classes, double center_scale,
                            double within_class_std, std::uint64_t seed);

struct ModalityViewSpec {
    std::string modality;
    Matrix view_map;            // raw_dim × latent_dim
    std::vector<double> offset; // raw_dim
    bool squash = false;        // tanh after the affine map
    double noise_std = 0.0;

    std::size_t raw_dim() const { return view_map.rows(); }
    std::size_t latent_dim() const { return view_map.cols(); }
    /// Throws ConfigError unless the map has full column rank and shapes agree.
    void validate() const;
};

/// Gaussian map entries with variance 1/latent_dim and offsets N(0, 0.1²).
ModalityViewSpec make_view_spec(std::string modality, std::size_t raw_dim, std::size_t latent_dim,
                                bool squash, double noise_std, std::uint64_t seed);

/// Noiseless view of each latent row.
Matrix apply_view(const ModalityViewSpec& view, const Matrix& latents);

struct DatasetSpec {
    std::string id;
    std::size_t num_samples = 0;      // training rows
    std::size_t num_test_samples = 0; // held-out rows
    std::vector<double> latent_shift; // added to every class center
    double extra_noise_std = 0.0;     // added in quadrature to each view's noise
    std::vector<std::string> observable;
    std::optional<std::string> hidden_target;

    void validate() const;
    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

/// Unit direction drawn from `seed`, scaled to `magnitude`.
std::vector<double> shift_vector(std::size_t latent_dim, double magnitude, std::uint64_t seed);

enum class Split : std::uint8_t { train = 0, test = 1 };

enum class Role : std::uint8_t { observable = 1, hidden = 2 };

class MultiModalDataset {
  public:
    MultiModalDataset() = default;
    MultiModalDataset(DatasetSpec spec, std::vector<std::int64_t> labels, std::vector<Split> splits,
                      Matrix latents, std::vector<std::string> modality_order,
                      std::map<std::string, Matrix> raw);

    const DatasetSpec& spec() const noexcept { return spec_; }
    const std::string& id() const noexcept { return spec_.id; }
    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::int64_t>& labels() const noexcept { return labels_; }
    const std::vector<Split>& splits() const noexcept { return splits_; }
    /// Oracle channel; never handed to encoders.
    const Matrix& latents() const noexcept { return latents_; }
    const std::vector<std::string>& modalities() const noexcept { return order_; }
    bool has_modality(const std::string& m) const { return raw_.count(m) != 0; }
    bool is_observable(const std::string& m) const;
    Role role(const std::string& m) const;
    std::vector<std::size_t> indices(Split s) const;

    /// Training-visible raw rows. Throws DataError for hidden or unknown modalities.
    const Matrix& observed(const std::string& m) const;

    friend bool operator==(const MultiModalDataset&, const MultiModalDataset&) = default;

  private:
    friend Matrix reveal_ground_truth(const MultiModalDataset& d, const std::string& modality);

    DatasetSpec spec_;
    std::vector<std::int64_t> labels_;
    std::vector<Split> splits_;
    Matrix latents_;
    std::vector<std::string> order_;
    std::map<std::string, Matrix> raw_;
};

/// Evaluation-only accessor: raw rows of any generated modality, hidden ones
/// included. Throws DataError for a modality that was never generated.
Matrix reveal_ground_truth(const MultiModalDataset& d, const std::string& modality);
Matrix reveal_ground_truth(const MultiModalDataset& d, const std::string& modality, Split split);

/// Throws ConfigError when a declared modality lacks a view spec.
MultiModalDataset generate_dataset(const LatentSpec& latent, const std::vector<ModalityViewSpec>& views,
                                   const DatasetSpec& spec, std::uint64_t seed);

/// Rows of one dataset inside a batch; only observable modalities attached.
struct DatasetBatch {
    std::string dataset;
    std::vector<std::size_t> indices;
    std::vector<std::int64_t> labels;
    std::map<std::string, Matrix> raw;
};

struct MultiModalBatch {
    std::vector<DatasetBatch> parts; // one per dataset, input order
};

/// Equal per-dataset rows per batch (batch_size / number of datasets), drawn
/// from training rows shuffled by (seed, epoch, dataset position). Batches
/// stop when the smallest dataset runs out; leftovers are dropped. Throws
/// ContractError when batch_size is not divisible by the dataset count.
std::vector<MultiModalBatch> make_batches(const std::vector<const MultiModalDataset*>& datasets,
                                          std::size_t batch_size, std::uint64_t seed,
                                          std::uint64_t epoch);

void save_dataset(const MultiModalDataset& d, const std::filesystem::path& path);
MultiModalDataset load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const MultiModalDataset& d);

/// One row per sample: index, split, label, latent columns, then every
/// modality's raw columns (hidden ones included, flagged in the header).
void export_csv(const MultiModalDataset& d, const std::filesystem::path& path);

} // namespace bb::synthgen
