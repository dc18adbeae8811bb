// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   magic        8 bytes  "BBCKPT1\0"
//   count        u64      number of named slices
//   per slice:
//     name_len   u32
//     name       name_len bytes (UTF-8, no terminator)
//     n          u64      element count
//     values     n × IEEE-754 binary64, little-endian

#include <filesystem>
#include <string>
#include <vector>

#include "brokenbind/encoder.hpp"

namespace bb::diffnet {

inline constexpr char kCheckpointMagic[8] = {'B', 'B', 'C', 'K', 'P', 'T', '1', '\0'};

struct NamedSlice {
    std::string name;
    std::vector<double> values;

    friend bool operator==(const NamedSlice&, const NamedSlice&) = default;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedSlice>& slices);
std::vector<NamedSlice> read_checkpoint(const std::filesystem::path& path);

/// θ, both moment buffers and per-slice step counts as named slices
/// ("param/<slice>", "adam_m/<slice>", "adam_v/<slice>", "adam_step/<slice>").
std::vector<NamedSlice> export_store(const ParameterStore& store);
/// Fills `store` (whose slice layout must already exist) from named slices.
void import_store(ParameterStore& store, const std::vector<NamedSlice>& slices);

const NamedSlice* find_slice(const std::vector<NamedSlice>& slices, const std::string& name);

} // namespace bb::diffnet
