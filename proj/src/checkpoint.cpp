// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "brokenbind/binary_io.hpp"
#include "brokenbind/errors.hpp"

namespace bb::diffnet {

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedSlice>& slices) {
    io::Writer w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.u64(slices.size());
    for (const auto& s : slices) {
        w.str32(s.name);
        w.u64(s.values.size());
        for (double v : s.values) w.f64(v);
    }
    w.save(path);
}

std::vector<NamedSlice> read_checkpoint(const std::filesystem::path& path) {
    io::Reader r = io::Reader::load(path);
    r.expect_magic(kCheckpointMagic, "checkpoint");
    const std::uint64_t count = r.u64();
    std::vector<NamedSlice> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedSlice s;
        s.name = r.str32();
        const std::uint64_t n = r.u64();
        r.require(n * 8, "checkpoint slice '" + s.name + "'");
        s.values.resize(n);
        for (auto& v : s.values) v = r.f64();
        out.push_back(std::move(s));
    }
    if (!r.at_end()) throw DataError("checkpoint " + path.string() + ": trailing bytes");
    return out;
}

std::vector<NamedSlice> export_store(const ParameterStore& store) {
    std::vector<NamedSlice> out;
    auto range = [](const std::vector<double>& v, const Slice& s) {
        return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(s.offset),
                                   v.begin() + static_cast<std::ptrdiff_t>(s.offset + s.size()));
    };
    for (std::size_t i = 0; i < store.slices().size(); ++i) {
        const Slice& s = store.slice(i);
        out.push_back({"param/" + s.name, range(store.theta, s)});
        out.push_back({"adam_m/" + s.name, range(store.moment1, s)});
        out.push_back({"adam_v/" + s.name, range(store.moment2, s)});
        out.push_back({"adam_step/" + s.name, {static_cast<double>(store.slice_steps[i])}});
    }
    return out;
}

const NamedSlice* find_slice(const std::vector<NamedSlice>& slices, const std::string& name) {
    auto it = std::find_if(slices.begin(), slices.end(),
                           [&](const NamedSlice& s) { return s.name == name; });
    return it == slices.end() ? nullptr : &*it;
}

void import_store(ParameterStore& store, const std::vector<NamedSlice>& slices) {
    for (std::size_t i = 0; i < store.slices().size(); ++i) {
        const Slice& s = store.slice(i);
        auto fill = [&](const std::string& prefix, std::vector<double>& dst) {
            const NamedSlice* src = find_slice(slices, prefix + s.name);
            if (src == nullptr) throw DataError("checkpoint: missing slice '" + prefix + s.name + "'");
            if (src->values.size() != s.size()) {
                throw DataError("checkpoint: slice '" + prefix + s.name + "' has " +
                                std::to_string(src->values.size()) + " values, expected " +
                                std::to_string(s.size()));
            }
            std::copy(src->values.begin(), src->values.end(),
                      dst.begin() + static_cast<std::ptrdiff_t>(s.offset));
        };
        fill("param/", store.theta);
        fill("adam_m/", store.moment1);
        fill("adam_v/", store.moment2);
        const NamedSlice* st = find_slice(slices, "adam_step/" + s.name);
        if (st == nullptr || st->values.size() != 1) {
            throw DataError("checkpoint: missing slice 'adam_step/" + s.name + "'");
        }
        store.slice_steps[i] = static_cast<std::uint64_t>(st->values[0]);
    }
}

} // namespace bb::diffnet
