// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "brokenbind/errors.hpp"
#include "brokenbind/synthgen.hpp"
#include "support.hpp"

using namespace bb;
using namespace bb::synthgen;

namespace {

LatentSpec latent(std::size_t classes = 4, std::uint64_t seed = 1) { return make_latent_spec(3, classes, 2.0, 1.0, seed); }

std::vector<ModalityViewSpec> views(double noise = 0.1) {
    return {make_view_spec("a", 6, 3, false, noise, 11), make_view_spec("b", 5, 3, true, noise, 12),
            make_view_spec("c", 7, 3, false, noise, 13)};
}

DatasetSpec spec(const std::string& id, std::vector<std::string> obs, std::optional<std::string> hidden,
                 std::size_t n = 50, std::size_t n_test = 10) {
    DatasetSpec s;
    s.id = id;
    s.num_samples = n;
    s.num_test_samples = n_test;
    s.observable = std::move(obs);
    s.hidden_target = std::move(hidden);
    return s;
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "bb_test_synthgen";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace

TEST_CASE("noiseless identity view reproduces the latents") {
    ModalityViewSpec v{"a", Matrix::identity(3), {0, 0, 0}, false, 0.0};
    const auto d = generate_dataset(latent(), {v}, spec("d", {"a"}, std::nullopt), 5);
    CHECK(d.observed("a") == d.latents());
}

TEST_CASE("generation is deterministic per seed") {
    const auto s = spec("d1", {"a", "b"}, "c");
    const auto x = generate_dataset(latent(), views(), s, 7);
    const auto y = generate_dataset(latent(), views(), s, 7);
    CHECK(x == y);
    CHECK(encode_dataset(x) == encode_dataset(y));
    CHECK_FALSE(x == generate_dataset(latent(), views(), s, 8));
}

TEST_CASE("modalities of one instance share one latent draw") {
    const auto lat = latent();
    const auto vs = views(0.0);
    const auto d = generate_dataset(lat, vs, spec("d1", {"a", "b"}, "c"), 3);
    for (const auto& v : vs) CHECK(max_abs_diff(reveal_ground_truth(d, v.modality), apply_view(v, d.latents())) < 1e-15);
}

TEST_CASE("no latent row appears in two datasets") {
    const auto d1 = generate_dataset(latent(), views(), spec("d1", {"a", "b"}, "c"), 21);
    const auto d2 = generate_dataset(latent(), views(), spec("d2", {"b", "c"}, "a"), 22);
    std::set<std::vector<double>> rows;
    for (std::size_t i = 0; i < d1.size(); ++i) rows.emplace(d1.latents().row(i).begin(), d1.latents().row(i).end());
    for (std::size_t i = 0; i < d2.size(); ++i)
        CHECK(rows.count(std::vector<double>(d2.latents().row(i).begin(), d2.latents().row(i).end())) == 0);
}

TEST_CASE("latent shift moves the pivot mean by the view of the shift") {
    const auto lat = make_latent_spec(3, 1, 2.0, 1.0, 4);
    const auto v = make_view_spec("a", 6, 3, false, 0.1, 5);
    const std::size_t n = 20000;
    auto s1 = spec("d1", {"a"}, std::nullopt, n, 0);
    auto s2 = spec("d2", {"a"}, std::nullopt, n, 0);
    s2.latent_shift = shift_vector(3, 1.0, 6);
    const auto d1 = generate_dataset(lat, {v}, s1, 31);
    const auto d2 = generate_dataset(lat, {v}, s2, 32);
    double norm = 0.0;
    for (double x : s2.latent_shift) norm += x * x;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t j = 0; j < 6; ++j) {
        double m1 = 0.0, m2 = 0.0, vm = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            m1 += d1.observed("a")(i, j);
            m2 += d2.observed("a")(i, j);
        }
        m1 /= double(n);
        m2 /= double(n);
        for (std::size_t i = 0; i < n; ++i) vm += std::pow(d1.observed("a")(i, j) - m1, 2);
        const double se = std::sqrt(2.0 * vm / double(n - 1) / double(n));
        double expected = 0.0;
        for (std::size_t k = 0; k < 3; ++k) expected += v.view_map(j, k) * s2.latent_shift[k];
        CHECK(std::abs((m2 - m1) - expected) <= 3.0 * se);
    }
}

TEST_CASE("hidden targets are only reachable through the oracle accessor") {
    const auto d = generate_dataset(latent(), views(), spec("d1", {"a", "b"}, "c"), 9);
    CHECK(d.role("c") == Role::hidden);
    CHECK(d.is_observable("a"));
    CHECK_FALSE(d.is_observable("c"));
    CHECK_THROWS_AS(d.observed("c"), DataError);
    CHECK_THROWS_AS(d.observed("z"), DataError);
    const Matrix gt = reveal_ground_truth(d, "c");
    CHECK(gt.rows() == d.size());
    CHECK(gt.cols() == 7);
    CHECK(reveal_ground_truth(d, "a") == d.observed("a"));
    CHECK(reveal_ground_truth(d, "c", Split::test).rows() == 10);
    CHECK_THROWS_AS(reveal_ground_truth(d, "z"), DataError);
}

TEST_CASE("spec validation") {
    CHECK_THROWS_AS(generate_dataset(latent(), {views()[0]}, spec("d", {"a", "b"}, std::nullopt), 1), ConfigError);
    CHECK_THROWS_AS(spec("d", {"a"}, "a").validate(), ConfigError);
    ModalityViewSpec thin{"a", Matrix(2, 3), {0, 0}, false, 0.0};
    CHECK_THROWS_AS(thin.validate(), ConfigError);
    ModalityViewSpec flat{"a", Matrix::from_rows({{1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 0}}), {0, 0, 0, 0}, false, 0.0};
    CHECK_THROWS_AS(flat.validate(), ConfigError);
    LatentSpec dup = latent();
    for (std::size_t j = 0; j < 3; ++j) dup.class_centers(1, j) = dup.class_centers(0, j);
    CHECK_THROWS_AS(dup.validate(), ConfigError);
}

TEST_CASE("batches") {
    const auto d1 = generate_dataset(latent(), views(), spec("d1", {"a", "b"}, "c", 50), 1);
    const auto d2 = generate_dataset(latent(), views(), spec("d2", {"b", "c"}, "a", 43), 2);

    const auto batches = make_batches({&d1, &d2}, 16, 3, 0);
    SUBCASE("equal halves, remainder dropped") {
        CHECK(batches.size() == 43 / 8);
        for (const auto& b : batches) {
            REQUIRE(b.parts.size() == 2);
            CHECK(b.parts[0].indices.size() == 8);
            CHECK(b.parts[1].indices.size() == 8);
            CHECK(b.parts[0].raw.at("a").rows() == 8);
        }
    }
    SUBCASE("no hidden modality and no test rows in any batch") {
        std::size_t leaks = 0;
        for (const auto& b : batches) {
            leaks += b.parts[0].raw.count("c") + b.parts[1].raw.count("a");
            for (std::size_t i : b.parts[0].indices) CHECK(d1.splits()[i] == Split::train);
            for (std::size_t i : b.parts[1].indices) CHECK(d2.splits()[i] == Split::train);
        }
        CHECK(leaks == 0);
    }
    SUBCASE("rows and labels come from the dataset") {
        const auto& p = batches[1].parts[0];
        for (std::size_t r = 0; r < p.indices.size(); ++r) {
            CHECK(p.labels[r] == d1.labels()[p.indices[r]]);
            for (std::size_t k = 0; k < 6; ++k) CHECK(p.raw.at("a")(r, k) == d1.observed("a")(p.indices[r], k));
        }
    }
    SUBCASE("shuffling depends on seed and epoch only") {
        CHECK(make_batches({&d1, &d2}, 16, 3, 0)[0].parts[0].indices == batches[0].parts[0].indices);
        CHECK(make_batches({&d1, &d2}, 16, 3, 1)[0].parts[0].indices != batches[0].parts[0].indices);
        CHECK(make_batches({&d1, &d2}, 16, 4, 0)[0].parts[0].indices != batches[0].parts[0].indices);
    }
    CHECK_THROWS_AS(make_batches({&d1, &d2}, 15, 3, 0), ContractError);
    CHECK(make_batches({&d1, &d2, &d1}, 15, 3, 0).front().parts.size() == 3);
}

TEST_CASE("dataset files round-trip and reject corruption") {
    const auto d = generate_dataset(latent(), views(), spec("d1", {"a", "b"}, "c"), 5);
    const auto path = scratch("d1.bbdata");
    save_dataset(d, path);
    CHECK(load_dataset(path) == d);

    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::equal(magic, magic + 8, kDatasetMagic));
    in.close();

    {
        std::ofstream out(path, std::ios::binary | std::ios::app);
        out.put('x');
    }
    CHECK_THROWS_AS(load_dataset(path), DataError);
    std::filesystem::resize_file(path, 100);
    CHECK_THROWS_AS(load_dataset(path), DataError);
    std::ofstream(path, std::ios::binary) << "BBDATA0";
    CHECK_THROWS_AS(load_dataset(path), DataError);
    CHECK_THROWS_AS(load_dataset(scratch("missing.bbdata")), DataError);

    const auto csv = scratch("d1.csv");
    export_csv(d, csv);
    std::ifstream c(csv);
    std::string header, line;
    std::getline(c, header);
    std::size_t rows = 0;
    while (std::getline(c, line)) ++rows;
    CHECK(rows == d.size());
    CHECK(header.find("label") != std::string::npos);
    std::filesystem::remove_all(scratch("").parent_path());
}
