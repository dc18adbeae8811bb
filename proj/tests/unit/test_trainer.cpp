// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "brokenbind/config.hpp"
#include "brokenbind/errors.hpp"
#include "brokenbind/eval.hpp"
#include "brokenbind/trainer.hpp"
#include "brokenbind/xtrap.hpp"

using namespace bb;
using namespace bb::trainer;

namespace {

config::ExperimentConfig reference() {
    return config::load_config(std::string(BB_SOURCE_DIR) + "/configs/reference.yaml");
}

// Reference geometry at a fraction of the size.
config::ExperimentConfig small(std::size_t epochs = 6, std::size_t pretrain = 3) {
    auto c = reference();
    for (auto& d : c.datasets) {
        d.num_samples = 160;
        d.num_test_samples = 40;
    }
    c.epochs = epochs;
    c.pretrain_epochs = pretrain;
    c.stage1_epochs = 1;
    return c;
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "bb_test_trainer";
    std::filesystem::create_directories(dir);
    return dir / name;
}

// Biases move after the first step, so every row is zeroed to hit batch 0.
synthgen::MultiModalDataset with_zero_rows(const synthgen::MultiModalDataset& d, const std::string& m) {
    std::map<std::string, Matrix> raw;
    for (const auto& name : d.modalities()) raw[name] = synthgen::reveal_ground_truth(d, name);
    for (double& v : raw[m].data()) v = 0.0;
    return {d.spec(), d.labels(), d.splits(), d.latents(), d.modalities(), raw};
}

} // namespace

TEST_CASE("phase schedule") {
    const auto c = reference();
    const auto p0 = phase_schedule(0, c);
    CHECK(p0.weights.mox == 0.0);
    CHECK_FALSE(p0.mox_enabled);
    CHECK(p0.final_layer_only);
    CHECK(p0.stage == "pretrain");
    CHECK(phase_schedule(4, c).final_layer_only);
    CHECK_FALSE(phase_schedule(5, c).final_layer_only);
    CHECK(phase_schedule(24, c).weights.mox == 0.0);
    const auto p25 = phase_schedule(25, c);
    CHECK(p25.weights.mox == c.weights.mox);
    CHECK(p25.mox_enabled);
    CHECK(p25.stage == "mox");

    auto no_pre = c;
    no_pre.pretrain_epochs = 0;
    CHECK(phase_schedule(0, no_pre).mox_enabled);

    auto three = c;
    three.epochs = 40;
    three.pretrain_epochs = 20;
    CHECK(three_dataset_phase(19, three).stage == "pretrain");
    CHECK(three_dataset_phase(20, three).stage == "chain-a");
    CHECK(three_dataset_phase(29, three).stage == "chain-a");
    CHECK(three_dataset_phase(30, three).stage == "chain-b");
}

TEST_CASE("role detection and pre-flight checks") {
    const auto c = small();
    const auto data = config::generate_all(c, 0);
    const auto r = two_dataset_roles(data[0], data[1]);
    CHECK(r.a == "te");
    CHECK(r.b == "vi");
    CHECK(r.c == "ta");
    CHECK_THROWS_AS(two_dataset_roles(data[0], data[0]), DataError);
    CHECK_THROWS_AS(train(c, 0, data[1], data[0]), DataError);

    auto wrong = c;
    for (auto& m : wrong.modalities)
        if (m.name == "te") m.raw_dim = 30;
    CHECK_THROWS_AS(train(wrong, 0, data[0], data[1]), DataError);
}

TEST_CASE("same config and seed give bitwise identical parameters") {
    const auto c = small(3, 1);
    const auto data = config::generate_all(c, 1);
    const auto a = train_any(c, 1, data);
    const auto b = train_any(c, 1, data);
    CHECK(a.encoders.store() == b.encoders.store());
    CHECK(a.log.back().mean.total == b.log.back().mean.total);
    CHECK_FALSE(train_any(c, 2, data).encoders.store() == a.encoders.store());
}

TEST_CASE("the clip-only arm is the pure CLIP objective") {
    const auto c = small(4, 1);
    const auto data = config::generate_all(c, 0);
    auto baseline = c;
    baseline.weights = {1.0, 0.0, 0.0, 0.0};
    const auto arm = train_any(eval::apply_arm(c, "clip_only"), 0, data);
    const auto base = train_any(baseline, 0, data);
    CHECK(arm.encoders.store() == base.encoders.store());
    for (const auto& rec : arm.log) {
        CHECK(rec.mean.mox_contrastive == 0.0);
        CHECK(rec.mean.total == doctest::Approx(rec.mean.clip).epsilon(1e-15));
    }
}

TEST_CASE("frozen pseudo-inverse gradients") {
    auto c = small();
    const auto data = config::generate_all(c, 0);
    const auto enc = initial_encoders(c, 0);
    const auto roles = two_dataset_roles(data[0], data[1]);
    const auto batch = synthgen::make_batches({&data[0], &data[1]}, c.batch_size, 5, 0).front();
    const auto phase = phase_schedule(c.pretrain_epochs, c);
    REQUIRE(phase.mox_enabled);

    const auto frozen = batch_gradient(enc, c, roles, batch, phase);

    // Same objective with the pseudo-inverses injected as constants.
    diffnet::Tape t;
    auto side = [&](std::size_t k, const std::string& m) {
        return losses::Side{enc.encode(t, m, batch.parts[k].raw.at(m)), c.temperature_scale(m)};
    };
    const losses::FourSides s{side(0, "te"), side(0, "vi"), side(1, "vi"), side(1, "ta")};
    losses::ObjectiveOptions o;
    o.tau = c.tau;
    o.weights = phase.weights;
    o.frozen_pinv_override = {linalg::pinv(s.b2.f.value()), linalg::pinv(s.b1.f.value())};
    const auto v = losses::two_dataset_objective(t, s, o);
    CHECK(t.backward(v.total, enc.store().size()) == frozen.grad);

    c.pinv_grad = xtrap::PinvGrad::differentiable;
    const auto live = batch_gradient(enc, c, roles, batch, phase);
    CHECK(live.report.total == doctest::Approx(frozen.report.total).epsilon(1e-12));
    CHECK(live.grad != frozen.grad);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
    const auto c = small(6, 3);
    const auto data = config::generate_all(c, 3);
    const auto full = train_any(c, 3, data);

    const auto ckpt = scratch("resume.bbckpt");
    TrainOptions first;
    first.checkpoint = ckpt;
    first.stop_after = 4;
    const auto part = train_any(c, 3, data, first);
    CHECK(part.epochs_completed == 4);
    CHECK(part.log.size() == 4);

    TrainOptions second;
    second.checkpoint = ckpt;
    second.resume_from = ckpt;
    const auto rest = train_any(c, 3, data, second);
    CHECK(rest.log.front().epoch == 4);
    CHECK(rest.encoders.store() == full.encoders.store());
    CHECK(rest.log.back().mean.total == full.log.back().mean.total);
    CHECK(rest.log.back().step == full.log.back().step);

    CHECK_THROWS_AS(train_any(c, 4, data, second), DataError);
    CHECK(load_encoders(c, ckpt).store().theta == full.encoders.store().theta);
    std::filesystem::remove_all(ckpt.parent_path());
}

TEST_CASE("numerical failures name the epoch and batch") {
    const auto c = small(2, 1);
    auto data = config::generate_all(c, 0);
    data[0] = with_zero_rows(data[0], "te");
    // All-zero input with zero biases encodes to the zero vector.
    auto enc = initial_encoders(c, 0);
    CHECK_THROWS_AS(enc.encode("te", Matrix(1, 32)), DegenerateEmbeddingError);
    try {
        train_any(c, 0, data);
        FAIL("expected a NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).rfind("epoch 0 batch 0: ", 0) == 0);
    }
}

TEST_CASE("epoch log and hooks") {
    auto c = small(4, 2);
    c.eval_every = 2;
    const auto data = config::generate_all(c, 0);
    std::vector<std::size_t> called;
    std::vector<std::string> lines;
    TrainOptions o;
    o.on_epoch = [&](std::size_t e, const diffnet::EncoderStack&) {
        called.push_back(e);
        return std::map<std::string, double>{{"probe", double(e)}};
    };
    o.log_sink = [&](const std::string& l) { lines.push_back(l); };
    const auto r = train_any(c, 0, data, o);
    CHECK(called == std::vector<std::size_t>{1, 3});
    REQUIRE(lines.size() == 4);
    const auto j = nlohmann::json::parse(lines[3]);
    CHECK(j["epoch"] == 3);
    CHECK(j["stage"] == "mox");
    CHECK(j["metrics"]["probe"] == 3.0);
    CHECK(j["loss"].contains("fro"));
    CHECK(r.log[0].stage == "pretrain");
    CHECK(r.log[0].step == 20);
}

TEST_CASE("reference config: final loss below the first epoch's over five seeds") {
    const auto c = reference();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CAPTURE(seed);
        const auto data = config::generate_all(c, seed);
        const auto r = train_any(c, seed, data);
        REQUIRE(r.log.size() == 50);
        CHECK(r.log.back().mean.total < r.log.front().mean.total);
    }
}

TEST_CASE("three datasets") {
    auto c = config::load_config(std::string(BB_SOURCE_DIR) + "/configs/three_dataset.yaml");
    for (auto& d : c.datasets) {
        d.num_samples = 150;
        d.num_test_samples = 30;
    }
    c.epochs = 6;
    c.pretrain_epochs = 2;
    c.stage1_epochs = 1;
    const auto data = config::generate_all(c, 0);
    const auto roles = three_dataset_roles(data[0], data[1], data[2]);
    CHECK(roles.a == "te");
    CHECK(roles.b == "vi");
    CHECK(roles.c == "ta");
    CHECK_THROWS_AS(three_dataset_roles(data[1], data[0], data[2]), DataError);

    SUBCASE("both chain stages are logged") {
        const auto r = train_any(c, 0, data);
        std::vector<std::string> stages;
        for (const auto& rec : r.log) stages.push_back(rec.stage);
        CHECK(stages == std::vector<std::string>{"pretrain", "pretrain", "chain-a", "chain-a", "chain-b", "chain-b"});
        for (const auto& rec : r.log)
            if (rec.stage != "pretrain") CHECK(rec.mean.mox_contrastive > 0.0);
    }
    SUBCASE("chained identity on encoder outputs") {
        const auto enc = initial_encoders(c, 0);
        const Matrix te = synthgen::reveal_ground_truth(data[1], "te", synthgen::Split::test);
        const Matrix vi = synthgen::reveal_ground_truth(data[2], "vi", synthgen::Split::test);
        const Matrix ta = synthgen::reveal_ground_truth(data[2], "ta", synthgen::Split::test);
        std::vector<std::size_t> rows{0, 1, 2, 3, 4};
        auto f = [&](const std::string& m, const Matrix& raw) {
            return enc.encode(m, gather_rows(raw, rows)).matrix();
        };
        const auto r = xtrap::chain_extrapolate({f("te", te), f("te", te), f("vi", vi), f("vi", vi), f("ta", ta)});
        CHECK(max_abs_diff(r.c1_x_data.values, f("ta", ta)) <= 1e-6);
    }
}
