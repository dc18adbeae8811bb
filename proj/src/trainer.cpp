// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/trainer.hpp"

#include <algorithm>
#include <set>

#include "brokenbind/checkpoint.hpp"
#include "brokenbind/errors.hpp"

namespace bb::trainer {

using diffnet::EncoderStack;
using diffnet::Tape;
using diffnet::Var;
using synthgen::MultiModalBatch;
using synthgen::MultiModalDataset;

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t init_seed(std::uint64_t seed) { return mix(seed ^ 0x696e6974ULL); }
std::uint64_t shuffle_seed(std::uint64_t seed) { return mix(seed ^ 0x73687566ULL); }

std::set<std::string> observed_set(const MultiModalDataset& d) {
    return {d.spec().observable.begin(), d.spec().observable.end()};
}

void preflight_dims(const config::ExperimentConfig& c, const MultiModalDataset& d) {
    for (const auto& m : d.modalities()) {
        const auto& mc = c.modality(m);
        const std::size_t got = synthgen::reveal_ground_truth(d, m).cols();
        if (got != mc.raw_dim) {
            throw DataError("dataset '" + d.id() + "': modality '" + m + "' has " + std::to_string(got) +
                            " columns, config expects " + std::to_string(mc.raw_dim));
        }
    }
}

void require_ids(const config::ExperimentConfig& c, const std::vector<const MultiModalDataset*>& ds) {
    if (c.datasets.size() != ds.size()) {
        throw DataError("config declares " + std::to_string(c.datasets.size()) + " datasets, got " +
                        std::to_string(ds.size()));
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds[i]->id() != c.datasets[i].id) {
            throw DataError("dataset " + std::to_string(i) + " is '" + ds[i]->id() + "', config expects '" +
                            c.datasets[i].id + "'");
        }
        preflight_dims(c, *ds[i]);
    }
}

const synthgen::DatasetBatch& part(const MultiModalBatch& b, std::size_t k) {
    if (k >= b.parts.size()) throw ContractError("batch has too few dataset parts");
    return b.parts[k];
}

Var encode(Tape& t, const EncoderStack& enc, const synthgen::DatasetBatch& p, const std::string& m) {
    auto it = p.raw.find(m);
    if (it == p.raw.end()) throw DataError("batch from '" + p.dataset + "' lacks modality '" + m + "'");
    t.set_scope("encode:" + m + "@" + p.dataset);
    Var v = enc.encode(t, m, it->second);
    t.set_scope("");
    return v;
}

void accumulate(losses::LossReport& acc, const losses::LossReport& r) {
    acc.clip += r.clip;
    acc.sym_cross_modal += r.sym_cross_modal;
    acc.sym_cross_data += r.sym_cross_data;
    acc.mox_contrastive += r.mox_contrastive;
    acc.fro_reg += r.fro_reg;
    acc.total += r.total;
    for (const auto& [k, v] : r.per_side) acc.per_side[k] += v;
}

losses::LossReport averaged(losses::LossReport acc, std::size_t n) {
    if (n == 0) return acc;
    const double s = 1.0 / static_cast<double>(n);
    acc.clip *= s;
    acc.sym_cross_modal *= s;
    acc.sym_cross_data *= s;
    acc.mox_contrastive *= s;
    acc.fro_reg *= s;
    acc.total *= s;
    for (auto& [k, v] : acc.per_side) v *= s;
    return acc;
}

losses::ObjectiveVars three_batch_objective(Tape& tape, const EncoderStack& enc, const config::ExperimentConfig& c,
                                            const ThreeDatasetRoles& r, const MultiModalBatch& batch,
                                            const PhaseSettings& phase) {
    const auto& p1 = part(batch, 0);
    const auto& p2 = part(batch, 1);
    const auto& p3 = part(batch, 2);
    const double sa = c.temperature_scale(r.a);
    const double sb = c.temperature_scale(r.b);
    const double sc = c.temperature_scale(r.c);
    Var a1 = encode(tape, enc, p1, r.a);
    losses::FourSides s{{encode(tape, enc, p2, r.a), sa},
                        {encode(tape, enc, p2, r.b), sb},
                        {encode(tape, enc, p3, r.b), sb},
                        {encode(tape, enc, p3, r.c), sc}};
    losses::ObjectiveOptions o;
    o.tau = c.tau;
    o.weights = phase.weights;
    o.mox_enabled = false;
    o.mod_a = r.a;
    o.mod_b = r.b;
    o.mod_c = r.c;
    o.data_1 = p2.dataset;
    o.data_2 = p3.dataset;
    losses::ObjectiveVars v = losses::two_dataset_objective(tape, s, o);
    if (!phase.mox_enabled) return v;

    tape.set_scope("mox");
    const auto b1 = xtrap::pseudo_pair(a1, s.a1.f, s.b1.f, c.pinv_grad);
    Var fro = diffnet::frobenius_sq(diffnet::sub(b1.x_mod, b1.x_data));
    v.per_side["fro/" + r.b + "@" + p1.dataset] = fro;
    const losses::Side given[] = {{a1, sa}};
    losses::MoxVars m;
    if (phase.stage == "chain-a") {
        m = losses::mox_one_target(given, b1, sb, c.tau);
        v.per_side["mox/" + r.b + "@" + p1.dataset] = m.contrast;
    } else {
        const auto c1 = xtrap::pseudo_pair(b1.x_data, s.b2.f, s.c2.f, c.pinv_grad);
        m = losses::mox_one_target(given, c1, sc, c.tau);
        v.per_side["fro/" + r.c + "@" + p1.dataset] = m.fro;
        v.per_side["mox/" + r.c + "@" + p1.dataset] = m.contrast;
        fro = diffnet::add(fro, m.fro);
    }
    v.mox = m.contrast;
    v.fro = fro;
    v.has_mox = true;
    if (phase.weights.mox != 0.0) {
        Var term = v.mox;
        if (phase.weights.fro != 0.0) term = diffnet::add(term, diffnet::scale(fro, phase.weights.fro));
        v.total = diffnet::add(v.total, diffnet::scale(term, phase.weights.mox));
    }
    tape.set_scope("");
    return v;
}

std::vector<diffnet::NamedSlice> state_slices(const EncoderStack& enc, std::size_t epoch, std::uint64_t step,
                                              std::uint64_t seed) {
    auto out = diffnet::export_store(enc.store());
    out.push_back({"state/epoch", {static_cast<double>(epoch)}});
    out.push_back({"state/step", {static_cast<double>(step)}});
    out.push_back({"state/seed", {static_cast<double>(seed >> 32), static_cast<double>(seed & 0xffffffffULL)}});
    return out;
}

double state_value(const std::vector<diffnet::NamedSlice>& s, const std::string& name, std::size_t i = 0) {
    const auto* p = diffnet::find_slice(s, name);
    if (p == nullptr || p->values.size() <= i) throw DataError("checkpoint lacks '" + name + "'");
    return p->values[i];
}

struct LoopHooks {
    std::function<PhaseSettings(std::size_t)> phase;
    std::function<losses::ObjectiveVars(Tape&, const EncoderStack&, const MultiModalBatch&, const PhaseSettings&)>
        objective;
    std::vector<const MultiModalDataset*> datasets;
};

TrainResult run_loop(const config::ExperimentConfig& c, std::uint64_t seed, const LoopHooks& h,
                     const TrainOptions& opt) {
    TrainResult res;
    res.encoders = initial_encoders(c, seed);
    EncoderStack& enc = res.encoders;
    std::size_t start = 0;
    std::uint64_t step = 0;
    if (opt.resume_from) {
        const auto s = diffnet::read_checkpoint(*opt.resume_from);
        const auto saved_seed = (static_cast<std::uint64_t>(state_value(s, "state/seed", 0)) << 32) |
                                static_cast<std::uint64_t>(state_value(s, "state/seed", 1));
        if (saved_seed != seed) {
            throw DataError("checkpoint was written for seed " + std::to_string(saved_seed) + ", not " +
                            std::to_string(seed));
        }
        diffnet::import_store(enc.store(), s);
        start = static_cast<std::size_t>(state_value(s, "state/epoch"));
        step = static_cast<std::uint64_t>(state_value(s, "state/step"));
        if (start > c.epochs) throw DataError("checkpoint epoch exceeds configured epochs");
    }

    const diffnet::AdamW adam{c.lr, c.weight_decay};
    const auto mask = enc.final_layer_mask();
    for (std::size_t epoch = start; epoch < c.epochs; ++epoch) {
        if (opt.stop_after && epoch >= *opt.stop_after) break;
        const PhaseSettings phase = h.phase(epoch);
        const auto batches = synthgen::make_batches(h.datasets, c.batch_size, shuffle_seed(seed), epoch);
        losses::LossReport acc;
        for (std::size_t k = 0; k < batches.size(); ++k) {
            losses::LossReport rep;
            std::vector<double> grad;
            try {
                Tape tape;
                const auto v = h.objective(tape, enc, batches[k], phase);
                rep = losses::report_of(v, phase.weights);
                grad = tape.backward(v.total, enc.store().size());
            } catch (const NumericalError& e) {
                throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(k) + ": " +
                                     e.what());
            }
            diffnet::optimizer_step(enc.store(), grad, adam,
                                    phase.final_layer_only ? std::span<const std::uint8_t>(mask)
                                                           : std::span<const std::uint8_t>());
            ++step;
            accumulate(acc, rep);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.step = step;
        rec.stage = phase.stage;
        rec.mean = averaged(acc, batches.size());
        rec.weights = phase.weights;
        const bool last = epoch + 1 == c.epochs;
        if (opt.on_epoch && (last || (c.eval_every > 0 && (epoch + 1) % c.eval_every == 0))) {
            rec.metrics = opt.on_epoch(epoch, enc);
        }
        if (opt.log_sink) opt.log_sink(to_json(rec).dump());
        res.log.push_back(std::move(rec));
        res.epochs_completed = epoch + 1;
        if (opt.checkpoint) diffnet::write_checkpoint(*opt.checkpoint, state_slices(enc, epoch + 1, step, seed));
    }
    if (res.epochs_completed == 0) res.epochs_completed = start;
    return res;
}

} // namespace

PhaseSettings phase_schedule(std::size_t epoch, const config::ExperimentConfig& c) {
    PhaseSettings p;
    p.weights = c.weights;
    const bool pre = epoch < c.pretrain_epochs;
    if (pre) p.weights.mox = 0.0;
    p.mox_enabled = p.weights.mox > 0.0;
    p.final_layer_only = epoch < c.stage1_epochs;
    p.stage = pre ? "pretrain" : "mox";
    return p;
}

PhaseSettings three_dataset_phase(std::size_t epoch, const config::ExperimentConfig& c) {
    PhaseSettings p = phase_schedule(epoch, c);
    if (epoch >= c.pretrain_epochs) {
        const std::size_t rest = c.epochs - c.pretrain_epochs;
        p.stage = epoch < c.pretrain_epochs + (rest + 1) / 2 ? "chain-a" : "chain-b";
    }
    return p;
}

TwoDatasetRoles two_dataset_roles(const MultiModalDataset& d1, const MultiModalDataset& d2) {
    const auto o1 = observed_set(d1);
    const auto o2 = observed_set(d2);
    if (o1.size() != 2 || o2.size() != 2) {
        throw DataError("modality-pattern mismatch: each of two datasets must observe exactly two modalities");
    }
    std::vector<std::string> shared;
    std::set_intersection(o1.begin(), o1.end(), o2.begin(), o2.end(), std::back_inserter(shared));
    if (shared.size() != 1) {
        throw DataError("modality-pattern mismatch: '" + d1.id() + "' and '" + d2.id() +
                        "' must share exactly one pivot modality");
    }
    TwoDatasetRoles r;
    r.b = shared.front();
    for (const auto& m : o1) {
        if (m != r.b) r.a = m;
    }
    for (const auto& m : o2) {
        if (m != r.b) r.c = m;
    }
    if (const auto& h = d1.spec().hidden_target; h && *h != r.c) {
        throw DataError("modality-pattern mismatch: '" + d1.id() + "' hides '" + *h + "', expected '" + r.c + "'");
    }
    if (const auto& h = d2.spec().hidden_target; h && *h != r.a) {
        throw DataError("modality-pattern mismatch: '" + d2.id() + "' hides '" + *h + "', expected '" + r.a + "'");
    }
    return r;
}

ThreeDatasetRoles three_dataset_roles(const MultiModalDataset& d1, const MultiModalDataset& d2,
                                      const MultiModalDataset& d3) {
    const auto o1 = observed_set(d1);
    const auto o2 = observed_set(d2);
    const auto o3 = observed_set(d3);
    if (o1.size() != 1 || o2.size() != 2 || o3.size() != 2) {
        throw DataError("modality-pattern mismatch: three datasets must observe 1, 2 and 2 modalities");
    }
    ThreeDatasetRoles r;
    r.a = *o1.begin();
    if (!o2.count(r.a)) throw DataError("modality-pattern mismatch: '" + d2.id() + "' must observe '" + r.a + "'");
    for (const auto& m : o2) {
        if (m != r.a) r.b = m;
    }
    if (!o3.count(r.b)) throw DataError("modality-pattern mismatch: '" + d3.id() + "' must observe '" + r.b + "'");
    for (const auto& m : o3) {
        if (m != r.b) r.c = m;
    }
    if (r.c == r.a) throw DataError("modality-pattern mismatch: final target repeats the first modality");
    if (const auto& h = d1.spec().hidden_target; h && *h != r.c) {
        throw DataError("modality-pattern mismatch: '" + d1.id() + "' hides '" + *h + "', expected '" + r.c + "'");
    }
    return r;
}

nlohmann::json to_json(const EpochRecord& r) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["step"] = r.step;
    j["stage"] = r.stage;
    j["loss"] = {{"clip", r.mean.clip},
                 {"sym_cross_modal", r.mean.sym_cross_modal},
                 {"sym_cross_data", r.mean.sym_cross_data},
                 {"mox", r.mean.mox_contrastive},
                 {"fro", r.mean.fro_reg},
                 {"total", r.mean.total}};
    j["per_side"] = r.mean.per_side;
    j["weights"] = {{"clip", r.weights.clip}, {"sym", r.weights.sym}, {"mox", r.weights.mox}, {"fro", r.weights.fro}};
    j["metrics"] = r.metrics;
    return j;
}

EncoderStack initial_encoders(const config::ExperimentConfig& c, std::uint64_t seed) {
    return EncoderStack(c.encoder_specs(), init_seed(seed));
}

losses::ObjectiveVars batch_objective(Tape& tape, const EncoderStack& enc, const config::ExperimentConfig& c,
                                      const TwoDatasetRoles& r, const MultiModalBatch& batch,
                                      const PhaseSettings& phase) {
    const auto& p1 = part(batch, 0);
    const auto& p2 = part(batch, 1);
    losses::FourSides s{{encode(tape, enc, p1, r.a), c.temperature_scale(r.a)},
                        {encode(tape, enc, p1, r.b), c.temperature_scale(r.b)},
                        {encode(tape, enc, p2, r.b), c.temperature_scale(r.b)},
                        {encode(tape, enc, p2, r.c), c.temperature_scale(r.c)}};
    losses::ObjectiveOptions o;
    o.tau = c.tau;
    o.weights = phase.weights;
    o.mox_enabled = phase.mox_enabled;
    o.pinv_grad = c.pinv_grad;
    o.mod_a = r.a;
    o.mod_b = r.b;
    o.mod_c = r.c;
    o.data_1 = p1.dataset;
    o.data_2 = p2.dataset;
    return losses::two_dataset_objective(tape, s, o);
}

BatchGradient batch_gradient(const EncoderStack& enc, const config::ExperimentConfig& c, const TwoDatasetRoles& roles,
                             const MultiModalBatch& batch, const PhaseSettings& phase) {
    Tape tape;
    const auto v = batch_objective(tape, enc, c, roles, batch, phase);
    BatchGradient out;
    out.report = losses::report_of(v, phase.weights);
    out.grad = tape.backward(v.total, enc.store().size());
    return out;
}

TrainResult train(const config::ExperimentConfig& c, std::uint64_t seed, const MultiModalDataset& d1,
                  const MultiModalDataset& d2, const TrainOptions& opt) {
    c.validate();
    require_ids(c, {&d1, &d2});
    const TwoDatasetRoles roles = two_dataset_roles(d1, d2);
    LoopHooks h;
    h.datasets = {&d1, &d2};
    h.phase = [&](std::size_t e) { return phase_schedule(e, c); };
    h.objective = [&](Tape& t, const EncoderStack& enc, const MultiModalBatch& b, const PhaseSettings& p) {
        return batch_objective(t, enc, c, roles, b, p);
    };
    return run_loop(c, seed, h, opt);
}

TrainResult run_three_dataset(const config::ExperimentConfig& c, std::uint64_t seed, const MultiModalDataset& d1,
                              const MultiModalDataset& d2, const MultiModalDataset& d3, const TrainOptions& opt) {
    c.validate();
    require_ids(c, {&d1, &d2, &d3});
    const ThreeDatasetRoles roles = three_dataset_roles(d1, d2, d3);
    LoopHooks h;
    h.datasets = {&d1, &d2, &d3};
    h.phase = [&](std::size_t e) { return three_dataset_phase(e, c); };
    h.objective = [&](Tape& t, const EncoderStack& enc, const MultiModalBatch& b, const PhaseSettings& p) {
        return three_batch_objective(t, enc, c, roles, b, p);
    };
    return run_loop(c, seed, h, opt);
}

TrainResult train_any(const config::ExperimentConfig& c, std::uint64_t seed,
                      const std::vector<MultiModalDataset>& data, const TrainOptions& opt) {
    if (data.size() == 2) return train(c, seed, data[0], data[1], opt);
    if (data.size() == 3) return run_three_dataset(c, seed, data[0], data[1], data[2], opt);
    throw DataError("expected 2 or 3 datasets, got " + std::to_string(data.size()));
}

EncoderStack load_encoders(const config::ExperimentConfig& c, const std::filesystem::path& checkpoint) {
    EncoderStack enc = initial_encoders(c, 0);
    diffnet::import_store(enc.store(), diffnet::read_checkpoint(checkpoint));
    return enc;
}

} // namespace bb::trainer
