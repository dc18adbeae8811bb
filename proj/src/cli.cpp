// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "brokenbind/checkpoint.hpp"
#include "brokenbind/config.hpp"
#include "brokenbind/errors.hpp"
#include "brokenbind/eval.hpp"
#include "brokenbind/synthgen.hpp"
#include "brokenbind/trainer.hpp"

#ifndef BB_VERSION
#define BB_VERSION "0.0.0"
#endif

namespace bb::cli {
namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointFile = "checkpoint.bbckpt";
constexpr const char* kLogFile = "train_log.jsonl";

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory '" + dir.string() + "'");
    const fs::path probe = dir / ".bbind-write-probe";
    {
        std::ofstream p(probe);
        if (!p) throw DataError("output directory '" + dir.string() + "' is not writable");
    }
    fs::remove(probe, ec);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::string dataset_file(const std::string& id) { return id + ".bbdata"; }

std::vector<synthgen::MultiModalDataset> load_all(const config::ExperimentConfig& c, const fs::path& dir) {
    std::vector<synthgen::MultiModalDataset> out;
    for (const auto& d : c.datasets) {
        const fs::path p = dir / dataset_file(d.id);
        if (!fs::exists(p)) throw DataError("missing dataset file '" + p.string() + "'");
        out.push_back(synthgen::load_dataset(p));
        const auto& got = out.back().spec();
        if (got.observable != d.observable || got.hidden_target != d.hidden_target) {
            throw DataError("dataset '" + d.id + "': modality pattern in '" + p.string() +
                            "' does not match the config");
        }
    }
    return out;
}

std::string pct(double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << 100.0 * v;
    return s.str();
}

std::string flow_slug(const std::string& flow) {
    std::string s = flow;
    for (char& ch : s) {
        if (ch != '_' && !std::isalnum(static_cast<unsigned char>(ch))) ch = '-';
    }
    return s;
}

std::map<std::string, double> eval_metrics(const config::ExperimentConfig& c,
                                           const std::vector<synthgen::MultiModalDataset>& data,
                                           const diffnet::EncoderStack& enc) {
    std::map<std::string, double> m;
    std::vector<std::string> flows = c.flows;
    if (flows.empty()) flows.push_back(eval::default_flow(c));
    for (const auto& f : flows) {
        const auto r = eval::evaluate_flow(enc, eval::parse_flow(f), data);
        m["map/" + r.flow] = r.map_score;
    }
    m["fidelity"] = eval::pseudo_fidelity(enc, c, data).mean;
    return m;
}

} // namespace

const char* version() { return BB_VERSION; }

unsigned threads_from_env() {
    const char* v = std::getenv("BB_THREADS");
    if (v == nullptr || *v == '\0') return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) throw ConfigError(std::string("BB_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<unsigned>(n);
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json files_j = nlohmann::json::array();
    for (const auto& f : files) files_j.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    return {{"tool", "bbind"},   {"version", version()},  {"command", command},   {"config_hash", config_hash},
            {"seed", seed},      {"started", started},    {"finished", finished}, {"threads", threads},
            {"files", files_j}};
}

void write_manifest(RunManifest m, const fs::path& dir, const std::vector<std::string>& files) {
    for (const auto& f : files) {
        const fs::path p = dir / f;
        m.files.push_back({f, config::sha256_file(p), fs::file_size(p)});
    }
    m.finished = utc_now();
    write_text(dir / "manifest.json", m.to_json().dump(2) + "\n");
}

void cmd_generate(const GenerateArgs& a) {
    RunManifest man;
    man.started = utc_now();
    man.threads = threads_from_env();
    const auto c = config::load_config(a.config);
    ensure_dir(a.out);
    man.command = "generate";
    man.seed = a.seed.value_or(c.seed);
    man.config_hash = config::config_hash(c);
    const auto data = config::generate_all(c, man.seed);
    std::vector<std::string> files;
    for (const auto& d : data) {
        files.push_back(dataset_file(d.id()));
        synthgen::save_dataset(d, a.out / files.back());
    }
    write_manifest(man, a.out, files);
}

void cmd_train(const TrainArgs& a) {
    RunManifest man;
    man.started = utc_now();
    man.threads = threads_from_env();
    const auto c = config::load_config(a.config);
    const auto data = load_all(c, a.data);
    ensure_dir(a.out);
    man.command = "train";
    man.seed = a.seed.value_or(c.seed);
    man.config_hash = config::config_hash(c);

    const fs::path ckpt = a.out / kCheckpointFile;
    const fs::path log_path = a.out / kLogFile;
    trainer::TrainOptions opt;
    opt.checkpoint = ckpt;
    opt.stop_after = a.stop_after;

    std::vector<std::string> kept;
    if (a.resume && fs::exists(ckpt)) {
        opt.resume_from = ckpt;
        const auto s = diffnet::read_checkpoint(ckpt);
        const auto* e = diffnet::find_slice(s, "state/epoch");
        if (e == nullptr || e->values.empty()) throw DataError("checkpoint lacks state/epoch");
        const auto done = static_cast<std::size_t>(e->values[0]);
        std::ifstream in(log_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) throw DataError("corrupt log line in '" + log_path.string() + "'");
            if (j.at("epoch").get<std::size_t>() < done) kept.push_back(line);
        }
    }
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw DataError("cannot open '" + log_path.string() + "' for writing");
    for (const auto& l : kept) log << l << '\n';
    opt.log_sink = [&](const std::string& line) {
        log << line << '\n';
        log.flush();
    };
    opt.on_epoch = [&](std::size_t, const diffnet::EncoderStack& enc) { return eval_metrics(c, data, enc); };

    const auto res = trainer::train_any(c, man.seed, data, opt);
    log.close();
    if (!res.log.empty()) {
        std::cerr << "trained " << res.epochs_completed << "/" << c.epochs << " epochs, final loss "
                  << res.log.back().mean.total << "\n";
    }
    write_manifest(man, a.out, {kCheckpointFile, kLogFile});
}

void cmd_eval(const EvalArgs& a) {
    RunManifest man;
    man.started = utc_now();
    man.threads = threads_from_env();
    const auto c = config::load_config(a.config);
    const auto data = load_all(c, a.data);
    ensure_dir(a.out);
    man.command = "eval";
    man.seed = a.seed.value_or(c.seed);
    man.config_hash = config::config_hash(c);
    const auto enc = trainer::load_encoders(c, a.checkpoint);

    std::vector<std::string> flows;
    if (a.flow) {
        flows.push_back(*a.flow);
    } else {
        flows = c.flows.empty() ? std::vector<std::string>{eval::default_flow(c)} : c.flows;
    }
    std::vector<std::string> files;
    for (const auto& fs_text : flows) {
        auto flow = eval::parse_flow(fs_text);
        const auto& d = eval::resolve_flow(flow, data);
        const auto r = eval::evaluate_flow(enc, flow, data);
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
        const std::string slug = flow_slug(r.flow);
        files.push_back("eval_" + slug + "_queries.csv");
        eval::write_queries_csv(r, a.out / files.back());
        files.push_back("eval_" + slug + "_summary.json");
        write_text(a.out / files.back(), eval::summary_json(r, man.seed, a.arm).dump(2) + "\n");

        std::vector<std::int64_t> labels;
        for (std::size_t i : d.indices(synthgen::Split::test)) labels.push_back(d.labels()[i]);
        const auto q = enc.encode(flow.begin, synthgen::reveal_ground_truth(d, flow.begin, synthgen::Split::test));
        const auto g = enc.encode(flow.target, synthgen::reveal_ground_truth(d, flow.target, synthgen::Split::test));
        const auto p = eval::project_2d({q.matrix(), g.matrix()}, {labels, labels});
        for (const auto& w : p.warnings) std::cerr << "warning: " << w << "\n";
        files.push_back("projection_" + slug + ".csv");
        eval::write_projection_csv(p, a.out / files.back());
        std::cout << r.flow << " mAP " << pct(r.map_score) << " over " << r.num_queries << " queries\n";
    }
    const auto fid = eval::pseudo_fidelity(enc, c, data);
    files.push_back("fidelity.json");
    write_text(a.out / files.back(), nlohmann::json{{"mean", fid.mean}, {"q1", fid.q1}, {"median", fid.median},
                                                   {"q3", fid.q3}, {"n", fid.n}}.dump(2) + "\n");
    write_manifest(man, a.out, files);
}

void cmd_ablate(const AblateArgs& a) {
    RunManifest man;
    man.started = utc_now();
    man.threads = threads_from_env();
    const auto c = config::load_config(a.config);
    ensure_dir(a.out);
    man.command = "ablate";
    man.seed = c.seed;
    man.config_hash = config::config_hash(c);
    const auto arms = a.arms.empty() ? eval::kArms : a.arms;
    const auto seeds = a.seeds.empty() ? c.seeds : a.seeds;
    const auto table = eval::run_ablation(c, arms, seeds, [](const eval::AblationRow& r) {
        std::cerr << r.arm << " seed " << r.seed << " mAP " << pct(r.report.map_score) << "\n";
    });
    write_text(a.out / "ablation.csv", table.to_csv());
    write_text(a.out / "ablation.json", table.to_json().dump(2) + "\n");
    for (const auto& arm : arms) {
        std::cout << arm << " " << pct(table.mean(arm)) << " +- " << pct(table.stddev(arm)) << "\n";
    }
    write_manifest(man, a.out, {"ablation.csv", "ablation.json"});
}

void cmd_export(const ExportArgs& a) {
    RunManifest man;
    man.started = utc_now();
    man.threads = threads_from_env();
    ensure_dir(a.out);
    man.command = "export";
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(a.data)) {
        if (entry.path().extension() != ".bbdata") continue;
        files.push_back(entry.path().stem().string() + ".csv");
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .bbdata files in '" + a.data.string() + "'");
    for (const auto& f : files) {
        const auto d = synthgen::load_dataset(a.data / (fs::path(f).stem().string() + ".bbdata"));
        synthgen::export_csv(d, a.out / f);
    }
    write_manifest(man, a.out, files);
}

int main(int argc, char** argv) {
    CLI::App app{"bbind: bind modalities across mismatched datasets"};
    app.set_version_flag("--version", version());
    app.require_subcommand(1);

    GenerateArgs g;
    auto* gen = app.add_subcommand("generate", "generate synthetic datasets");
    gen->add_option("--config", g.config, "experiment config (YAML)")->required();
    gen->add_option("--out", g.out, "output directory")->required();
    gen->add_option("--seed", g.seed, "override the config seed");

    TrainArgs t;
    auto* tr = app.add_subcommand("train", "train encoders");
    tr->add_option("--config", t.config, "experiment config (YAML)")->required();
    tr->add_option("--data", t.data, "directory holding generated datasets")->required();
    tr->add_option("--out", t.out, "output directory")->required();
    tr->add_option("--seed", t.seed, "override the config seed");
    tr->add_flag("--resume", t.resume, "continue from <out>/checkpoint.bbckpt if present");
    tr->add_option("--stop-after", t.stop_after, "stop after this many epochs (simulates an interruption)");

    EvalArgs e;
    auto* ev = app.add_subcommand("eval", "evaluate retrieval along a modality flow");
    ev->add_option("--config", e.config, "experiment config (YAML)")->required();
    ev->add_option("--checkpoint", e.checkpoint, "trained checkpoint")->required();
    ev->add_option("--data", e.data, "directory holding generated datasets")->required();
    ev->add_option("--out", e.out, "output directory")->required();
    ev->add_option("--flow", e.flow, "modality flow, e.g. te-vi-ta");
    ev->add_option("--seed", e.seed, "seed recorded in the summary");
    ev->add_option("--arm", e.arm, "arm label recorded in the summary");

    AblateArgs ab;
    std::string arms_csv;
    std::string seeds_csv;
    auto* abl = app.add_subcommand("ablate", "train and evaluate every ablation arm");
    abl->add_option("--config", ab.config, "experiment config (YAML)")->required();
    abl->add_option("--out", ab.out, "output directory")->required();
    abl->add_option("--arms", arms_csv, "comma-separated arms (default: all)");
    abl->add_option("--seeds", seeds_csv, "comma-separated seeds (default: config seeds)");

    ExportArgs x;
    auto* ex = app.add_subcommand("export", "write datasets as CSV");
    ex->add_option("--data", x.data, "directory holding generated datasets")->required();
    ex->add_option("--out", x.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForVersion& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kExitConfig;
    }

    try {
        if (*gen) {
            cmd_generate(g);
        } else if (*tr) {
            cmd_train(t);
        } else if (*ev) {
            cmd_eval(e);
        } else if (*abl) {
            std::stringstream as(arms_csv);
            for (std::string s; std::getline(as, s, ',');) {
                if (!s.empty()) ab.arms.push_back(s);
            }
            std::stringstream ss(seeds_csv);
            for (std::string s; std::getline(ss, s, ',');) {
                if (s.empty()) continue;
                try {
                    ab.seeds.push_back(std::stoull(s));
                } catch (const std::exception&) {
                    throw ConfigError("--seeds: '" + s + "' is not a seed");
                }
            }
            cmd_ablate(ab);
        } else if (*ex) {
            cmd_export(x);
        }
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return kExitConfig;
    } catch (const DataError& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return kExitData;
    } catch (const NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << "\n";
        return kExitNumerical;
    } catch (const std::invalid_argument& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

} // namespace bb::cli
