// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "brokenbind/errors.hpp"
#include "brokenbind/linalg.hpp"
#include "brokenbind/trainer.hpp"
#include "brokenbind/xtrap.hpp"

namespace bb::eval {

using synthgen::MultiModalDataset;
using synthgen::Split;

const std::vector<std::string> kArms = {"full", "no_fro", "no_cons", "no_mox", "clip_only"};

std::string ModalityFlow::str() const {
    std::string s = begin;
    for (const auto& p : pivots) s += "-" + p;
    return s + "-" + target;
}

ModalityFlow parse_flow(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    auto fail = [&](std::size_t pos, const std::string& why) {
        throw ConfigError("flow '" + text + "': " + why + " at position " + std::to_string(pos));
    };
    auto close = [&](std::size_t pos) {
        if (cur.empty()) fail(pos, "empty modality token");
        tokens.push_back(cur);
        cur.clear();
    };
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char ch = static_cast<unsigned char>(text[i]);
        if (std::isalnum(ch) || ch == '_') {
            cur.push_back(static_cast<char>(ch));
            ++i;
        } else if (text.compare(i, 2, "->") == 0) {
            close(i);
            i += 2;
        } else if (text.compare(i, 3, "\xe2\x86\x92") == 0) {
            close(i);
            i += 3;
        } else if (ch == '-') {
            close(i);
            ++i;
        } else {
            fail(i, std::string("unexpected character '") + static_cast<char>(ch) + "'");
        }
    }
    close(text.size());
    if (tokens.size() < 3) fail(0, "expected at least begin, pivot and target");
    ModalityFlow f;
    f.begin = tokens.front();
    f.target = tokens.back();
    f.pivots.assign(tokens.begin() + 1, tokens.end() - 1);
    if (f.begin == f.target) fail(0, "begin and target must differ");
    return f;
}

std::string default_flow(const config::ExperimentConfig& c) {
    const auto& d = c.datasets;
    if (d.size() == 2) {
        std::string a, b, cc;
        for (const auto& m : d[0].observable) {
            if (std::find(d[1].observable.begin(), d[1].observable.end(), m) != d[1].observable.end()) {
                b = m;
            } else {
                a = m;
            }
        }
        for (const auto& m : d[1].observable) {
            if (m != b) cc = m;
        }
        return a + "-" + b + "-" + cc;
    }
    if (d.size() == 3 && d[0].observable.size() == 1 && d[2].observable.size() == 2) {
        const std::string a = d[0].observable[0];
        std::string b;
        for (const auto& m : d[1].observable) {
            if (m != a) b = m;
        }
        std::string cc;
        for (const auto& m : d[2].observable) {
            if (m != b) cc = m;
        }
        return a + "-" + b + "-" + cc;
    }
    throw ConfigError("cannot derive a default flow; set eval.flows");
}

double average_precision(std::span<const double> sims, std::span<const std::uint8_t> rel) {
    if (sims.size() != rel.size()) throw ShapeError("average_precision: length mismatch");
    std::vector<std::size_t> order(sims.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sims[x] > sims[y]; });
    double hits = 0.0;
    double acc = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (rel[order[r]]) {
            hits += 1.0;
            acc += hits / static_cast<double>(r + 1);
        }
    }
    return hits > 0.0 ? acc / hits : 0.0;
}

RetrievalReport retrieval_map(const EmbeddingMatrix& q, const EmbeddingMatrix& g,
                              const std::vector<std::uint8_t>& relevance) {
    if (q.cols() != g.cols()) throw ShapeError("retrieval_map: embedding dims differ");
    if (relevance.size() != q.rows() * g.rows()) throw ShapeError("retrieval_map: relevance is not queries x gallery");
    const Matrix sims = linalg::cosine_sim_matrix(q, g);
    RetrievalReport r;
    for (std::size_t i = 0; i < q.rows(); ++i) {
        std::span<const std::uint8_t> rel(relevance.data() + i * g.rows(), g.rows());
        if (std::none_of(rel.begin(), rel.end(), [](std::uint8_t v) { return v != 0; })) {
            ++r.excluded;
            r.warnings.push_back("query " + std::to_string(i) + " has no relevant gallery item; excluded");
            continue;
        }
        r.ap.push_back(average_precision(sims.row(i), rel));
        r.query_index.push_back(i);
    }
    r.num_queries = r.ap.size();
    double s = 0.0;
    for (double v : r.ap) s += v;
    r.map_score = r.ap.empty() ? 0.0 : s / static_cast<double>(r.ap.size());
    return r;
}

RetrievalReport retrieval_map(const EmbeddingMatrix& q, const EmbeddingMatrix& g,
                              const std::vector<std::int64_t>& ql, const std::vector<std::int64_t>& gl) {
    if (ql.size() != q.rows() || gl.size() != g.rows()) throw ShapeError("retrieval_map: label counts differ");
    std::vector<std::uint8_t> rel(ql.size() * gl.size());
    for (std::size_t i = 0; i < ql.size(); ++i) {
        for (std::size_t j = 0; j < gl.size(); ++j) rel[i * gl.size() + j] = ql[i] == gl[j];
    }
    return retrieval_map(q, g, rel);
}

const MultiModalDataset& resolve_flow(ModalityFlow& flow, const std::vector<MultiModalDataset>& data) {
    const MultiModalDataset* best = nullptr;
    for (const auto& d : data) {
        if (!d.is_observable(flow.begin) || !d.has_modality(flow.target)) continue;
        const bool hidden = d.spec().hidden_target && *d.spec().hidden_target == flow.target;
        if (best == nullptr || hidden) best = &d;
        if (hidden) break;
    }
    if (best == nullptr) {
        throw DataError("flow " + flow.str() + ": no dataset holds ground truth for both '" + flow.begin + "' and '" +
                        flow.target + "'");
    }
    flow.datasets = {best->id()};
    return *best;
}

RetrievalReport evaluate_flow(const diffnet::EncoderStack& enc, ModalityFlow flow,
                              const std::vector<MultiModalDataset>& data) {
    const auto& d = resolve_flow(flow, data);
    if (!enc.has(flow.begin) || !enc.has(flow.target)) throw DataError("flow " + flow.str() + ": no encoder");
    const Matrix qraw = synthgen::reveal_ground_truth(d, flow.begin, Split::test);
    const Matrix graw = synthgen::reveal_ground_truth(d, flow.target, Split::test);
    if (qraw.rows() == 0) throw DataError("flow " + flow.str() + ": dataset '" + d.id() + "' has no test rows");
    std::vector<std::int64_t> labels;
    for (std::size_t i : d.indices(Split::test)) labels.push_back(d.labels()[i]);
    auto r = retrieval_map(enc.encode(flow.begin, qraw), enc.encode(flow.target, graw), labels, labels);
    r.flow = flow.str();
    return r;
}

FidelityReport summarize(std::vector<double> v) {
    FidelityReport f;
    f.n = v.size();
    if (v.empty()) return f;
    std::sort(v.begin(), v.end());
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    double s = 0.0;
    for (double x : v) s += x;
    f.mean = s / static_cast<double>(v.size());
    f.q1 = q(0.25);
    f.median = q(0.5);
    f.q3 = q(0.75);
    return f;
}

namespace {

Matrix encoded_rows(const diffnet::EncoderStack& enc, const MultiModalDataset& d, const std::string& m,
                    const std::vector<std::size_t>& rows) {
    const Matrix raw = synthgen::reveal_ground_truth(d, m);
    return enc.encode(m, gather_rows(raw, rows)).matrix();
}

void row_cosines(const Matrix& x, const Matrix& truth, std::vector<double>& out) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double dot = 0.0, nx = 0.0, nt = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            dot += x(i, j) * truth(i, j);
            nx += x(i, j) * x(i, j);
            nt += truth(i, j) * truth(i, j);
        }
        if (nx == 0.0 || nt == 0.0) throw DegenerateEmbeddingError("pseudo_fidelity: zero pseudo embedding row");
        out.push_back(dot / std::sqrt(nx * nt));
    }
}

} // namespace

FidelityReport pseudo_fidelity(const diffnet::EncoderStack& enc, const config::ExperimentConfig& c,
                               const std::vector<MultiModalDataset>& data) {
    std::vector<double> cos;
    const std::size_t per = c.batch_size / data.size();
    if (data.size() == 2) {
        const auto r = trainer::two_dataset_roles(data[0], data[1]);
        const auto t1 = data[0].indices(Split::test);
        const auto t2 = data[1].indices(Split::test);
        const std::size_t chunks = std::min(t1.size(), t2.size()) / per;
        for (std::size_t k = 0; k < chunks; ++k) {
            const std::vector<std::size_t> r1(t1.begin() + k * per, t1.begin() + (k + 1) * per);
            const std::vector<std::size_t> r2(t2.begin() + k * per, t2.begin() + (k + 1) * per);
            const auto w = xtrap::cross_data_transition(encoded_rows(enc, data[0], r.b, r1),
                                                        encoded_rows(enc, data[1], r.b, r2));
            const auto x = xtrap::pseudo_embed_x_data(w, encoded_rows(enc, data[1], r.c, r2));
            row_cosines(x.values, encoded_rows(enc, data[0], r.c, r1), cos);
        }
    } else if (data.size() == 3) {
        const auto r = trainer::three_dataset_roles(data[0], data[1], data[2]);
        const auto t1 = data[0].indices(Split::test);
        const auto t2 = data[1].indices(Split::test);
        const auto t3 = data[2].indices(Split::test);
        const std::size_t chunks = std::min({t1.size(), t2.size(), t3.size()}) / per;
        for (std::size_t k = 0; k < chunks; ++k) {
            const std::vector<std::size_t> r1(t1.begin() + k * per, t1.begin() + (k + 1) * per);
            const std::vector<std::size_t> r2(t2.begin() + k * per, t2.begin() + (k + 1) * per);
            const std::vector<std::size_t> r3(t3.begin() + k * per, t3.begin() + (k + 1) * per);
            xtrap::ChainInputs in{encoded_rows(enc, data[0], r.a, r1), encoded_rows(enc, data[1], r.a, r2),
                                  encoded_rows(enc, data[1], r.b, r2), encoded_rows(enc, data[2], r.b, r3),
                                  encoded_rows(enc, data[2], r.c, r3)};
            const auto chain = xtrap::chain_extrapolate(in);
            row_cosines(chain.c1_x_data.values, encoded_rows(enc, data[0], r.c, r1), cos);
        }
    } else {
        throw DataError("pseudo_fidelity: expected 2 or 3 datasets");
    }
    return summarize(std::move(cos));
}

Projection project_2d(const std::vector<Matrix>& sets, const std::vector<std::vector<std::int64_t>>& labels) {
    if (sets.empty()) throw ContractError("project_2d: no embedding sets");
    if (labels.size() != sets.size()) throw ShapeError("project_2d: one label vector per set required");
    const std::size_t d = sets.front().cols();
    std::size_t n = 0;
    for (std::size_t s = 0; s < sets.size(); ++s) {
        if (sets[s].cols() != d) throw ShapeError("project_2d: sets differ in width");
        if (labels[s].size() != sets[s].rows()) throw ShapeError("project_2d: label count mismatch");
        n += sets[s].rows();
    }
    if (n < 3) throw ContractError("project_2d: need at least 3 points");
    if (d < 2) throw ContractError("project_2d: need at least 2 dimensions");

    Projection p;
    Matrix x(n, d);
    std::size_t row = 0;
    for (std::size_t s = 0; s < sets.size(); ++s) {
        for (std::size_t i = 0; i < sets[s].rows(); ++i, ++row) {
            std::copy(sets[s].row(i).begin(), sets[s].row(i).end(), x.row(row).begin());
            p.labels.push_back(labels[s][i]);
        }
    }
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j);
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x(i, j) -= mean[j];
    }

    p.coords = Matrix(n, 2);
    p.components = Matrix(2, d);
    p.variance_ratio = {0.0, 0.0};
    const auto f = linalg::svd(x);
    double total = 0.0;
    for (double s : f.singular_values) total += s * s;
    const double scale = std::max(1.0, frobenius_norm(x));
    if (total <= 1e-24 * scale * scale || f.singular_values.empty() || f.singular_values.front() == 0.0) {
        p.warnings.push_back("project_2d: all points identical; coordinates are zero");
        return p;
    }
    for (std::size_t k = 0; k < 2; ++k) {
        const double s = k < f.singular_values.size() ? f.singular_values[k] : 0.0;
        p.variance_ratio[k] = s * s / total;
        std::size_t arg = 0;
        for (std::size_t j = 0; j < d; ++j) {
            if (std::abs(f.vt(k, j)) > std::abs(f.vt(k, arg))) arg = j;
        }
        const double sign = f.vt(k, arg) < 0.0 ? -1.0 : 1.0;
        for (std::size_t j = 0; j < d; ++j) p.components(k, j) = sign * f.vt(k, j);
    }
    p.coords = matmul_nt(x, p.components);
    return p;
}

void write_projection_csv(const Projection& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.precision(17);
    out << "x,y,label\n";
    for (std::size_t i = 0; i < p.coords.rows(); ++i) {
        out << p.coords(i, 0) << ',' << p.coords(i, 1) << ',' << p.labels[i] << '\n';
    }
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_queries_csv(const RetrievalReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.precision(17);
    out << "query,ap\n";
    for (std::size_t i = 0; i < r.ap.size(); ++i) out << r.query_index[i] << ',' << r.ap[i] << '\n';
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

nlohmann::json summary_json(const RetrievalReport& r, std::uint64_t seed, const std::string& arm) {
    return {{"flow", r.flow},     {"map", r.map_score}, {"n_queries", r.num_queries},
            {"seed", seed},       {"arm", arm},         {"relevance", r.relevance},
            {"excluded", r.excluded}};
}

config::ExperimentConfig apply_arm(const config::ExperimentConfig& c, const std::string& arm) {
    config::ExperimentConfig out = c;
    if (arm == "full") {
    } else if (arm == "no_fro") {
        out.weights.fro = 0.0;
    } else if (arm == "no_cons") {
        out.weights.sym = 0.0;
    } else if (arm == "no_mox") {
        out.weights.mox = 0.0;
    } else if (arm == "clip_only") {
        out.weights.mox = 0.0;
        out.weights.sym = 0.0;
    } else {
        throw ConfigError("unknown ablation arm '" + arm + "' (expected full, no_fro, no_cons, no_mox, clip_only)");
    }
    return out;
}

std::vector<double> AblationTable::maps(const std::string& arm) const {
    std::vector<double> v;
    for (const auto& r : rows) {
        if (r.arm == arm) v.push_back(r.report.map_score);
    }
    return v;
}

double AblationTable::mean(const std::string& arm) const {
    const auto v = maps(arm);
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double AblationTable::stddev(const std::string& arm) const {
    const auto v = maps(arm);
    if (v.size() < 2) return 0.0;
    const double m = mean(arm);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

nlohmann::json AblationTable::to_json() const {
    nlohmann::json runs = nlohmann::json::array();
    std::vector<std::string> arms;
    for (const auto& r : rows) {
        runs.push_back({{"arm", r.arm}, {"seed", r.seed}, {"map", r.report.map_score}, {"flow", r.report.flow}});
        if (std::find(arms.begin(), arms.end(), r.arm) == arms.end()) arms.push_back(r.arm);
    }
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& a : arms) {
        summary.push_back({{"arm", a}, {"mean", mean(a)}, {"std", stddev(a)}, {"n", maps(a).size()}});
    }
    return {{"runs", runs}, {"summary", summary}};
}

std::string AblationTable::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "arm,seed,flow,map\n";
    for (const auto& r : rows) out << r.arm << ',' << r.seed << ',' << r.report.flow << ',' << r.report.map_score << '\n';
    return out.str();
}

AblationTable run_ablation(const config::ExperimentConfig& c, const std::vector<std::string>& arms,
                           const std::vector<std::uint64_t>& seeds,
                           const std::function<void(const AblationRow&)>& progress) {
    for (const auto& a : arms) (void)apply_arm(c, a);
    const std::string flow = c.flows.empty() ? default_flow(c) : c.flows.front();
    AblationTable t;
    for (std::uint64_t seed : seeds) {
        const auto data = config::generate_all(c, seed);
        for (const auto& arm : arms) {
            const auto ca = apply_arm(c, arm);
            const auto res = trainer::train_any(ca, seed, data);
            AblationRow row{arm, seed, evaluate_flow(res.encoders, parse_flow(flow), data)};
            if (progress) progress(row);
            t.rows.push_back(std::move(row));
        }
    }
    return t;
}

} // namespace bb::eval
