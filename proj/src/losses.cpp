// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/losses.hpp"

#include "brokenbind/errors.hpp"

namespace bb::losses {

using diffnet::Tape;
using diffnet::Var;

void LossWeights::validate() const {
    if (clip < 0 || sym < 0 || mox < 0 || fro < 0) {
        throw ConfigError("loss weights must be nonnegative");
    }
}

double weighted_total(const LossReport& r, const LossWeights& w) {
    return w.clip * r.clip + w.sym * (r.sym_cross_modal + r.sym_cross_data) +
           w.mox * (r.mox_contrastive + w.fro * r.fro_reg);
}

namespace {

void require_tau(double tau) {
    if (!(tau > 0.0)) throw ContractError("temperature tau must be > 0");
}

void require_rows(const Side& a, const Side& b, const char* what) {
    const Matrix& x = a.f.value();
    const Matrix& y = b.f.value();
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + x.shape_string() + " vs " +
                         y.shape_string());
    }
}

// Σᵢ (lseⱼ Lᵢⱼ − Lᵢᵢ) for logits L of a square similarity block.
Var infonce_sum(Var logits) {
    return diffnet::sum(diffnet::sub(diffnet::row_logsumexp(logits), diffnet::diag(logits)));
}

Var logits(const Side& x, const Side& y, double tau) {
    return diffnet::scale(diffnet::matmul_nt(x.f, y.f), x.scale * y.scale / tau);
}

Var plus(Var a, Var b) { return diffnet::add(a, b); }

} // namespace

Var clip_one_side(const Side& anchor, const Side& positive, std::span<const Side> others,
                  double tau) {
    require_tau(tau);
    require_rows(anchor, positive, "clip_one_side");
    for (const Side& o : others) require_rows(anchor, o, "clip_one_side (negatives)");
    const double b = static_cast<double>(anchor.f.value().rows());
    const double norm = 1.0 / ((1.0 + static_cast<double>(others.size())) * b);

    Var acc = infonce_sum(logits(anchor, positive, tau));
    for (const Side& o : others) {
        acc = plus(acc, diffnet::sum(diffnet::row_logsumexp(logits(anchor, o, tau))));
    }
    return diffnet::scale(acc, norm);
}

Var sym_cross_modal(Var fa, Var fb) {
    require_rows({fa}, {fb}, "sym_cross_modal");
    const double b = static_cast<double>(fa.value().rows());
    Var s = diffnet::matmul_nt(fa, fb);
    return diffnet::scale(diffnet::frobenius_sq(diffnet::sub(s, diffnet::transpose(s))), 1.0 / b);
}

Var sym_cross_data(Var fa, Var fb) {
    require_rows({fa}, {fb}, "sym_cross_data");
    const double b = static_cast<double>(fa.value().rows());
    Var ga = diffnet::matmul_nt(fa, fa);
    Var gb = diffnet::matmul_nt(fb, fb);
    return diffnet::scale(diffnet::frobenius_sq(diffnet::sub(ga, gb)), 1.0 / b);
}

MoxVars mox_one_target(std::span<const Side> given, const xtrap::PseudoPairVars& pseudo,
                       double pseudo_scale, double tau) {
    require_tau(tau);
    if (given.empty()) throw ContractError("mox_one_target: no given sides");
    const Side p{diffnet::normalize_rows(pseudo.x_data), pseudo_scale};
    for (const Side& g : given) require_rows(g, p, "mox_one_target");
    const double b = static_cast<double>(p.f.value().rows());

    Var acc = infonce_sum(logits(given[0], p, tau));
    for (std::size_t k = 1; k < given.size(); ++k) acc = plus(acc, infonce_sum(logits(given[k], p, tau)));
    MoxVars out;
    out.contrast = diffnet::scale(acc, 1.0 / (static_cast<double>(given.size()) * b));
    out.fro = diffnet::frobenius_sq(diffnet::sub(pseudo.x_mod, pseudo.x_data));
    return out;
}

ObjectiveVars two_dataset_objective(Tape& tape, const FourSides& s, const ObjectiveOptions& opt) {
    opt.weights.validate();
    ObjectiveVars v;
    auto key = [](const std::string& term, const std::string& m, const std::string& d) {
        return term + "/" + m + "@" + d;
    };

    const std::string outer = tape.scope();
    tape.set_scope("clip");
    const Side neg1[] = {s.b2, s.c2};
    const Side neg2[] = {s.a1, s.b1};
    Var l_a1 = clip_one_side(s.a1, s.b1, neg1, opt.tau);
    Var l_b1 = clip_one_side(s.b1, s.a1, neg1, opt.tau);
    Var l_b2 = clip_one_side(s.b2, s.c2, neg2, opt.tau);
    Var l_c2 = clip_one_side(s.c2, s.b2, neg2, opt.tau);
    v.per_side[key("clip", opt.mod_a, opt.data_1)] = l_a1;
    v.per_side[key("clip", opt.mod_b, opt.data_1)] = l_b1;
    v.per_side[key("clip", opt.mod_b, opt.data_2)] = l_b2;
    v.per_side[key("clip", opt.mod_c, opt.data_2)] = l_c2;
    v.clip = plus(plus(l_a1, l_b1), plus(l_b2, l_c2));

    tape.set_scope("sym");
    v.sym_cross_modal = plus(sym_cross_modal(s.a1.f, s.b1.f), sym_cross_modal(s.b2.f, s.c2.f));
    v.sym_cross_data = plus(sym_cross_data(s.a1.f, s.b1.f), sym_cross_data(s.b2.f, s.c2.f));

    Var total = diffnet::scale(v.clip, opt.weights.clip);
    if (opt.weights.sym != 0.0) {
        total = plus(total, diffnet::scale(plus(v.sym_cross_modal, v.sym_cross_data), opt.weights.sym));
    }

    if (opt.mox_enabled) {
        tape.set_scope("mox");
        xtrap::PseudoPairVars c1;
        xtrap::PseudoPairVars a2;
        if (!opt.frozen_pinv_override.empty()) {
            if (opt.frozen_pinv_override.size() != 2) {
                throw ContractError("frozen_pinv_override needs pinv(b2) and pinv(b1)");
            }
            c1 = xtrap::pseudo_pair_with(s.b1.f, tape.constant(opt.frozen_pinv_override[0], "pinv(frozen)"),
                                         s.c2.f);
            a2 = xtrap::pseudo_pair_with(s.b2.f, tape.constant(opt.frozen_pinv_override[1], "pinv(frozen)"),
                                         s.a1.f);
        } else {
            c1 = xtrap::pseudo_pair(s.b1.f, s.b2.f, s.c2.f, opt.pinv_grad);
            a2 = xtrap::pseudo_pair(s.b2.f, s.b1.f, s.a1.f, opt.pinv_grad);
        }
        const Side given_c1[] = {s.b1, s.a1};
        const Side given_a2[] = {s.b2, s.c2};
        MoxVars m_c1 = mox_one_target(given_c1, c1, s.c2.scale, opt.tau);
        MoxVars m_a2 = mox_one_target(given_a2, a2, s.a1.scale, opt.tau);
        v.per_side[key("mox", opt.mod_c, opt.data_1)] = m_c1.contrast;
        v.per_side[key("mox", opt.mod_a, opt.data_2)] = m_a2.contrast;
        v.per_side[key("fro", opt.mod_c, opt.data_1)] = m_c1.fro;
        v.per_side[key("fro", opt.mod_a, opt.data_2)] = m_a2.fro;
        v.mox = plus(m_c1.contrast, m_a2.contrast);
        v.fro = plus(m_c1.fro, m_a2.fro);
        v.has_mox = true;
        if (opt.weights.mox != 0.0) {
            Var mox_term = v.mox;
            if (opt.weights.fro != 0.0) mox_term = plus(mox_term, diffnet::scale(v.fro, opt.weights.fro));
            total = plus(total, diffnet::scale(mox_term, opt.weights.mox));
        }
    }
    tape.set_scope(outer);
    v.total = total;
    return v;
}

LossReport report_of(const ObjectiveVars& v, const LossWeights& w) {
    LossReport r;
    r.clip = v.clip.scalar();
    r.sym_cross_modal = v.sym_cross_modal.scalar();
    r.sym_cross_data = v.sym_cross_data.scalar();
    if (v.has_mox) {
        r.mox_contrastive = v.mox.scalar();
        r.fro_reg = v.fro.scalar();
    }
    r.total = v.total.scalar();
    for (const auto& [k, var] : v.per_side) r.per_side[k] = var.scalar();
    (void)w;
    return r;
}

// ---- value-level API -------------------------------------------------------

double clip_loss_one_side(const EmbeddingMatrix& anchor, const EmbeddingMatrix& positive,
                          const std::vector<EmbeddingMatrix>& other_dataset_mods, double tau) {
    Tape t;
    std::vector<Side> others;
    for (const auto& o : other_dataset_mods) others.push_back({t.constant(o.matrix())});
    return clip_one_side({t.constant(anchor.matrix())}, {t.constant(positive.matrix())}, others, tau)
        .scalar();
}

namespace {

FourSides constants(Tape& t, const FourEmbeddings& e) {
    return {{t.constant(e.a1.matrix())},
            {t.constant(e.b1.matrix())},
            {t.constant(e.b2.matrix())},
            {t.constant(e.c2.matrix())}};
}

} // namespace

double total_clip_loss(const FourEmbeddings& e, double tau) {
    Tape t;
    ObjectiveOptions opt;
    opt.tau = tau;
    opt.mox_enabled = false;
    return two_dataset_objective(t, constants(t, e), opt).clip.scalar();
}

double sym_cross_modal(const EmbeddingMatrix& fa, const EmbeddingMatrix& fb) {
    Tape t;
    return sym_cross_modal(t.constant(fa.matrix()), t.constant(fb.matrix())).scalar();
}

double sym_cross_data(const EmbeddingMatrix& fa, const EmbeddingMatrix& fb) {
    Tape t;
    return sym_cross_data(t.constant(fa.matrix()), t.constant(fb.matrix())).scalar();
}

double total_sym_loss(const FourEmbeddings& e) {
    return sym_cross_modal(e.a1, e.b1) + sym_cross_data(e.a1, e.b1) + sym_cross_modal(e.b2, e.c2) +
           sym_cross_data(e.b2, e.c2);
}

namespace {

MoxVars mox_on(Tape& t, const EmbeddingMatrix& given1, const EmbeddingMatrix& given2,
               const xtrap::PseudoEmbeddings& pseudo, const xtrap::PseudoEmbeddings& x_mod,
               double tau) {
    if (pseudo.path != xtrap::PseudoPath::x_data) {
        throw ContractError("mox_loss_one_target: contrast uses the X-data pseudo embeddings");
    }
    require_same_shape(x_mod.values, pseudo.values, "mox_loss_one_target");
    const Side given[] = {{t.constant(given1.matrix())}, {t.constant(given2.matrix())}};
    xtrap::PseudoPairVars pair{t.constant(x_mod.values), t.constant(pseudo.values)};
    return mox_one_target(given, pair, 1.0, tau);
}

} // namespace

double mox_loss_one_target(const EmbeddingMatrix& given1, const EmbeddingMatrix& given2,
                           const xtrap::PseudoEmbeddings& pseudo,
                           const xtrap::PseudoEmbeddings& x_mod,
                           const xtrap::PseudoEmbeddings& x_data, double tau, double w_fro) {
    require_same_shape(x_data.values, pseudo.values, "mox_loss_one_target");
    Tape t;
    MoxVars m = mox_on(t, given1, given2, pseudo, x_mod, tau);
    const double fro = linalg::frobenius_sq(x_mod.values - x_data.values);
    return m.contrast.scalar() + w_fro * fro;
}

LossReport total_objective(const FourEmbeddings& e, const PseudoSet& c1, const PseudoSet& a2,
                           double tau, const LossWeights& w) {
    w.validate();
    LossReport r;
    r.clip = total_clip_loss(e, tau);
    r.sym_cross_modal = sym_cross_modal(e.a1, e.b1) + sym_cross_modal(e.b2, e.c2);
    r.sym_cross_data = sym_cross_data(e.a1, e.b1) + sym_cross_data(e.b2, e.c2);
    Tape t;
    const MoxVars mc = mox_on(t, e.b1, e.a1, c1.x_data, c1.x_mod, tau);
    const MoxVars ma = mox_on(t, e.b2, e.c2, a2.x_data, a2.x_mod, tau);
    r.mox_contrastive = mc.contrast.scalar() + ma.contrast.scalar();
    r.fro_reg = mc.fro.scalar() + ma.fro.scalar();
    r.total = weighted_total(r, w);
    return r;
}

} // namespace bb::losses
