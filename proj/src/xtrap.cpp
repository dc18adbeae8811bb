// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/xtrap.hpp"

#include "brokenbind/errors.hpp"

namespace bb::xtrap {
namespace {

void require_batch(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows()) {
        throw ShapeError(std::string(what) + ": batch-size mismatch (" + std::to_string(a.rows()) +
                         " vs " + std::to_string(b.rows()) + " rows)");
    }
    if (a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": embedding dims differ (" + a.shape_string() +
                         " vs " + b.shape_string() + ")");
    }
}

} // namespace

std::vector<double> interpolate(std::span<const double> f1, std::span<const double> f2,
                                double lambda) {
    if (f1.size() != f2.size()) {
        throw ShapeError("interpolate: dims " + std::to_string(f1.size()) + " vs " +
                         std::to_string(f2.size()));
    }
    std::vector<double> out(f1.size());
    for (std::size_t i = 0; i < f1.size(); ++i) out[i] = lambda * f1[i] + (1.0 - lambda) * f2[i];
    return out;
}

Matrix multi_extrapolate(const MixWeights& w, const Matrix& f) {
    if (!w.w.all_finite()) throw NumericalError("multi_extrapolate: non-finite weights");
    if (w.w.cols() != f.rows()) {
        throw ShapeError("multi_extrapolate: weights " + w.w.shape_string() + " vs features " +
                         f.shape_string());
    }
    return matmul(w.w, f);
}

TransitionMatrix cross_modal_transition(const Matrix& f_target_src, const Matrix& f_pivot_src,
                                        std::string source, std::string destination) {
    require_batch(f_target_src, f_pivot_src, "cross_modal_transition");
    return {TransitionKind::cross_modal, matmul(f_target_src, linalg::pinv(f_pivot_src)),
            std::move(source), std::move(destination), true};
}

TransitionMatrix cross_data_transition(const Matrix& f_pivot_dst, const Matrix& f_pivot_src,
                                       std::string source, std::string destination) {
    require_batch(f_pivot_dst, f_pivot_src, "cross_data_transition");
    return {TransitionKind::cross_data, matmul(f_pivot_dst, linalg::pinv(f_pivot_src)),
            std::move(source), std::move(destination), true};
}

PseudoEmbeddings pseudo_embed_x_mod(const TransitionMatrix& cross_modal, const Matrix& f_pivot_dst) {
    if (cross_modal.kind != TransitionKind::cross_modal) {
        throw ContractError("pseudo_embed_x_mod: expects a cross-modal transition");
    }
    if (cross_modal.w.cols() != f_pivot_dst.rows()) {
        throw ShapeError("pseudo_embed_x_mod: batch-size mismatch (transition " +
                         cross_modal.w.shape_string() + ", pivot " + f_pivot_dst.shape_string() + ")");
    }
    return {PseudoPath::x_mod, {}, {}, matmul(cross_modal.w, f_pivot_dst)};
}

PseudoEmbeddings pseudo_embed_x_data(const TransitionMatrix& cross_data, const Matrix& f_target_src) {
    if (cross_data.kind != TransitionKind::cross_data) {
        throw ContractError("pseudo_embed_x_data: expects a cross-data transition");
    }
    if (cross_data.w.cols() != f_target_src.rows() || cross_data.w.rows() != f_target_src.rows()) {
        throw ShapeError("pseudo_embed_x_data: batch-size mismatch (transition " +
                         cross_data.w.shape_string() + ", target " + f_target_src.shape_string() +
                         ")");
    }
    return {PseudoPath::x_data, {}, {}, multi_extrapolate(MixWeights{cross_data.w}, f_target_src)};
}

ChainResult chain_extrapolate(const ChainInputs& in) {
    require_batch(in.f_a1, in.f_a2, "chain_extrapolate (step 1)");
    require_batch(in.f_b2, in.f_a2, "chain_extrapolate (step 1)");
    require_batch(in.f_b3, in.f_c3, "chain_extrapolate (step 2)");
    require_batch(in.f_b3, in.f_b2, "chain_extrapolate (step 2)");

    ChainResult r;
    const auto w_ab = cross_modal_transition(in.f_b2, in.f_a2, "d2", "d1");
    const auto w_21 = cross_data_transition(in.f_a1, in.f_a2, "d2", "d1");
    r.b1_x_mod = pseudo_embed_x_mod(w_ab, in.f_a1);
    r.b1_x_data = pseudo_embed_x_data(w_21, in.f_b2);

    const auto w_bc = cross_modal_transition(in.f_c3, in.f_b3, "d3", "d1");
    const auto w_31 = cross_data_transition(r.b1_x_data.values, in.f_b3, "d3", "d1");
    r.c1_x_mod = pseudo_embed_x_mod(w_bc, r.b1_x_data.values);
    r.c1_x_data = pseudo_embed_x_data(w_31, in.f_c3);
    return r;
}

PseudoPairVars pseudo_pair_with(diffnet::Var pivot_dst, diffnet::Var pivot_pinv,
                                diffnet::Var target_src) {
    const Matrix& p = pivot_pinv.value();
    if (p.cols() != target_src.value().rows() || p.cols() != pivot_dst.value().rows()) {
        throw ShapeError("pseudo_pair: batch-size mismatch between datasets (" +
                         pivot_dst.value().shape_string() + ", pinv " + p.shape_string() + ", " +
                         target_src.value().shape_string() + ")");
    }
    PseudoPairVars out;
    out.x_mod = diffnet::matmul(diffnet::matmul(target_src, pivot_pinv), pivot_dst);
    out.x_data = diffnet::matmul(diffnet::matmul(pivot_dst, pivot_pinv), target_src);
    return out;
}

PseudoPairVars pseudo_pair(diffnet::Var pivot_dst, diffnet::Var pivot_src, diffnet::Var target_src,
                           PinvGrad mode) {
    require_batch(pivot_dst.value(), pivot_src.value(), "pseudo_pair");
    require_batch(target_src.value(), pivot_src.value(), "pseudo_pair");
    diffnet::Var p = mode == PinvGrad::frozen ? diffnet::pinv_frozen(pivot_src)
                                              : diffnet::pinv_differentiable(pivot_src);
    return pseudo_pair_with(pivot_dst, p, target_src);
}

} // namespace bb::xtrap
