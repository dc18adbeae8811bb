// SPDX-License-Identifier: Apache-2.0
#pragma once

// Modality extrapolation: mixup-style interpolation, multi-extrapolation by a
// weight matrix, pseudo-inverse transition matrices over a pivot modality,
// and the pseudo embeddings they produce for a missing target modality.
//
// Notation used in comments: dataset 1 observes the pivot b and the given
// modality a; dataset 2 observes b and the target c. All matrices are
// batch-local and share the same row count B.

#include <span>
#include <string>
#include <vector>

#include "brokenbind/linalg.hpp"
#include "brokenbind/tape.hpp"

namespace bb::xtrap {

enum class TransitionKind { cross_modal, cross_data };

struct TransitionMatrix {
    TransitionKind kind = TransitionKind::cross_modal;
    Matrix w; // B×B
    std::string source;
    std::string destination;
    bool frozen = true;
};

enum class PseudoPath { x_mod, x_data };

struct PseudoEmbeddings {
    PseudoPath path = PseudoPath::x_data;
    std::string dataset;
    std::string modality;
    Matrix values; // B×d, not renormalized
};

/// Extrapolation weights; entries may lie outside [0, 1].
struct MixWeights {
    Matrix w;
};

/// λ·f1 + (1 − λ)·f2 for any real λ.
std::vector<double> interpolate(std::span<const double> f1, std::span<const double> f2,
                                double lambda);

/// W·F.
Matrix multi_extrapolate(const MixWeights& w, const Matrix& f);

/// c2 · pinv(b2): maps pivot rows of the source batch to target rows.
TransitionMatrix cross_modal_transition(const Matrix& f_target_src, const Matrix& f_pivot_src,
                                        std::string source = "pivot",
                                        std::string destination = "target");
/// b1 · pinv(b2): maps source-dataset instances to destination-dataset instances.
TransitionMatrix cross_data_transition(const Matrix& f_pivot_dst, const Matrix& f_pivot_src,
                                       std::string source = "src", std::string destination = "dst");

/// W^{b-c} · b1.
PseudoEmbeddings pseudo_embed_x_mod(const TransitionMatrix& cross_modal, const Matrix& f_pivot_dst);
/// W^{2-1} · c2. Row i is the multi-extrapolation of the target rows with
/// weights b1ᵢ · pinv(b2).
PseudoEmbeddings pseudo_embed_x_data(const TransitionMatrix& cross_data, const Matrix& f_target_src);

/// Inputs for binding across three datasets: dataset 1 observes only a,
/// dataset 2 observes (a, b), dataset 3 observes (b, c).
struct ChainInputs {
    Matrix f_a1;
    Matrix f_a2;
    Matrix f_b2;
    Matrix f_b3;
    Matrix f_c3;
};

struct ChainResult {
    PseudoEmbeddings b1_x_mod;
    PseudoEmbeddings b1_x_data; // intermediate pivot for the second step
    PseudoEmbeddings c1_x_mod;
    PseudoEmbeddings c1_x_data;
};

/// Two-step extrapolation: infer b for dataset 1 from dataset 2, then use the
/// X-data estimate of b1 as the pivot against dataset 3 to infer c.
ChainResult chain_extrapolate(const ChainInputs& in);

/// Stop-gradient policy for pseudo-inverses recorded on a tape.
enum class PinvGrad { frozen, differentiable };

/// Both pseudo-embedding variants recorded on a tape.
struct PseudoPairVars {
    diffnet::Var x_mod;
    diffnet::Var x_data;
};

/// x_mod = target_src · pinv(pivot_src) · pivot_dst,
/// x_data = pivot_dst · pinv(pivot_src) · target_src.
/// Throws ShapeError unless all three share one row count.
PseudoPairVars pseudo_pair(diffnet::Var pivot_dst, diffnet::Var pivot_src, diffnet::Var target_src,
                           PinvGrad mode = PinvGrad::frozen);

/// Same, with a caller-supplied constant standing in for pinv(pivot_src).
PseudoPairVars pseudo_pair_with(diffnet::Var pivot_dst, diffnet::Var pivot_pinv,
                                diffnet::Var target_src);

} // namespace bb::xtrap
