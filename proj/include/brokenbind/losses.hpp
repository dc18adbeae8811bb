// SPDX-License-Identifier: Apache-2.0
#pragma once

// Objective terms for binding across two datasets that share a pivot
// modality: the cross-dataset CLIP loss, the two CyCLIP symmetry penalties,
// the modality-extrapolation (MOX) contrast with its Frobenius consistency
// regularizer, and their weighted total.
//
// Every term is built on a diffnet::Tape so the trainer can backpropagate
// through it; the Matrix-valued overloads evaluate the same graph once.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "brokenbind/linalg.hpp"
#include "brokenbind/tape.hpp"
#include "brokenbind/xtrap.hpp"

namespace bb::losses {

/// One batch side on a tape with its modality's similarity multiplier.
struct Side {
    diffnet::Var f;
    double scale = 1.0;
};

struct LossWeights {
    double clip = 1.0;
    double sym = 1.0;
    double mox = 1.0;
    double fro = 1.0;

    void validate() const;
};

struct LossReport {
    double clip = 0.0;
    double sym_cross_modal = 0.0;
    double sym_cross_data = 0.0;
    double mox_contrastive = 0.0;
    double fro_reg = 0.0;
    double total = 0.0;
    /// Keyed like "clip/te@d1" or "mox/ta@d1".
    std::map<std::string, double> per_side;
};

/// w_clip·clip + w_sym·(sym_cm + sym_cd) + w_mox·(mox + w_fro·fro).
double weighted_total(const LossReport& r, const LossWeights& w);

// ---- tape-level terms ------------------------------------------------------

/// Anchor pulled toward its within-dataset partner and pushed from every row
/// of each other-dataset matrix. With K matrices in `others` the result is
///   1/((1+K)B) · [ Σᵢ (lseⱼ sᵢⱼ⁺ − sᵢᵢ⁺) + Σₒ Σᵢ lseₖ sᵢₖ° ]
/// where s = scale_x · scale_y · ⟨·,·⟩ / τ.
diffnet::Var clip_one_side(const Side& anchor, const Side& positive, std::span<const Side> others,
                           double tau);

/// (1/B) Σᵢⱼ (⟨aᵢ,bⱼ⟩ − ⟨aⱼ,bᵢ⟩)²
diffnet::Var sym_cross_modal(diffnet::Var fa, diffnet::Var fb);
/// (1/B) Σᵢⱼ (⟨aᵢ,aⱼ⟩ − ⟨bᵢ,bⱼ⟩)²
diffnet::Var sym_cross_data(diffnet::Var fa, diffnet::Var fb);

struct MoxVars {
    diffnet::Var contrast;
    diffnet::Var fro;
};

/// Contrast of each given side against the cosine-normalized X-data pseudo
/// embeddings, averaged as 1/(G·B) over G given sides, plus the squared
/// Frobenius gap between the X-mod and X-data variants (returned separately).
MoxVars mox_one_target(std::span<const Side> given, const xtrap::PseudoPairVars& pseudo,
                       double pseudo_scale, double tau);

/// The four encoded sides of a two-dataset batch: dataset 1 observes (a, b),
/// dataset 2 observes (b, c); b is the pivot.
struct FourSides {
    Side a1;
    Side b1;
    Side b2;
    Side c2;
};

struct ObjectiveVars {
    diffnet::Var clip;
    diffnet::Var sym_cross_modal;
    diffnet::Var sym_cross_data;
    diffnet::Var mox;
    diffnet::Var fro;
    diffnet::Var total;
    bool has_mox = false;
    std::map<std::string, diffnet::Var> per_side;
};

struct ObjectiveOptions {
    double tau = 0.07;
    LossWeights weights;
    /// Pseudo embeddings and the MOX terms are built only when true.
    bool mox_enabled = true;
    xtrap::PinvGrad pinv_grad = xtrap::PinvGrad::frozen;
    /// When non-empty, used instead of pinv(b2) and pinv(b1) (in that order);
    /// lets a finite-difference oracle hold the pseudo-inverses fixed.
    std::vector<Matrix> frozen_pinv_override;
    /// Labels for per_side keys.
    std::string mod_a = "a", mod_b = "b", mod_c = "c", data_1 = "d1", data_2 = "d2";
};

/// Total CLIP + symmetry + MOX objective on one two-dataset batch.
ObjectiveVars two_dataset_objective(diffnet::Tape& tape, const FourSides& s,
                                    const ObjectiveOptions& opt);

LossReport report_of(const ObjectiveVars& v, const LossWeights& w);

// ---- value-level API -------------------------------------------------------

double clip_loss_one_side(const EmbeddingMatrix& anchor, const EmbeddingMatrix& positive,
                          const std::vector<EmbeddingMatrix>& other_dataset_mods, double tau);

struct FourEmbeddings {
    EmbeddingMatrix a1;
    EmbeddingMatrix b1;
    EmbeddingMatrix b2;
    EmbeddingMatrix c2;
};

/// L(a1) + L(b1) + L(b2) + L(c2); each side's positive is its
/// within-dataset partner and its negatives are both other-dataset sides.
double total_clip_loss(const FourEmbeddings& e, double tau);

double sym_cross_modal(const EmbeddingMatrix& fa, const EmbeddingMatrix& fb);
double sym_cross_data(const EmbeddingMatrix& fa, const EmbeddingMatrix& fb);
/// X-mod(a1,b1) + X-data(a1,b1) + X-mod(b2,c2) + X-data(b2,c2).
double total_sym_loss(const FourEmbeddings& e);

/// Contrast of `given1` and `given2` against `pseudo` plus
/// w_fro · ‖x_mod − x_data‖²_F.
double mox_loss_one_target(const EmbeddingMatrix& given1, const EmbeddingMatrix& given2,
                           const xtrap::PseudoEmbeddings& pseudo,
                           const xtrap::PseudoEmbeddings& x_mod,
                           const xtrap::PseudoEmbeddings& x_data, double tau, double w_fro);

struct PseudoSet {
    xtrap::PseudoEmbeddings x_mod;
    xtrap::PseudoEmbeddings x_data;
};

/// Weighted objective from precomputed sides and pseudo embeddings for both
/// targets (c in dataset 1, a in dataset 2).
LossReport total_objective(const FourEmbeddings& e, const PseudoSet& c1, const PseudoSet& a2,
                           double tau, const LossWeights& w);

} // namespace bb::losses
