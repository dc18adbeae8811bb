// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "brokenbind/errors.hpp"
#include "brokenbind/xtrap.hpp"
#include "support.hpp"

using namespace bb;
using namespace bb::xtrap;
using bbtest::naive_matmul;
using bbtest::random_matrix;

namespace {

// Least-squares weights for a wide, full-row-rank pivot: w = b1 b2ᵀ (b2 b2ᵀ)⁻¹.
Matrix lstsq_weights(const Matrix& b1, const Matrix& b2) {
    return naive_matmul(naive_matmul(b1, b2.transpose()), bbtest::inverse(naive_matmul(b2, b2.transpose())));
}

const std::vector<std::size_t> kPerm{2, 0, 3, 1};

} // namespace

TEST_CASE("interpolate and extrapolate") {
    const std::vector<double> f1{1.0, 0.0}, f2{0.0, 1.0};
    CHECK(interpolate(f1, f2, 1.0) == f1);
    CHECK(interpolate(f1, f2, 0.5) == std::vector<double>{0.5, 0.5});
    CHECK(interpolate(f1, f2, 1.5) == std::vector<double>{1.5, -0.5});
    CHECK(interpolate(f1, f2, -1.0) == std::vector<double>{-1.0, 2.0});
    CHECK_THROWS_AS(interpolate(f1, std::vector<double>{1.0}, 0.5), ShapeError);
}

TEST_CASE("multi-extrapolation is the matrix product") {
    const Matrix f = random_matrix(4, 6, 1);
    CHECK(multi_extrapolate({Matrix::identity(4)}, f) == f);
    const Matrix p = bbtest::permutation(kPerm);
    const Matrix pf = multi_extrapolate({p}, f);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) CHECK(pf(i, j) == f(kPerm[i], j));
    const Matrix w = random_matrix(3, 4, 2, 3.0);
    CHECK(max_abs_diff(multi_extrapolate({w}, f), naive_matmul(w, f)) < 1e-12);
    CHECK_THROWS_AS(multi_extrapolate({random_matrix(3, 5, 3)}, f), ShapeError);
}

TEST_CASE("transitions") {
    const Matrix b2 = random_matrix(4, 6, 4);
    const Matrix c2 = random_matrix(4, 6, 5);

    const auto self = cross_modal_transition(b2, b2);
    CHECK(self.kind == TransitionKind::cross_modal);
    CHECK(self.frozen);
    CHECK(max_abs_diff(self.w, Matrix::identity(4)) <= 1e-8);

    // Target rows inside the pivot's row space are reproduced exactly.
    const Matrix m = random_matrix(4, 4, 30);
    const auto w = cross_modal_transition(naive_matmul(m, b2), b2);
    CHECK(max_abs_diff(w.w, m) <= 1e-8);
    CHECK(max_abs_diff(matmul(w.w, b2), naive_matmul(m, b2)) <= 1e-8);
    // Otherwise the residual is orthogonal to the pivot rows.
    const auto g = cross_modal_transition(c2, b2);
    CHECK(max_abs_diff(naive_matmul(naive_matmul(g.w, b2) - c2, b2.transpose()), Matrix(4, 4)) <= 1e-8);

    const auto d_self = cross_data_transition(b2, b2);
    CHECK(d_self.kind == TransitionKind::cross_data);
    CHECK(max_abs_diff(d_self.w, Matrix::identity(4)) <= 1e-8);

    const Matrix p = bbtest::permutation(kPerm);
    CHECK(max_abs_diff(cross_data_transition(matmul(p, b2), b2).w, p) <= 1e-8);

    const Matrix b1 = random_matrix(4, 6, 6);
    CHECK(max_abs_diff(cross_data_transition(b1, b2).w, lstsq_weights(b1, b2)) <= 1e-8);

    CHECK_THROWS_AS(cross_modal_transition(random_matrix(3, 6, 1), b2), ShapeError);
}

TEST_CASE("rank-deficient pivot gives the minimum-norm least-squares transition") {
    // b2 = L R with L 4×2 and R 2×6, so b2⁺ = Rᵀ(RRᵀ)⁻¹(LᵀL)⁻¹Lᵀ.
    const Matrix l = random_matrix(4, 2, 7);
    const Matrix r = random_matrix(2, 6, 8);
    const Matrix b2 = naive_matmul(l, r);
    const Matrix b2_pinv = naive_matmul(naive_matmul(r.transpose(), bbtest::inverse(naive_matmul(r, r.transpose()))),
                                        naive_matmul(bbtest::inverse(naive_matmul(l.transpose(), l)), l.transpose()));
    const Matrix c2 = random_matrix(4, 6, 9);
    const auto w = cross_modal_transition(c2, b2);
    CHECK(w.w.all_finite());
    CHECK(max_abs_diff(w.w, naive_matmul(c2, b2_pinv)) <= 1e-8);
    // Normal equations: (W b2 − c2) b2ᵀ = 0.
    CHECK(max_abs_diff(naive_matmul(naive_matmul(w.w, b2) - c2, b2.transpose()), Matrix(4, 4)) <= 1e-8);
}

TEST_CASE("X-mod pseudo embeddings") {
    const Matrix b2 = random_matrix(4, 6, 10);
    const Matrix c2 = random_matrix(4, 6, 11);
    const auto xm = pseudo_embed_x_mod(cross_modal_transition(c2, b2), b2);
    CHECK(xm.path == PseudoPath::x_mod);
    // Projection of c2 rows onto the row space of b2.
    const Matrix proj = naive_matmul(b2.transpose(), bbtest::inverse(naive_matmul(b2, b2.transpose())));
    CHECK(max_abs_diff(xm.values, naive_matmul(c2, naive_matmul(proj, b2))) <= 1e-8);

    const Matrix sq = random_matrix(5, 5, 12);
    const Matrix c_sq = random_matrix(5, 5, 13);
    CHECK(max_abs_diff(pseudo_embed_x_mod(cross_modal_transition(c_sq, sq), sq).values, c_sq) <= 1e-8);

    const Matrix b1 = random_matrix(4, 6, 14);
    const Matrix b2p = linalg::pinv(b2);
    CHECK(max_abs_diff(matmul(matmul(c2, b2p), b1), matmul(c2, matmul(b2p, b1))) <= 1e-10);

    CHECK_THROWS_AS(pseudo_embed_x_mod(cross_modal_transition(c2, b2), random_matrix(3, 6, 1)), ShapeError);
    CHECK_THROWS_AS(pseudo_embed_x_mod(cross_data_transition(c2, b2), b1), ContractError);
}

TEST_CASE("X-data pseudo embeddings") {
    const Matrix b2 = random_matrix(4, 6, 15);
    const Matrix c2 = random_matrix(4, 6, 16);
    const auto same = pseudo_embed_x_data(cross_data_transition(b2, b2), c2);
    CHECK(same.path == PseudoPath::x_data);
    CHECK(max_abs_diff(same.values, c2) <= 1e-10);

    const Matrix p = bbtest::permutation(kPerm);
    CHECK(max_abs_diff(pseudo_embed_x_data(cross_data_transition(matmul(p, b2), b2), c2).values, matmul(p, c2)) <=
          1e-10);

    // Least-squares weights per row, then mix the target rows.
    const Matrix b1 = random_matrix(4, 6, 17);
    const Matrix mixed = naive_matmul(lstsq_weights(b1, b2), c2);
    CHECK(max_abs_diff(pseudo_embed_x_data(cross_data_transition(b1, b2), c2).values, mixed) <= 1e-8);

    CHECK_THROWS_AS(pseudo_embed_x_data(cross_data_transition(b1, b2), random_matrix(5, 6, 1)), ShapeError);
}

TEST_CASE("both paths are linear in the target") {
    const Matrix b1 = random_matrix(4, 6, 18), b2 = random_matrix(4, 6, 19), c2 = random_matrix(4, 6, 20);
    const double alpha = -2.5;
    const Matrix ac2 = alpha * c2;
    CHECK(max_abs_diff(pseudo_embed_x_data(cross_data_transition(b1, b2), ac2).values,
                       alpha * pseudo_embed_x_data(cross_data_transition(b1, b2), c2).values) <= 1e-12);
    CHECK(max_abs_diff(pseudo_embed_x_mod(cross_modal_transition(ac2, b2), b1).values,
                       alpha * pseudo_embed_x_mod(cross_modal_transition(c2, b2), b1).values) <= 1e-12);
}

TEST_CASE("chained extrapolation across three datasets") {
    const Matrix a2 = random_matrix(4, 6, 21), b2 = random_matrix(4, 6, 22), c3 = random_matrix(4, 6, 23);

    SUBCASE("identical pivots recover the final target") {
        const auto r = chain_extrapolate({a2, a2, b2, b2, c3});
        CHECK(max_abs_diff(r.b1_x_data.values, b2) <= 1e-8);
        CHECK(max_abs_diff(r.c1_x_data.values, c3) <= 1e-8);
    }
    SUBCASE("permutations compose") {
        const Matrix p = bbtest::permutation(kPerm);
        const Matrix q = bbtest::permutation({1, 3, 0, 2});
        const Matrix b3 = random_matrix(4, 6, 24);
        const Matrix b2q = matmul(q, b3);
        const auto r = chain_extrapolate({matmul(p, a2), a2, b2q, b3, c3});
        CHECK(max_abs_diff(r.c1_x_data.values, matmul(matmul(p, q), c3)) <= 1e-8);
    }
    SUBCASE("equals two X-data steps") {
        const Matrix a1 = random_matrix(4, 6, 25), b3 = random_matrix(4, 6, 26);
        const auto r = chain_extrapolate({a1, a2, b2, b3, c3});
        const Matrix step1 = pseudo_embed_x_data(cross_data_transition(a1, a2), b2).values;
        const Matrix step2 = pseudo_embed_x_data(cross_data_transition(step1, b3), c3).values;
        CHECK(max_abs_diff(r.c1_x_data.values, step2) <= 1e-10);
        CHECK(max_abs_diff(r.c1_x_mod.values, pseudo_embed_x_mod(cross_modal_transition(c3, b3), step1).values) <=
              1e-10);
    }
    CHECK_THROWS_AS(chain_extrapolate({a2, a2, b2, random_matrix(3, 6, 1), c3}), ShapeError);
}

TEST_CASE("pseudo pairs on a tape") {
    diffnet::Tape t;
    const Matrix b1 = random_matrix(4, 6, 27), b2 = random_matrix(4, 6, 28), c2 = random_matrix(4, 6, 29);
    const auto vars = pseudo_pair(t.constant(b1), t.constant(b2), t.constant(c2));
    CHECK(max_abs_diff(vars.x_data.value(), pseudo_embed_x_data(cross_data_transition(b1, b2), c2).values) <= 1e-12);
    CHECK(max_abs_diff(vars.x_mod.value(), pseudo_embed_x_mod(cross_modal_transition(c2, b2), b1).values) <= 1e-12);
    CHECK_THROWS_AS(pseudo_pair(t.constant(b1), t.constant(random_matrix(3, 6, 2)), t.constant(c2)), ShapeError);
}
