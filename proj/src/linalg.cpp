// SPDX-License-Identifier: Apache-2.0
#include "brokenbind/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "brokenbind/errors.hpp"

namespace bb {

EmbeddingMatrix::EmbeddingMatrix(Matrix values) : values_(std::move(values)) {
    for (std::size_t i = 0; i < values_.rows(); ++i) {
        double n2 = 0.0;
        for (double v : values_.row(i)) n2 += v * v;
        if (std::abs(std::sqrt(n2) - 1.0) > kUnitTolerance) {
            throw ContractError("EmbeddingMatrix: row " + std::to_string(i) +
                                " is not unit norm (norm " + std::to_string(std::sqrt(n2)) + ")");
        }
    }
}

EmbeddingMatrix EmbeddingMatrix::normalized(Matrix values) {
    for (std::size_t i = 0; i < values.rows(); ++i) {
        auto r = values.row(i);
        double n2 = 0.0;
        for (double v : r) n2 += v * v;
        if (!(n2 > 0.0)) {
            throw DegenerateEmbeddingError("EmbeddingMatrix::normalized: row " + std::to_string(i) +
                                           " is zero");
        }
        const double inv = 1.0 / std::sqrt(n2);
        for (double& v : r) v *= inv;
    }
    return EmbeddingMatrix(std::move(values));
}

namespace linalg {
namespace {

constexpr int kMaxSweeps = 80;

// One-sided Jacobi on the columns of a tall matrix. `cols` holds the columns
// of A as rows (n×m); on return they are the columns of U·Σ and `v` (n×n,
// also stored row-per-column) accumulates the right rotations.
void jacobi_orthogonalize(Matrix& cols, Matrix& v, std::size_t m_rows, std::size_t n_cols) {
    // Columns count as orthogonal below m·eps relative coherence.
    const double tol = static_cast<double>(std::max<std::size_t>(m_rows, 1)) *
                       std::numeric_limits<double>::epsilon();
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n_cols; ++p) {
            for (std::size_t q = p + 1; q < n_cols; ++q) {
                auto cp = cols.row(p);
                auto cq = cols.row(q);
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t i = 0; i < m_rows; ++i) {
                    alpha += cp[i] * cp[i];
                    beta += cq[i] * cq[i];
                    gamma += cp[i] * cq[i];
                }
                if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::hypot(1.0, t);
                const double s = c * t;
                for (std::size_t i = 0; i < m_rows; ++i) {
                    const double xp = cp[i];
                    const double xq = cq[i];
                    cp[i] = c * xp - s * xq;
                    cq[i] = s * xp + c * xq;
                }
                auto vp = v.row(p);
                auto vq = v.row(q);
                for (std::size_t i = 0; i < n_cols; ++i) {
                    const double xp = vp[i];
                    const double xq = vq[i];
                    vp[i] = c * xp - s * xq;
                    vq[i] = s * xp + c * xq;
                }
            }
        }
        if (!rotated) return;
    }
    throw NumericalError("svd: Jacobi sweeps did not converge for " + std::to_string(n_cols) +
                         "x" + std::to_string(m_rows) + " (transposed) input");
}

// Thin SVD of a tall (m ≥ n) matrix given as its transpose `at` (n×m).
SvdFactors svd_tall(const Matrix& at) {
    const std::size_t n = at.rows();
    const std::size_t m = at.cols();
    Matrix cols = at;
    Matrix v = Matrix::identity(n);
    jacobi_orthogonalize(cols, v, m, n);

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (double x : cols.row(j)) s += x * x;
        norms[j] = std::sqrt(s);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

    SvdFactors f;
    f.singular_values.resize(n);
    f.u = Matrix(m, n);
    f.vt = Matrix(n, n);
    const double s_max = n > 0 ? norms[order[0]] : 0.0;
    const double null_cut =
        static_cast<double>(std::max(m, n)) * std::numeric_limits<double>::epsilon() * s_max;

    std::vector<bool> filled(n, false);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        f.singular_values[k] = norms[j];
        auto vrow = v.row(j);
        std::copy(vrow.begin(), vrow.end(), f.vt.row(k).begin());
        if (norms[j] > null_cut && norms[j] > 0.0) {
            auto c = cols.row(j);
            for (std::size_t i = 0; i < m; ++i) f.u(i, k) = c[i] / norms[j];
            filled[k] = true;
        }
    }
    // Complete U for null directions by Gram–Schmidt against the standard basis.
    std::size_t basis = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (filled[k]) continue;
        while (basis < m) {
            std::vector<double> cand(m, 0.0);
            cand[basis++] = 1.0;
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t o = 0; o < n; ++o) {
                    if (!filled[o]) continue;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < m; ++i) dot += f.u(i, o) * cand[i];
                    for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * f.u(i, o);
                }
            }
            double nrm = 0.0;
            for (double x : cand) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm > 1e-6) {
                for (std::size_t i = 0; i < m; ++i) f.u(i, k) = cand[i] / nrm;
                filled[k] = true;
                break;
            }
        }
    }
    return f;
}

} // namespace

SvdFactors svd(const Matrix& a) {
    if (!a.all_finite()) throw NumericalError("svd: non-finite input " + a.shape_string());
    if (a.rows() >= a.cols()) return svd_tall(a.transpose());
    // Wide: factor Aᵀ = U' Σ V'ᵀ, so A = V' Σ U'ᵀ.
    SvdFactors t = svd_tall(a);
    SvdFactors f;
    f.u = t.vt.transpose();
    f.singular_values = std::move(t.singular_values);
    f.vt = t.u.transpose();
    return f;
}

Matrix reconstruct(const SvdFactors& f) {
    Matrix us = f.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t k = 0; k < us.cols(); ++k) us(i, k) *= f.singular_values[k];
    return matmul(us, f.vt);
}

Matrix pinv(const Matrix& a, double rel_tol) {
    if (!(rel_tol > 0.0)) throw ContractError("pinv: rel_tol must be > 0");
    SvdFactors f = svd(a);
    Matrix out(a.cols(), a.rows());
    if (f.singular_values.empty() || f.singular_values[0] == 0.0) return out;
    const double cut = rel_tol * f.singular_values[0];
    // A⁺ = V · diag(1/s) · Uᵀ, summed over retained singular triplets.
    for (std::size_t k = 0; k < f.singular_values.size(); ++k) {
        const double s = f.singular_values[k];
        if (s <= cut) break;
        const double inv = 1.0 / s;
        for (std::size_t i = 0; i < out.rows(); ++i) {
            const double vik = f.vt(k, i) * inv;
            auto orow = out.row(i);
            for (std::size_t j = 0; j < out.cols(); ++j) orow[j] += vik * f.u(j, k);
        }
    }
    return out;
}

Matrix cosine_sim_matrix(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("cosine_sim_matrix: embedding dims " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()));
    }
    return matmul_nt(a.matrix(), b.matrix());
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw ContractError("log_sum_exp: empty input");
    if (values.size() == 1) return values[0];
    const double mx = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double v : values) s += std::exp(v - mx);
    return mx + std::log(s);
}

double frobenius_sq(const Matrix& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return s;
}

} // namespace linalg
} // namespace bb
