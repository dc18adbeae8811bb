// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "brokenbind/matrix.hpp"

namespace bb {

/// B×d matrix whose rows are unit vectors: one (modality, dataset) side of a
/// batch after encoding.
class EmbeddingMatrix {
  public:
    static constexpr double kUnitTolerance = 1e-8;

    EmbeddingMatrix() = default;
    /// Validates that every row has unit norm within `kUnitTolerance`.
    explicit EmbeddingMatrix(Matrix values);

    /// Normalizes each row. Throws DegenerateEmbeddingError on a zero row.
    static EmbeddingMatrix normalized(Matrix values);

    const Matrix& matrix() const noexcept { return values_; }
    std::size_t rows() const noexcept { return values_.rows(); }
    std::size_t cols() const noexcept { return values_.cols(); }

  private:
    Matrix values_;
};

namespace linalg {

struct SvdFactors {
    Matrix u;                           // m×r, orthonormal columns
    std::vector<double> singular_values; // r, nonincreasing, ≥ 0
    Matrix vt;                          // r×n, orthonormal rows
};

inline constexpr double kDefaultPinvRelTol = 1e-12;

/// Thin SVD by one-sided Jacobi rotations (r = min(m, n)).
/// Throws NumericalError if the sweep cap is reached.
SvdFactors svd(const Matrix& a);

/// Moore–Penrose pseudo-inverse. Singular values at or below
/// `rel_tol · s_max` are treated as zero. The zero matrix maps to the zero
/// matrix of transposed shape.
Matrix pinv(const Matrix& a, double rel_tol = kDefaultPinvRelTol);

/// Entry (i, j) = ⟨aᵢ, bⱼ⟩.
Matrix cosine_sim_matrix(const EmbeddingMatrix& a, const EmbeddingMatrix& b);

double log_sum_exp(std::span<const double> values);

double frobenius_sq(const Matrix& a);

/// Reconstructs u · diag(s) · vt.
Matrix reconstruct(const SvdFactors& f);

} // namespace linalg
} // namespace bb
