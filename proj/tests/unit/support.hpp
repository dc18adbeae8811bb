// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared fixtures for the unit tests: seeded random matrices and scalar-loop
// reference kernels that do not go through the library.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "brokenbind/linalg.hpp"

namespace bbtest {

inline bb::Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(r * c);
    for (auto& x : v) x = n(rng);
    return bb::Matrix::from_data(r, c, std::move(v));
}

inline bb::EmbeddingMatrix random_unit(std::size_t r, std::size_t c, std::uint64_t seed) {
    return bb::EmbeddingMatrix::normalized(random_matrix(r, c, seed));
}

/// Rank-k product of random r×k and k×c factors.
inline bb::Matrix random_low_rank(std::size_t r, std::size_t c, std::size_t k, std::uint64_t seed) {
    return bb::matmul(random_matrix(r, k, seed), random_matrix(k, c, seed + 7919));
}

inline double dot(const bb::Matrix& a, std::size_t i, const bb::Matrix& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
    return s;
}

inline bb::Matrix naive_matmul(const bb::Matrix& a, const bb::Matrix& b) {
    bb::Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

/// Row permutation matrix: row i of P·X is row perm[i] of X.
inline bb::Matrix permutation(const std::vector<std::size_t>& perm) {
    bb::Matrix p(perm.size(), perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) p(i, perm[i]) = 1.0;
    return p;
}

/// Random orthogonal d×d from a QR-free Gram–Schmidt of a Gaussian matrix.
inline bb::Matrix random_orthogonal(std::size_t d, std::uint64_t seed) {
    bb::Matrix q = random_matrix(d, d, seed);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double p = dot(q, i, q, j);
            for (std::size_t k = 0; k < d; ++k) q(i, k) -= p * q(j, k);
        }
        const double n = std::sqrt(dot(q, i, q, i));
        for (std::size_t k = 0; k < d; ++k) q(i, k) /= n;
    }
    return q;
}

/// Gauss–Jordan inverse with partial pivoting.
inline bb::Matrix inverse(bb::Matrix a) {
    const std::size_t n = a.rows();
    bb::Matrix inv = bb::Matrix::identity(n);
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        for (std::size_t k = 0; k < n; ++k) {
            std::swap(a(c, k), a(piv, k));
            std::swap(inv(c, k), inv(piv, k));
        }
        const double d = a(c, c);
        for (std::size_t k = 0; k < n; ++k) {
            a(c, k) /= d;
            inv(c, k) /= d;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = a(r, c);
            for (std::size_t k = 0; k < n; ++k) {
                a(r, k) -= f * a(c, k);
                inv(r, k) -= f * inv(c, k);
            }
        }
    }
    return inv;
}

/// Rows of e_0 .. e_{n-1} in d dims (n ≤ d).
inline bb::EmbeddingMatrix basis_rows(std::size_t n, std::size_t d, std::size_t offset = 0) {
    bb::Matrix m(n, d);
    for (std::size_t i = 0; i < n; ++i) m(i, i + offset) = 1.0;
    return bb::EmbeddingMatrix(m);
}

} // namespace bbtest
