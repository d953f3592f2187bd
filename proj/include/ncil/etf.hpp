#pragma once

// Simplex equiangular tight frame construction and dynamic expansion.
// Anchors are K unit vectors with pairwise cosine -1/(K-1), built from an
// orthonormal basis U as M = sqrt(K/(K-1)) * U * (I - (1/K) 11^T). The basis
// grows column by column as new classes arrive; columns created earlier are
// never touched again, so previously learned anchor directions stay stable
// up to the K-dependent centering.

#include <cstdint>
#include <string>

#include "ncil/errors.hpp"
#include "ncil/linalg.hpp"

namespace ncil {

struct EtfClassifier {
    std::size_t dim = 0;
    std::size_t num_classes = 0;
    Matrix basis;   // d x K, orthonormal columns (U_t)
    Matrix anchors; // d x K, column k is the anchor for class slot k
    std::uint64_t seed = 0;
};

// M = sqrt(K/(K-1)) * U * (I_K - (1/K) 1 1^T). Column k comes out as
// sqrt(K/(K-1)) * (u_k - mean of U columns).
inline Matrix build_etf(const Matrix& u) {
    const std::size_t d = u.rows();
    const std::size_t k = u.cols();
    if (k < 2) throw DimensionError("build_etf: need at least two classes");
    if (d < k) throw DimensionError("build_etf: feature dim below class count");

    Matrix gram = matmul(transpose(u), u);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double want = (i == j) ? 1.0 : 0.0;
            if (std::abs(gram(i, j) - want) > 1e-9)
                throw NotOrthogonal("build_etf: U^T U deviates from identity beyond 1e-9");
        }

    Vec col_mean(d, 0.0);
    for (std::size_t j = 0; j < k; ++j) axpy(1.0, u.col(j), col_mean);
    for (double& x : col_mean) x /= static_cast<double>(k);

    const double scale = std::sqrt(static_cast<double>(k) / static_cast<double>(k - 1));
    Matrix m(d, k);
    for (std::size_t j = 0; j < k; ++j) {
        Vec c = sub(u.col(j), col_mean);
        m.set_col(j, scaled(c, scale));
    }
    ensure_finite(m, "build_etf");
    return m;
}

namespace detail {

// Fresh Gaussian candidates until Gram-Schmidt accepts them. A dependent
// draw is astronomically unlikely but the retry keeps the contract total.
inline Matrix orthonormal_columns(std::size_t d, std::size_t count, const Matrix& existing,
                                  Rng& rng) {
    for (int attempt = 0; attempt < 16; ++attempt) {
        Matrix candidates = rng.gaussian_matrix(d, count);
        try {
            return gram_schmidt(candidates, existing);
        } catch (const DegenerateInput&) {
            continue;
        }
    }
    throw DegenerateInput("orthonormal_columns: repeated dependent candidate draws");
}

} // namespace detail

inline EtfClassifier init_classifier(std::size_t d, std::size_t k1, std::uint64_t seed) {
    if (k1 < 2) throw DimensionError("init_classifier: need at least two classes");
    if (k1 > d) throw DimensionError("init_classifier: class count exceeds feature dim");

    Rng rng(seed);
    EtfClassifier c;
    c.dim = d;
    c.num_classes = k1;
    c.seed = seed;
    c.basis = detail::orthonormal_columns(d, k1, Matrix(d, 0), rng);
    c.anchors = build_etf(c.basis);
    return c;
}

// Grows the basis to K_new columns, keeping the first K_t columns
// bit-identical, then rebuilds all anchors (their centering depends on K).
// Candidate draws come from a sub-seed mixed from the classifier seed and
// K_new so each expansion step is reproducible in isolation.
inline EtfClassifier expand(const EtfClassifier& c, std::size_t k_new,
                            bool regenerate_basis = false) {
    if (k_new <= c.num_classes)
        throw InvalidExpansion("expand: new class count must exceed current");
    if (k_new > c.dim) throw DimensionError("expand: class count exceeds feature dim");

    Rng rng(derive_seed(c.seed, k_new));
    EtfClassifier out;
    out.dim = c.dim;
    out.num_classes = k_new;
    out.seed = c.seed;
    if (regenerate_basis)
        out.basis = detail::orthonormal_columns(c.dim, k_new, Matrix(c.dim, 0), rng);
    else
        out.basis = detail::orthonormal_columns(c.dim, k_new - c.num_classes, c.basis, rng);
    out.anchors = build_etf(out.basis);
    return out;
}

} // namespace ncil
