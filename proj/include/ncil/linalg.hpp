#pragma once

// Minimal dense linear-algebra kernel: row-major matrices, vector helpers,
// Gram-Schmidt orthonormalization, cyclic Jacobi eigendecomposition, PSD
// pseudoinverse, and a seeded deterministic RNG. Everything runs in double
// precision; sizes here never exceed a few hundred, so no attempt is made
// to be clever about cache or blocking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "ncil/errors.hpp"

namespace ncil {

using Vec = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix from_columns(std::size_t dim, const std::vector<Vec>& cols) {
        Matrix m(dim, cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (cols[j].size() != dim)
                throw DimensionError("from_columns: column length mismatch");
            for (std::size_t i = 0; i < dim; ++i) m(i, j) = cols[j][i];
        }
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Vec col(std::size_t j) const {
        Vec v(rows_);
        for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, j);
        return v;
    }

    void set_col(std::size_t j, const Vec& v) {
        if (v.size() != rows_) throw DimensionError("set_col: length mismatch");
        for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = v[i];
    }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

inline Vec normalized(const Vec& v) {
    double n = norm(v);
    if (n < 1e-12) throw DegenerateInput("normalized: vector norm below 1e-12");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

inline Vec add(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw DimensionError("add: length mismatch");
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Vec sub(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw DimensionError("sub: length mismatch");
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Vec scaled(const Vec& v, double c) {
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * c;
    return out;
}

inline void axpy(double c, const Vec& x, Vec& y) {
    if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

inline Vec mean_of(const std::vector<Vec>& vs) {
    if (vs.empty()) throw EmptyInput("mean_of: no vectors");
    Vec m(vs[0].size(), 0.0);
    for (const Vec& v : vs) axpy(1.0, v, m);
    for (double& x : m) x /= static_cast<double>(vs.size());
    return m;
}

inline bool all_finite(const Vec& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline bool all_finite(const Matrix& m) { return all_finite(m.data()); }

inline void ensure_finite(const Matrix& m, const char* what) {
    if (!all_finite(m)) throw DegenerateInput(std::string(what) + ": non-finite entries");
}

// ---------------------------------------------------------------------------
// Matrix helpers
// ---------------------------------------------------------------------------

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dims disagree");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Vec matvec(const Matrix& a, const Vec& x) {
    if (a.cols() != x.size()) throw DimensionError("matvec: dims disagree");
    Vec y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

// y = A^T x
inline Vec matvec_t(const Matrix& a, const Vec& x) {
    if (a.rows() != x.size()) throw DimensionError("matvec_t: dims disagree");
    Vec y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * x[i];
    return y;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix outer(const Vec& u, const Vec& v) {
    Matrix m(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
    return m;
}

inline double frobenius(const Matrix& a) {
    double s = 0.0;
    for (double x : a.data()) s += x * x;
    return std::sqrt(s);
}

inline double trace(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("trace: matrix not square");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
    return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DimensionError("max_abs_diff: shapes disagree");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Seeded deterministic RNG
// ---------------------------------------------------------------------------

// splitmix64 stream plus Box-Muller for Gaussians. The integer stream is
// bit-reproducible on any platform; the Gaussian stream is as portable as
// libm's log/cos/sin.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    Vec gaussian_vec(std::size_t n) {
        Vec v(n);
        for (double& x : v) x = gaussian();
        return v;
    }

    Matrix gaussian_matrix(std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (double& x : m.data()) x = gaussian();
        return m;
    }

    // Uniform index in [0, n). Modulo bias is irrelevant at our scales and
    // keeps the stream identical everywhere.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Deterministic sub-seed derivation (golden-ratio mix, then scramble).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base ^ (salt * 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Orthonormalization
// ---------------------------------------------------------------------------

// Appends orthonormalized versions of `candidates` columns after the columns
// of `existing` (which must already be orthonormal and are returned
// unchanged). Modified Gram-Schmidt with one re-orthogonalization pass keeps
// max |R^T R - I| under 1e-10 at the dimensions used here.
inline Matrix gram_schmidt(const Matrix& candidates, const Matrix& existing) {
    const bool have_existing = existing.cols() > 0;
    const std::size_t d = candidates.rows() > 0 ? candidates.rows() : existing.rows();
    const std::size_t m = candidates.cols();
    const std::size_t p = have_existing ? existing.cols() : 0;

    if (m > 0 && candidates.rows() != d)
        throw DimensionError("gram_schmidt: candidate rows disagree");
    if (have_existing && existing.rows() != d)
        throw DimensionError("gram_schmidt: existing rows disagree with candidates");
    if (d < p + m)
        throw DimensionError("gram_schmidt: more columns requested than dimensions");

    std::vector<Vec> cols;
    cols.reserve(p + m);
    for (std::size_t j = 0; j < p; ++j) cols.push_back(existing.col(j));

    if (have_existing) {
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = a; b < p; ++b) {
                double g = dot(cols[a], cols[b]);
                double want = (a == b) ? 1.0 : 0.0;
                if (std::abs(g - want) > 1e-9)
                    throw NotOrthogonal("gram_schmidt: existing columns not orthonormal");
            }
    }

    for (std::size_t j = 0; j < m; ++j) {
        Vec v = candidates.col(j);
        for (int pass = 0; pass < 2; ++pass)
            for (const Vec& r : cols) axpy(-dot(r, v), r, v);
        double n = norm(v);
        if (n < 1e-8)
            throw DegenerateInput("gram_schmidt: residual norm below 1e-8 (dependent draw)");
        cols.push_back(scaled(v, 1.0 / n));
    }

    Matrix out = Matrix::from_columns(d, cols);
    ensure_finite(out, "gram_schmidt");
    return out;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)
// ---------------------------------------------------------------------------

struct EigResult {
    Vec values;   // descending
    Matrix vectors; // columns, same order as values
};

inline EigResult sym_eig(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("sym_eig: matrix not square");
    const std::size_t n = a.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(a(i, j) - a(j, i)) > 1e-9)
                throw NotSymmetric("sym_eig: input not symmetric within 1e-9");

    // Work on the symmetrized copy so rotations see an exactly symmetric B.
    Matrix b(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) b(i, j) = 0.5 * (a(i, j) + a(j, i));
    Matrix v = Matrix::identity(n);

    const double thresh = 1e-12 * frobenius(a);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * b(p, q) * b(p, q);
        off = std::sqrt(off);
        if (off <= thresh) break;

        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = b(p, q);
                if (apq == 0.0) continue;
                double theta = (b(q, q) - b(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0)
                               ? 1.0 / (theta + std::sqrt(theta * theta + 1.0))
                               : -1.0 / (-theta + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                double bpp = b(p, p), bqq = b(q, q);
                b(p, p) = c * c * bpp - 2.0 * s * c * apq + s * s * bqq;
                b(q, q) = s * s * bpp + 2.0 * s * c * apq + c * c * bqq;
                b(p, q) = b(q, p) = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i == p || i == q) continue;
                    double bip = b(i, p), biq = b(i, q);
                    b(i, p) = b(p, i) = c * bip - s * biq;
                    b(i, q) = b(q, i) = s * bip + c * biq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return b(i, i) > b(j, j); });

    EigResult res;
    res.values.resize(n);
    res.vectors = Matrix(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        res.values[k] = b(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) res.vectors(i, k) = v(i, order[k]);
    }
    ensure_finite(res.vectors, "sym_eig");
    return res;
}

// ---------------------------------------------------------------------------
// PSD pseudoinverse
// ---------------------------------------------------------------------------

// Moore-Penrose pseudoinverse of a symmetric PSD matrix via eigendecomposition.
// Eigenvalues at or below tol * lambda_max count as zero; NC1 is sensitive to
// this cutoff, hence it is a parameter rather than a constant.
inline Matrix pinv_psd(const Matrix& a, double tol = 1e-10) {
    EigResult eig = sym_eig(a);
    const std::size_t n = a.rows();
    double lam_max = eig.values.empty() ? 0.0 : std::max(eig.values[0], 0.0);
    double cutoff = tol * lam_max;

    Matrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        double lam = eig.values[k];
        if (lam <= cutoff) continue;
        double r = 1.0 / lam;
        for (std::size_t i = 0; i < n; ++i) {
            double vik = eig.vectors(i, k);
            if (vik == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j)
                out(i, j) += r * vik * eig.vectors(j, k);
        }
    }
    ensure_finite(out, "pinv_psd");
    return out;
}

} // namespace ncil
