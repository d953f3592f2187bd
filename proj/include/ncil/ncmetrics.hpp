#pragma once

// Neural-collapse metrics over a labeled feature snapshot.
//
// NC1 = (1/K) Trace(Sigma_W * pinv(Sigma_B))  -- within-class variability
// NC2 = || G/||G||_F - T ||_F with G = H^T H   -- class means vs simplex ETF
// NC3 = || A/||A||_F - T ||_F with A = H^T W   -- self-duality vs classifier
// where H is the global-mean-centered class-mean matrix and
// T = (1/sqrt(K-1)) (I - (1/K) 1 1^T).
//
// The Gram forms H^T H / H^T W (K x K) are used so the comparison target and
// the measured matrix share a shape; Sigma_W is normalized by the total
// sample count so unequal class sizes are handled, Sigma_B by K.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ncil/errors.hpp"
#include "ncil/linalg.hpp"

namespace ncil {

struct FeatureSnapshot {
    std::size_t dim = 0;
    std::vector<std::pair<std::uint32_t, Vec>> samples; // (label, feature)
    std::vector<std::uint32_t> classes;                 // sorted unique labels
};

// Builds a snapshot, deriving the class set from the samples. If
// `declared_classes` is nonempty it becomes the class set and every declared
// class must be present; labels outside it are rejected.
inline FeatureSnapshot make_snapshot(std::size_t dim,
                                     std::vector<std::pair<std::uint32_t, Vec>> samples,
                                     std::vector<std::uint32_t> declared_classes = {}) {
    FeatureSnapshot snap;
    snap.dim = dim;
    for (const auto& [label, feature] : samples) {
        if (feature.size() != dim)
            throw DimensionError("make_snapshot: feature dim mismatch");
        if (!all_finite(feature))
            throw DegenerateInput("make_snapshot: non-finite feature");
        (void)label;
    }
    snap.samples = std::move(samples);

    std::map<std::uint32_t, std::size_t> counts;
    for (const auto& [label, feature] : snap.samples) counts[label]++;

    if (!declared_classes.empty()) {
        std::sort(declared_classes.begin(), declared_classes.end());
        declared_classes.erase(std::unique(declared_classes.begin(), declared_classes.end()),
                               declared_classes.end());
        for (std::uint32_t c : declared_classes)
            if (counts.find(c) == counts.end())
                throw EmptyClass("make_snapshot: declared class " + std::to_string(c) +
                                 " has no samples");
        for (const auto& [label, n] : counts)
            if (!std::binary_search(declared_classes.begin(), declared_classes.end(), label))
                throw UnknownClass("make_snapshot: label " + std::to_string(label) +
                                   " outside declared class set");
        snap.classes = std::move(declared_classes);
    } else {
        for (const auto& [label, n] : counts) snap.classes.push_back(label);
    }
    return snap;
}

struct ClassMeans {
    Matrix means;                       // d x K, column order matches `classes`
    Vec global_mean;                    // unweighted mean of the class means
    std::vector<std::uint32_t> classes; // sorted
    std::vector<std::size_t> counts;    // per-class sample counts
};

// Per-class means plus the global mean h^G = (1/K) sum_k h^k. The global
// mean deliberately weights classes equally, not samples.
inline ClassMeans class_means(const FeatureSnapshot& snap) {
    if (snap.samples.empty()) throw EmptyInput("class_means: snapshot has no samples");
    const std::size_t k = snap.classes.size();

    std::map<std::uint32_t, std::size_t> col_of;
    for (std::size_t j = 0; j < k; ++j) col_of[snap.classes[j]] = j;

    ClassMeans cm;
    cm.classes = snap.classes;
    cm.means = Matrix(snap.dim, k);
    cm.counts.assign(k, 0);
    for (const auto& [label, feature] : snap.samples) {
        auto it = col_of.find(label);
        if (it == col_of.end())
            throw UnknownClass("class_means: label outside snapshot class set");
        std::size_t j = it->second;
        cm.counts[j]++;
        for (std::size_t i = 0; i < snap.dim; ++i) cm.means(i, j) += feature[i];
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (cm.counts[j] == 0)
            throw EmptyClass("class_means: class " + std::to_string(snap.classes[j]) +
                             " has no samples");
        for (std::size_t i = 0; i < snap.dim; ++i)
            cm.means(i, j) /= static_cast<double>(cm.counts[j]);
    }

    cm.global_mean.assign(snap.dim, 0.0);
    for (std::size_t j = 0; j < k; ++j) axpy(1.0, cm.means.col(j), cm.global_mean);
    for (double& x : cm.global_mean) x /= static_cast<double>(k);
    return cm;
}

struct ScatterMatrices {
    Matrix sigma_w; // within-class covariance, normalized by total samples
    Matrix sigma_b; // between-class covariance, normalized by K
    ClassMeans means;
};

inline ScatterMatrices scatter_matrices(const FeatureSnapshot& snap) {
    ScatterMatrices s;
    s.means = class_means(snap);
    const std::size_t d = snap.dim;
    const std::size_t k = s.means.classes.size();

    std::map<std::uint32_t, std::size_t> col_of;
    for (std::size_t j = 0; j < k; ++j) col_of[s.means.classes[j]] = j;

    s.sigma_w = Matrix(d, d);
    for (const auto& [label, feature] : snap.samples) {
        Vec diff = sub(feature, s.means.means.col(col_of[label]));
        for (std::size_t i = 0; i < d; ++i) {
            if (diff[i] == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) s.sigma_w(i, j) += diff[i] * diff[j];
        }
    }
    const double n_total = static_cast<double>(snap.samples.size());
    for (double& x : s.sigma_w.data()) x /= n_total;

    s.sigma_b = Matrix(d, d);
    for (std::size_t c = 0; c < k; ++c) {
        Vec diff = sub(s.means.means.col(c), s.means.global_mean);
        for (std::size_t i = 0; i < d; ++i) {
            if (diff[i] == 0.0) continue;
            for (std::size_t j = 0; j < d; ++j) s.sigma_b(i, j) += diff[i] * diff[j];
        }
    }
    for (double& x : s.sigma_b.data()) x /= static_cast<double>(k);
    return s;
}

inline double nc1(const FeatureSnapshot& snap, double pinv_tol = 1e-10) {
    if (snap.classes.size() < 2) throw DimensionError("nc1: need at least two classes");
    ScatterMatrices s = scatter_matrices(snap);
    if (trace(s.sigma_b) == 0.0)
        throw DegenerateGeometry("nc1: all class means identical (Trace Sigma_B = 0)");
    Matrix pinv = pinv_psd(s.sigma_b, pinv_tol);
    // tr(Sigma_W * pinv) via elementwise sum; both factors are symmetric.
    double t = 0.0;
    for (std::size_t i = 0; i < s.sigma_w.data().size(); ++i)
        t += s.sigma_w.data()[i] * pinv.data()[i];
    return t / static_cast<double>(snap.classes.size());
}

namespace detail {

// (1/sqrt(K-1)) * (I - (1/K) 1 1^T)
inline Matrix etf_gram_target(std::size_t k) {
    const double s = 1.0 / std::sqrt(static_cast<double>(k - 1));
    Matrix t(k, k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
            t(i, j) = s * ((i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(k));
    return t;
}

inline Matrix centered(const Matrix& means, const Vec& global_mean) {
    if (means.rows() != global_mean.size())
        throw DimensionError("centered: global mean dim mismatch");
    Matrix h = means;
    for (std::size_t j = 0; j < h.cols(); ++j)
        for (std::size_t i = 0; i < h.rows(); ++i) h(i, j) -= global_mean[i];
    return h;
}

inline double gram_distance_to_etf(const Matrix& gram) {
    const std::size_t k = gram.rows();
    double gf = frobenius(gram);
    if (gf == 0.0) throw DegenerateGeometry("nc metric: Gram matrix is zero");
    Matrix target = etf_gram_target(k);
    double s = 0.0;
    for (std::size_t i = 0; i < gram.data().size(); ++i) {
        double diff = gram.data()[i] / gf - target.data()[i];
        s += diff * diff;
    }
    return std::sqrt(s);
}

} // namespace detail

inline double nc2(const Matrix& means, const Vec& global_mean) {
    if (means.cols() < 2) throw DimensionError("nc2: need at least two classes");
    Matrix h = detail::centered(means, global_mean);
    return detail::gram_distance_to_etf(matmul(transpose(h), h));
}

inline double nc3(const Matrix& means, const Vec& global_mean, const Matrix& classifier) {
    if (means.cols() < 2) throw DimensionError("nc3: need at least two classes");
    if (classifier.rows() != means.rows() || classifier.cols() != means.cols())
        throw DimensionError("nc3: classifier shape disagrees with means");
    Matrix h = detail::centered(means, global_mean);
    return detail::gram_distance_to_etf(matmul(transpose(h), classifier));
}

struct NcReport {
    double nc1 = 0.0;
    double nc2 = 0.0;
    std::optional<double> nc3; // only with a classifier
    double trace_sigma_w = 0.0;
    double trace_sigma_b = 0.0;
    std::size_t num_classes = 0;
};

inline NcReport compute_report(const FeatureSnapshot& snap,
                               const Matrix* classifier = nullptr,
                               double pinv_tol = 1e-10) {
    if (snap.classes.size() < 2)
        throw DimensionError("compute_report: need at least two classes");
    ScatterMatrices s = scatter_matrices(snap);

    NcReport r;
    r.num_classes = snap.classes.size();
    r.trace_sigma_w = trace(s.sigma_w);
    r.trace_sigma_b = trace(s.sigma_b);
    if (r.trace_sigma_b == 0.0)
        throw DegenerateGeometry("compute_report: all class means identical");

    Matrix pinv = pinv_psd(s.sigma_b, pinv_tol);
    double t = 0.0;
    for (std::size_t i = 0; i < s.sigma_w.data().size(); ++i)
        t += s.sigma_w.data()[i] * pinv.data()[i];
    r.nc1 = t / static_cast<double>(r.num_classes);
    r.nc2 = nc2(s.means.means, s.means.global_mean);
    if (classifier) r.nc3 = nc3(s.means.means, s.means.global_mean, *classifier);
    return r;
}

} // namespace ncil
