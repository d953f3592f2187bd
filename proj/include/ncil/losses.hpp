#pragma once

// Pull-and-push loss against ETF anchors, cross-entropy over temperature-
// scaled cosine logits, and their analytic gradients with respect to the
// (pre-normalization) aligned feature.
//
// PAP(c, k) = (w_k . c - 1)^2 + sum_{j != k} (w_j . c + 1/(K-1))^2
//
// The push constant is 1/(K_t - 1) so the loss is exactly zero at c = w_k,
// matching the ETF pairwise cosine. The gradient is the exact derivative of
// this expression; finite-difference tests arbitrate.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ncil/errors.hpp"
#include "ncil/etf.hpp"
#include "ncil/linalg.hpp"

namespace ncil {

struct LossValues {
    double pap = 0.0;
    double ce = 0.0;
    double total = 0.0;
};

struct AlignedMean {
    std::uint32_t class_id = 0; // anchor slot in the classifier
    Vec vector;                 // unit norm
};

inline double pap_loss(const AlignedMean& c_hat, const EtfClassifier& clf) {
    if (c_hat.vector.size() != clf.dim) throw DimensionError("pap_loss: dim mismatch");
    if (c_hat.class_id >= clf.num_classes)
        throw UnknownClass("pap_loss: class id " + std::to_string(c_hat.class_id) +
                           " not covered by classifier");
    const double push_target = 1.0 / static_cast<double>(clf.num_classes - 1);
    double loss = 0.0;
    for (std::size_t j = 0; j < clf.num_classes; ++j) {
        double cj = dot(clf.anchors.col(j), c_hat.vector);
        double r = (j == c_hat.class_id) ? (cj - 1.0) : (cj + push_target);
        loss += r * r;
    }
    return loss;
}

// d PAP / d c = 2 (w_k.c - 1) w_k + 2 sum_{j != k} (w_j.c + 1/(K-1)) w_j
inline Vec pap_grad(const AlignedMean& c_hat, const EtfClassifier& clf) {
    if (c_hat.vector.size() != clf.dim) throw DimensionError("pap_grad: dim mismatch");
    if (c_hat.class_id >= clf.num_classes)
        throw UnknownClass("pap_grad: class id not covered by classifier");
    const double push_target = 1.0 / static_cast<double>(clf.num_classes - 1);
    Vec g(clf.dim, 0.0);
    for (std::size_t j = 0; j < clf.num_classes; ++j) {
        Vec wj = clf.anchors.col(j);
        double cj = dot(wj, c_hat.vector);
        double r = (j == c_hat.class_id) ? (cj - 1.0) : (cj + push_target);
        axpy(2.0 * r, wj, g);
    }
    return g;
}

struct CeResult {
    double loss = 0.0;
    Vec grad; // d loss / d feature, through the cosine
};

inline CeResult ce_loss(const Vec& feature, std::uint32_t label, const EtfClassifier& clf,
                        double temperature) {
    if (feature.size() != clf.dim) throw DimensionError("ce_loss: dim mismatch");
    if (label >= clf.num_classes) throw UnknownClass("ce_loss: label not covered");
    if (!(temperature > 0.0)) throw ConfigError("ce_loss: temperature must be positive");
    const double fnorm = norm(feature);
    if (fnorm < 1e-12) throw DegenerateInput("ce_loss: feature norm below 1e-12");

    const std::size_t k = clf.num_classes;
    std::vector<double> wnorm(k), fdotw(k), z(k);
    for (std::size_t j = 0; j < k; ++j) {
        Vec wj = clf.anchors.col(j);
        wnorm[j] = norm(wj);
        fdotw[j] = dot(feature, wj);
        z[j] = temperature * fdotw[j] / (fnorm * wnorm[j]);
    }

    double zmax = z[0];
    for (double v : z) zmax = std::max(zmax, v);
    double denom = 0.0;
    std::vector<double> p(k);
    for (std::size_t j = 0; j < k; ++j) {
        p[j] = std::exp(z[j] - zmax);
        denom += p[j];
    }
    for (double& v : p) v /= denom;

    CeResult res;
    res.loss = -(z[label] - zmax - std::log(denom));

    // dz_j/df = tau * ( w_j / (|f| |w_j|) - (f.w_j) f / (|f|^3 |w_j|) )
    res.grad.assign(clf.dim, 0.0);
    const double inv_f = 1.0 / fnorm;
    const double inv_f3 = 1.0 / (fnorm * fnorm * fnorm);
    for (std::size_t j = 0; j < k; ++j) {
        double coeff = p[j] - (j == label ? 1.0 : 0.0);
        if (coeff == 0.0) continue;
        Vec wj = clf.anchors.col(j);
        double a = temperature * coeff * inv_f / wnorm[j];
        double b = -temperature * coeff * fdotw[j] * inv_f3 / wnorm[j];
        axpy(a, wj, res.grad);
        axpy(b, feature, res.grad);
    }
    return res;
}

// ce averaged over the batch, pap averaged over the aligned means.
inline LossValues total_loss(const std::vector<std::pair<std::uint32_t, Vec>>& batch,
                             const std::vector<AlignedMean>& aligned_means,
                             const EtfClassifier& clf, double temperature) {
    if (batch.empty()) throw EmptyInput("total_loss: empty batch");
    if (aligned_means.empty()) throw EmptyInput("total_loss: no aligned means");

    LossValues lv;
    for (const auto& [label, feature] : batch)
        lv.ce += ce_loss(feature, label, clf, temperature).loss;
    lv.ce /= static_cast<double>(batch.size());

    for (const AlignedMean& m : aligned_means) lv.pap += pap_loss(m, clf);
    lv.pap /= static_cast<double>(aligned_means.size());

    lv.total = lv.ce + lv.pap;
    return lv;
}

} // namespace ncil
