#pragma once

// Alignment layer: a single-hidden-layer MLP with a residual connection and
// L2-normalized output,
//
//   y = normalize( x + W2 relu(W1 x + b1) + b2 )
//
// plus exact backprop (including the normalization Jacobian) and an SGD
// trainer with momentum, weight decay, and cosine-annealed learning rate.
// With zero-initialized parameters the layer is the identity on the unit
// sphere, which is what the per-task re-initialization relies on.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ncil/errors.hpp"
#include "ncil/etf.hpp"
#include "ncil/linalg.hpp"
#include "ncil/losses.hpp"

namespace ncil {

struct AlignmentLayer {
    std::size_t in_dim = 0;
    std::size_t hidden_dim = 0;
    Matrix w1; // h x d
    Vec b1;    // h
    Matrix w2; // d x h
    Vec b2;    // d
};

struct TrainConfig {
    std::size_t epochs = 40;
    double lr0 = 0.01;
    double lr_min = 0.0;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 48;
    double temperature = 16.0;
    std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (!(cfg.lr0 >= cfg.lr_min) || cfg.lr_min < 0.0)
        throw ConfigError("TrainConfig: need lr0 >= lr_min >= 0");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
        throw ConfigError("TrainConfig: momentum must be in [0, 1)");
    if (cfg.batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (!(cfg.temperature > 0.0)) throw ConfigError("TrainConfig: temperature must be > 0");
    if (cfg.weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
}

// Scaled uniform init, bound 1/sqrt(fan_in); biases zero.
inline AlignmentLayer init_layer(std::size_t d, std::size_t h, std::uint64_t seed) {
    if (d < 1 || h < 1) throw DimensionError("init_layer: dims must be >= 1");
    Rng rng(seed);
    AlignmentLayer l;
    l.in_dim = d;
    l.hidden_dim = h;
    l.w1 = Matrix(h, d);
    l.b1.assign(h, 0.0);
    l.w2 = Matrix(d, h);
    l.b2.assign(d, 0.0);
    const double bound1 = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& x : l.w1.data()) x = rng.uniform(-bound1, bound1);
    const double bound2 = 1.0 / std::sqrt(static_cast<double>(h));
    for (double& x : l.w2.data()) x = rng.uniform(-bound2, bound2);
    return l;
}

// All-zero parameters: forward reduces to plain normalization.
inline AlignmentLayer zero_layer(std::size_t d, std::size_t h) {
    if (d < 1 || h < 1) throw DimensionError("zero_layer: dims must be >= 1");
    AlignmentLayer l;
    l.in_dim = d;
    l.hidden_dim = h;
    l.w1 = Matrix(h, d);
    l.b1.assign(h, 0.0);
    l.w2 = Matrix(d, h);
    l.b2.assign(d, 0.0);
    return l;
}

struct ForwardCache {
    Vec x;      // input
    Vec z1;     // W1 x + b1
    Vec a1;     // relu(z1)
    Vec pre;    // x + W2 a1 + b2
    double pre_norm = 0.0;
    Vec y;      // pre / |pre|
};

inline ForwardCache forward(const AlignmentLayer& l, const Vec& x) {
    if (x.size() != l.in_dim) throw DimensionError("forward: input dim mismatch");
    if (!all_finite(x)) throw DegenerateInput("forward: non-finite input");

    ForwardCache c;
    c.x = x;
    c.z1 = matvec(l.w1, x);
    for (std::size_t i = 0; i < c.z1.size(); ++i) c.z1[i] += l.b1[i];
    c.a1.resize(c.z1.size());
    for (std::size_t i = 0; i < c.z1.size(); ++i) c.a1[i] = c.z1[i] > 0.0 ? c.z1[i] : 0.0;

    c.pre = matvec(l.w2, c.a1);
    for (std::size_t i = 0; i < c.pre.size(); ++i) c.pre[i] += x[i] + l.b2[i];

    c.pre_norm = norm(c.pre);
    if (c.pre_norm < 1e-12)
        throw DegenerateInput("forward: pre-normalization output norm below 1e-12");
    c.y = scaled(c.pre, 1.0 / c.pre_norm);
    return c;
}

struct LayerGrads {
    Matrix w1;
    Vec b1;
    Matrix w2;
    Vec b2;
    Vec x; // dL/dx
};

inline LayerGrads backward(const AlignmentLayer& l, const ForwardCache& c, const Vec& dl_dy) {
    if (dl_dy.size() != l.in_dim) throw DimensionError("backward: dl_dy dim mismatch");

    // Through y = pre / |pre|:  dL/dpre = (dL/dy - (y . dL/dy) y) / |pre|
    Vec dpre = dl_dy;
    axpy(-dot(c.y, dl_dy), c.y, dpre);
    for (double& v : dpre) v /= c.pre_norm;

    LayerGrads g;
    g.b2 = dpre;
    g.w2 = outer(dpre, c.a1);
    Vec da1 = matvec_t(l.w2, dpre);
    Vec dz1(da1.size());
    for (std::size_t i = 0; i < da1.size(); ++i) dz1[i] = c.z1[i] > 0.0 ? da1[i] : 0.0;
    g.b1 = dz1;
    g.w1 = outer(dz1, c.x);
    g.x = dpre;
    axpy(1.0, matvec_t(l.w1, dz1), g.x);
    return g;
}

inline double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
    if (epoch >= cfg.epochs) throw ConfigError("cosine_lr: epoch out of range");
    const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
    return cfg.lr_min +
           0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(3.14159265358979323846 * frac));
}

struct TrainOptions {
    bool use_pap = true;    // include the PAP term
    bool ce_on_pool = true; // pool means join the CE stream as pseudo-samples
};

struct EpochLog {
    std::size_t epoch = 0; // 0 = before training
    double lr = 0.0;
    double pap = 0.0;
    double ce = 0.0;
    double total = 0.0;
};

struct TrainResult {
    AlignmentLayer layer;
    std::vector<EpochLog> log; // entry 0 is the pre-training evaluation
};

namespace detail {

struct GradAccumulator {
    Matrix w1;
    Vec b1;
    Matrix w2;
    Vec b2;

    explicit GradAccumulator(const AlignmentLayer& l)
        : w1(l.hidden_dim, l.in_dim), b1(l.hidden_dim, 0.0), w2(l.in_dim, l.hidden_dim),
          b2(l.in_dim, 0.0) {}

    void add(const LayerGrads& g, double scale) {
        for (std::size_t i = 0; i < w1.data().size(); ++i)
            w1.data()[i] += scale * g.w1.data()[i];
        for (std::size_t i = 0; i < b1.size(); ++i) b1[i] += scale * g.b1[i];
        for (std::size_t i = 0; i < w2.data().size(); ++i)
            w2.data()[i] += scale * g.w2.data()[i];
        for (std::size_t i = 0; i < b2.size(); ++i) b2[i] += scale * g.b2[i];
    }
};

} // namespace detail

// Labels are anchor slots in the classifier. `pool_means` are the raw (not
// yet aligned) class means; the PAP term evaluates them through the layer
// every step. `samples` may be empty when the pool alone carries the CE
// stream.
inline TrainResult train_alignment(AlignmentLayer layer,
                                   const std::vector<std::pair<std::uint32_t, Vec>>& pool_means,
                                   const std::vector<std::pair<std::uint32_t, Vec>>& samples,
                                   const EtfClassifier& clf, const TrainConfig& cfg,
                                   const TrainOptions& opts = {}) {
    validate(cfg);
    if (pool_means.empty()) throw EmptyInput("train_alignment: need at least one class mean");
    for (const auto& [label, mean] : pool_means)
        if (label >= clf.num_classes)
            throw UnknownClass("train_alignment: pool class not covered by classifier");
    for (const auto& [label, feature] : samples)
        if (label >= clf.num_classes)
            throw UnknownClass("train_alignment: sample label not covered by classifier");

    // CE stream = current-task samples plus (optionally) one pseudo-sample
    // per pooled class.
    std::vector<std::pair<std::uint32_t, Vec>> ce_stream = samples;
    if (opts.ce_on_pool)
        ce_stream.insert(ce_stream.end(), pool_means.begin(), pool_means.end());

    auto evaluate = [&](const AlignmentLayer& l) {
        LossValues lv;
        for (const auto& [label, feature] : ce_stream)
            lv.ce += ce_loss(forward(l, feature).y, label, clf, cfg.temperature).loss;
        if (!ce_stream.empty()) lv.ce /= static_cast<double>(ce_stream.size());
        if (opts.use_pap) {
            for (const auto& [label, mean] : pool_means)
                lv.pap += pap_loss({label, forward(l, mean).y}, clf);
            lv.pap /= static_cast<double>(pool_means.size());
        }
        lv.total = lv.ce + lv.pap;
        return lv;
    };

    TrainResult res;
    res.log.reserve(cfg.epochs + 1);
    {
        LossValues lv = evaluate(layer);
        res.log.push_back({0, cosine_lr(0, cfg), lv.pap, lv.ce, lv.total});
    }

    Matrix vw1(layer.hidden_dim, layer.in_dim), vw2(layer.in_dim, layer.hidden_dim);
    Vec vb1(layer.hidden_dim, 0.0), vb2(layer.in_dim, 0.0);
    Rng rng(cfg.seed);

    std::vector<std::size_t> order(ce_stream.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const double pap_scale = 1.0 / static_cast<double>(pool_means.size());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, cfg);

        // Fisher-Yates with the config seed; identical runs shuffle identically.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.index(i)]);

        const std::size_t n = order.size();
        const std::size_t steps = n == 0 ? 1 : (n + cfg.batch_size - 1) / cfg.batch_size;
        for (std::size_t step = 0; step < steps; ++step) {
            detail::GradAccumulator acc(layer);

            const std::size_t lo = step * cfg.batch_size;
            const std::size_t hi = std::min(n, lo + cfg.batch_size);
            if (hi > lo) {
                const double scale = 1.0 / static_cast<double>(hi - lo);
                for (std::size_t i = lo; i < hi; ++i) {
                    const auto& [label, feature] = ce_stream[order[i]];
                    ForwardCache fc = forward(layer, feature);
                    CeResult ce = ce_loss(fc.y, label, clf, cfg.temperature);
                    acc.add(backward(layer, fc, ce.grad), scale);
                }
            }

            if (opts.use_pap) {
                for (const auto& [label, mean] : pool_means) {
                    ForwardCache fc = forward(layer, mean);
                    Vec g = pap_grad({label, fc.y}, clf);
                    acc.add(backward(layer, fc, g), pap_scale);
                }
            }

            // SGD with momentum; weight decay on weights only.
            auto update_w = [&](Matrix& w, Matrix& v, const Matrix& g) {
                for (std::size_t i = 0; i < w.data().size(); ++i) {
                    double gd = g.data()[i] + cfg.weight_decay * w.data()[i];
                    v.data()[i] = cfg.momentum * v.data()[i] + gd;
                    w.data()[i] -= lr * v.data()[i];
                }
            };
            auto update_b = [&](Vec& b, Vec& v, const Vec& g) {
                for (std::size_t i = 0; i < b.size(); ++i) {
                    v[i] = cfg.momentum * v[i] + g[i];
                    b[i] -= lr * v[i];
                }
            };
            update_w(layer.w1, vw1, acc.w1);
            update_b(layer.b1, vb1, acc.b1);
            update_w(layer.w2, vw2, acc.w2);
            update_b(layer.b2, vb2, acc.b2);
        }

        LossValues lv = evaluate(layer);
        res.log.push_back({epoch + 1, lr, lv.pap, lv.ce, lv.total});
    }

    res.layer = std::move(layer);
    return res;
}

} // namespace ncil
