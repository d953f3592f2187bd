#pragma once

// Incremental-task orchestration: class-mean pools, per-task classifier
// expansion and alignment training, cosine inference, and stage-wise
// accuracy / NC reporting. run_stream is sequential and bit-reproducible
// for a given (stream, config, flags, seed).

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ncil/alignment.hpp"
#include "ncil/data_io.hpp"
#include "ncil/errors.hpp"
#include "ncil/etf.hpp"
#include "ncil/linalg.hpp"
#include "ncil/losses.hpp"
#include "ncil/ncmetrics.hpp"

namespace ncil {

// ---------------------------------------------------------------------------
// Class-mean pool
// ---------------------------------------------------------------------------

struct PoolEntry {
    Vec mean;
    std::uint64_t sample_count = 0;
    std::uint32_t task_of_origin = 0;
};

// One mean per learned class, computed once from that class's task data and
// never updated afterwards (exemplar-free contract).
class ClassMeanPool {
public:
    ClassMeanPool() = default;
    explicit ClassMeanPool(std::size_t dim) : dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    bool contains(std::uint32_t cls) const { return entries_.count(cls) != 0; }

    const PoolEntry& at(std::uint32_t cls) const {
        auto it = entries_.find(cls);
        if (it == entries_.end())
            throw UnknownClass("pool: class " + std::to_string(cls) + " not present");
        return it->second;
    }

    void insert(std::uint32_t cls, PoolEntry entry) {
        if (entry.mean.size() != dim_) throw DimensionError("pool: mean dim mismatch");
        if (!entries_.emplace(cls, std::move(entry)).second)
            throw DuplicateClass("pool: class " + std::to_string(cls) + " already present");
    }

    const std::map<std::uint32_t, PoolEntry>& entries() const { return entries_; }

private:
    std::size_t dim_ = 0;
    std::map<std::uint32_t, PoolEntry> entries_;
};

inline void ingest_task(ClassMeanPool& pool, const FeatureSnapshot& train,
                        std::uint32_t task_index) {
    for (std::uint32_t cls : train.classes)
        if (pool.contains(cls))
            throw DuplicateClass("ingest_task: class " + std::to_string(cls) +
                                 " already in pool");
    ClassMeans cm = class_means(train); // EmptyClass surfaces here
    for (std::size_t j = 0; j < cm.classes.size(); ++j) {
        PoolEntry e;
        e.mean = cm.means.col(j);
        e.sample_count = cm.counts[j];
        e.task_of_origin = task_index;
        pool.insert(cm.classes[j], std::move(e));
    }
}

// ---------------------------------------------------------------------------
// Pool persistence (binary, 64-bit means on disk)
// ---------------------------------------------------------------------------

inline void save_pool(const ClassMeanPool& pool, const std::string& path) {
    std::string out;
    out += "POOL";
    out.push_back(static_cast<char>(1));
    io_detail::put_u32(out, static_cast<std::uint32_t>(pool.dim()));
    io_detail::put_u64(out, static_cast<std::uint64_t>(pool.size()));
    for (const auto& [cls, entry] : pool.entries()) {
        io_detail::put_u32(out, cls);
        io_detail::put_u64(out, entry.sample_count);
        io_detail::put_u32(out, entry.task_of_origin);
        for (double v : entry.mean) io_detail::put_f64(out, v);
    }
    io_detail::spill(path, out);
}

inline ClassMeanPool load_pool(const std::string& path) {
    std::string bytes = io_detail::slurp(path);
    io_detail::Reader r(bytes, path);
    if (r.raw(4) != "POOL") throw FormatError(path + ": bad magic, expected POOL");
    std::uint8_t version = r.u8();
    if (version != 1)
        throw FormatError(path + ": unsupported pool version " + std::to_string(version));
    const std::uint32_t dim = r.u32();
    const std::uint64_t count = r.u64();

    ClassMeanPool pool(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t cls = r.u32();
        PoolEntry e;
        e.sample_count = r.u64();
        e.task_of_origin = r.u32();
        e.mean.resize(dim);
        for (std::uint32_t j = 0; j < dim; ++j) e.mean[j] = r.f64();
        pool.insert(cls, std::move(e));
    }
    r.expect_end();
    return pool;
}

// ---------------------------------------------------------------------------
// Task streams
// ---------------------------------------------------------------------------

struct Task {
    std::vector<std::uint32_t> classes;
    FeatureSnapshot train;
    FeatureSnapshot test;
};

struct TaskStream {
    std::size_t dim = 0;
    std::vector<Task> tasks;
    std::size_t total_classes = 0;
};

// Validates disjoint class sets, train labels within the task, and test
// labels within the classes seen so far.
inline TaskStream make_stream(std::size_t dim, std::vector<Task> tasks) {
    if (tasks.empty()) throw EmptyInput("make_stream: no tasks");

    std::map<std::uint32_t, std::size_t> owner;
    std::set<std::uint32_t> offending;
    for (std::size_t t = 0; t < tasks.size(); ++t)
        for (std::uint32_t c : tasks[t].classes)
            if (!owner.emplace(c, t).second) offending.insert(c);
    if (!offending.empty()) {
        std::string msg = "make_stream: task class sets overlap on:";
        for (std::uint32_t c : offending) msg += " " + std::to_string(c);
        throw OverlapError(msg);
    }

    std::set<std::uint32_t> seen;
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const Task& task = tasks[t];
        if (task.train.dim != dim || task.test.dim != dim)
            throw DimensionError("make_stream: snapshot dim disagrees with stream dim");
        std::set<std::uint32_t> own(task.classes.begin(), task.classes.end());
        for (const auto& [label, f] : task.train.samples)
            if (!own.count(label))
                throw UnknownClass("make_stream: train label " + std::to_string(label) +
                                   " outside task " + std::to_string(t + 1));
        seen.insert(own.begin(), own.end());
        for (const auto& [label, f] : task.test.samples)
            if (!seen.count(label))
                throw UnknownClass("make_stream: test label " + std::to_string(label) +
                                   " not seen by task " + std::to_string(t + 1));
    }

    TaskStream s;
    s.dim = dim;
    s.tasks = std::move(tasks);
    s.total_classes = owner.size();
    return s;
}

inline TaskStream build_stream(const StreamManifest& m) {
    std::vector<Task> tasks;
    tasks.reserve(m.tasks.size());
    for (const ManifestTask& mt : m.tasks) {
        Task t;
        t.classes = mt.classes;
        t.train = read_embeddings(mt.train_path);
        t.test = read_embeddings(mt.test_path);
        tasks.push_back(std::move(t));
    }
    return make_stream(m.dim, std::move(tasks));
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

struct Prediction {
    std::uint32_t slot = 0; // argmax anchor column; ties go to the lowest slot
    Vec scores;             // cosine to each anchor
};

inline Prediction predict(const Vec& feature, const EtfClassifier& clf,
                          const AlignmentLayer* layer = nullptr) {
    if (feature.size() != clf.dim) throw DimensionError("predict: feature dim mismatch");
    if (norm(feature) < 1e-12) throw DegenerateInput("predict: zero feature");

    Vec f = layer ? forward(*layer, feature).y : feature;
    const double fnorm = norm(f);

    Prediction p;
    p.scores.resize(clf.num_classes);
    for (std::size_t k = 0; k < clf.num_classes; ++k) {
        Vec wk = clf.anchors.col(k);
        p.scores[k] = dot(f, wk) / (fnorm * norm(wk));
        if (p.scores[k] > p.scores[p.slot]) p.slot = static_cast<std::uint32_t>(k);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Stream runner
// ---------------------------------------------------------------------------

struct AblationFlags {
    bool dynamic_etf = true;
    bool init_align = true;
    bool pap_loss = true;
};

struct EngineOptions {
    bool align_test = true;       // map test features through the layer
    bool ce_on_pool = true;       // pool means join the CE stream
    bool regenerate_basis = false; // rebuild U wholesale on expansion
    bool identity_align = false;  // zero-init layers (with lr0 = 0: no alignment at all)
    double pinv_tol = 1e-10;
    std::size_t hidden_dim = 0;   // 0 = feature dim
};

struct StageReport {
    std::uint32_t task = 0;      // 1-based stage index
    std::size_t num_classes = 0; // classes seen after this stage (K_t)
    double accuracy = 0.0;       // A_t over all seen classes' test data
    double old_class_accuracy = 0.0; // same, restricted to pre-stage classes (0 at t=1)
    NcReport nc;                 // aligned pooled means vs current anchors
};

struct EvalReport {
    std::vector<StageReport> stages;
    double average_accuracy = 0.0; // mean of A_t
    AblationFlags flags;
    TrainConfig config;
    EngineOptions options;
    std::uint64_t seed = 0;
};

struct RunResult {
    EvalReport report;
    EtfClassifier classifier;
    AlignmentLayer layer;
    ClassMeanPool pool;
    std::vector<std::vector<EpochLog>> training_logs; // one per task
};

inline double mean_accuracy(const std::vector<double>& per_stage) {
    if (per_stage.empty()) throw EmptyInput("mean_accuracy: no stages");
    double sum = 0.0;
    for (double a : per_stage) sum += a;
    return sum / static_cast<double>(per_stage.size());
}

inline RunResult run_stream(const TaskStream& stream, const TrainConfig& cfg,
                            const AblationFlags& flags, std::uint64_t seed,
                            const EngineOptions& opts = {}) {
    validate(cfg);
    if (stream.tasks.empty()) throw EmptyInput("run_stream: empty stream");
    if (stream.total_classes > stream.dim)
        throw ConfigError("run_stream: stream classes exceed feature dim");

    const std::size_t d = stream.dim;
    const std::size_t hidden = opts.hidden_dim ? opts.hidden_dim : d;
    const std::uint64_t etf_seed = derive_seed(seed, 1);

    // Anchor slots are assigned in task order, ascending class id within a
    // task, for both the dynamic and the fixed classifier.
    std::map<std::uint32_t, std::uint32_t> slot_of;
    {
        std::uint32_t next = 0;
        for (const Task& task : stream.tasks) {
            std::vector<std::uint32_t> sorted = task.classes;
            std::sort(sorted.begin(), sorted.end());
            for (std::uint32_t c : sorted) slot_of[c] = next++;
        }
    }

    RunResult run;
    run.pool = ClassMeanPool(d);

    EtfClassifier clf;
    AlignmentLayer layer;
    bool have_layer = false;

    std::vector<const FeatureSnapshot*> seen_tests;
    std::set<std::uint32_t> prior_classes;

    EvalReport& report = run.report;
    report.flags = flags;
    report.config = cfg;
    report.options = opts;
    report.seed = seed;

    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
        const Task& task = stream.tasks[t];
        const std::uint32_t stage = static_cast<std::uint32_t>(t + 1);

        ingest_task(run.pool, task.train, stage);
        const std::size_t k_seen = run.pool.size();

        if (t == 0) {
            std::size_t k_init = flags.dynamic_etf ? k_seen : stream.total_classes;
            clf = init_classifier(d, k_init, etf_seed);
        } else if (flags.dynamic_etf) {
            clf = expand(clf, k_seen, opts.regenerate_basis);
        }

        if (!have_layer || flags.init_align) {
            layer = opts.identity_align ? zero_layer(d, hidden)
                                        : init_layer(d, hidden, derive_seed(seed, 100 + stage));
            have_layer = true;
        }

        // Slot-labeled training inputs for this stage.
        std::vector<std::pair<std::uint32_t, Vec>> pool_means;
        for (const auto& [cls, entry] : run.pool.entries())
            pool_means.emplace_back(slot_of.at(cls), entry.mean);
        std::vector<std::pair<std::uint32_t, Vec>> samples;
        samples.reserve(task.train.samples.size());
        for (const auto& [cls, f] : task.train.samples)
            samples.emplace_back(slot_of.at(cls), f);

        TrainConfig task_cfg = cfg;
        task_cfg.seed = derive_seed(seed, 200 + stage);
        TrainOptions topts;
        topts.use_pap = flags.pap_loss;
        topts.ce_on_pool = opts.ce_on_pool;
        TrainResult trained = train_alignment(layer, pool_means, samples, clf, task_cfg, topts);
        layer = std::move(trained.layer);
        run.training_logs.push_back(std::move(trained.log));

        // Cumulative evaluation over every test snapshot seen so far.
        seen_tests.push_back(&task.test);
        std::size_t correct = 0, total = 0, old_correct = 0, old_total = 0;
        const AlignmentLayer* infer_layer = opts.align_test ? &layer : nullptr;
        for (const FeatureSnapshot* snap : seen_tests) {
            for (const auto& [cls, f] : snap->samples) {
                Prediction p = predict(f, clf, infer_layer);
                bool ok = p.slot == slot_of.at(cls);
                ++total;
                correct += ok;
                if (prior_classes.count(cls)) {
                    ++old_total;
                    old_correct += ok;
                }
            }
        }

        StageReport sr;
        sr.task = stage;
        sr.num_classes = k_seen;
        sr.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
        sr.old_class_accuracy =
            old_total ? static_cast<double>(old_correct) / static_cast<double>(old_total) : 0.0;

        // NC diagnostics on the aligned pooled means against the anchors of
        // the classes seen so far (the fixed classifier may hold more).
        {
            std::vector<std::pair<std::uint32_t, Vec>> aligned;
            Matrix seen_anchors(d, k_seen);
            std::size_t col = 0;
            for (const auto& [cls, entry] : run.pool.entries()) {
                aligned.emplace_back(static_cast<std::uint32_t>(col),
                                     forward(layer, entry.mean).y);
                seen_anchors.set_col(col, clf.anchors.col(slot_of.at(cls)));
                ++col;
            }
            FeatureSnapshot means_snap = make_snapshot(d, std::move(aligned));
            sr.nc = compute_report(means_snap, &seen_anchors, opts.pinv_tol);
        }

        report.stages.push_back(std::move(sr));
        prior_classes.insert(task.classes.begin(), task.classes.end());
    }

    std::vector<double> accs;
    accs.reserve(report.stages.size());
    for (const StageReport& sr : report.stages) accs.push_back(sr.accuracy);
    report.average_accuracy = mean_accuracy(accs);

    run.classifier = std::move(clf);
    run.layer = std::move(layer);
    return run;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json nc_report_to_json(const NcReport& r) {
    nlohmann::ordered_json j;
    j["num_classes"] = r.num_classes;
    j["nc1"] = r.nc1;
    j["nc2"] = r.nc2;
    if (r.nc3)
        j["nc3"] = *r.nc3;
    else
        j["nc3"] = nullptr;
    j["trace_sigma_w"] = r.trace_sigma_w;
    j["trace_sigma_b"] = r.trace_sigma_b;
    return j;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["flags"] = {{"dynamic_etf", r.flags.dynamic_etf},
                  {"init_align", r.flags.init_align},
                  {"pap_loss", r.flags.pap_loss}};
    j["config"] = {{"epochs", r.config.epochs},
                   {"lr0", r.config.lr0},
                   {"lr_min", r.config.lr_min},
                   {"momentum", r.config.momentum},
                   {"weight_decay", r.config.weight_decay},
                   {"batch_size", r.config.batch_size},
                   {"temperature", r.config.temperature},
                   {"seed", r.seed},
                   {"align_test", r.options.align_test},
                   {"ce_on_pool", r.options.ce_on_pool},
                   {"regenerate_basis", r.options.regenerate_basis},
                   {"pinv_tol", r.options.pinv_tol}};
    j["stages"] = nlohmann::ordered_json::array();
    for (const StageReport& s : r.stages) {
        nlohmann::ordered_json js;
        js["task"] = s.task;
        js["K_t"] = s.num_classes;
        js["A_t"] = s.accuracy;
        js["old_class_accuracy"] = s.old_class_accuracy;
        js["nc1"] = s.nc.nc1;
        js["nc2"] = s.nc.nc2;
        js["nc3"] = s.nc.nc3 ? nlohmann::ordered_json(*s.nc.nc3) : nullptr;
        j["stages"].push_back(std::move(js));
    }
    j["average_accuracy"] = r.average_accuracy;
    return j;
}

inline std::string report_to_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "task,K_t,A_t,nc1,nc2,nc3\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << buf;
    };
    for (const StageReport& s : r.stages) {
        out << s.task << ',' << s.num_classes << ',';
        put(s.accuracy);
        out << ',';
        put(s.nc.nc1);
        out << ',';
        put(s.nc.nc2);
        out << ',';
        if (s.nc.nc3) put(*s.nc.nc3);
        out << "\n";
    }
    return out.str();
}

} // namespace ncil
