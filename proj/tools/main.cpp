// ncil command-line front end.
//
//   ncil run   --manifest m.toml [--out r.json] [--seed N] [training flags]
//   ncil nc    <embeddings.emb> [--classifier anchors.emb] [--pinv-tol T]
//   ncil synth --classes K --dim D --tasks T [--seed N] [noise flags]
//   ncil etf   --classes K --dim D [--seed N] [--out file.emb]
//
// Exit codes: 0 success, 2 configuration/input error, 1 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ncil/engine.hpp"

namespace {

struct RunArgs {
    std::string manifest;
    std::string out;     // empty = stdout
    std::string csv;     // optional stage table
    std::string log;     // optional JSONL training log
    std::uint64_t seed = 0;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    std::optional<double> temperature;
    bool no_dynamic_etf = false;
    bool no_init_align = false;
    bool no_pap = false;
    bool no_align_test = false;
};

// CLI flag > manifest [config] entry > built-in default.
void apply_manifest_config(const ncil::StreamManifest& m, ncil::TrainConfig& cfg,
                           ncil::EngineOptions& opts) {
    auto get = [&](const char* key) -> const std::string* {
        auto it = m.config.find(key);
        return it == m.config.end() ? nullptr : &it->second;
    };
    auto as_double = [](const std::string& s, const char* key) {
        try {
            return std::stod(s);
        } catch (const std::exception&) {
            throw ncil::ConfigError(std::string("manifest config: bad value for ") + key);
        }
    };
    auto as_bool = [](const std::string& s, const char* key) {
        if (s == "true") return true;
        if (s == "false") return false;
        throw ncil::ConfigError(std::string("manifest config: bad boolean for ") + key);
    };

    if (const auto* v = get("epochs")) cfg.epochs = static_cast<std::size_t>(as_double(*v, "epochs"));
    if (const auto* v = get("lr0")) cfg.lr0 = as_double(*v, "lr0");
    if (const auto* v = get("lr_min")) cfg.lr_min = as_double(*v, "lr_min");
    if (const auto* v = get("momentum")) cfg.momentum = as_double(*v, "momentum");
    if (const auto* v = get("weight_decay")) cfg.weight_decay = as_double(*v, "weight_decay");
    if (const auto* v = get("batch_size"))
        cfg.batch_size = static_cast<std::size_t>(as_double(*v, "batch_size"));
    if (const auto* v = get("temperature")) cfg.temperature = as_double(*v, "temperature");
    if (const auto* v = get("pinv_tol")) opts.pinv_tol = as_double(*v, "pinv_tol");
    if (const auto* v = get("align_test")) opts.align_test = as_bool(*v, "align_test");
    if (const auto* v = get("ce_on_pool")) opts.ce_on_pool = as_bool(*v, "ce_on_pool");
    if (const auto* v = get("regenerate_basis"))
        opts.regenerate_basis = as_bool(*v, "regenerate_basis");
    if (const auto* v = get("hidden_dim"))
        opts.hidden_dim = static_cast<std::size_t>(as_double(*v, "hidden_dim"));
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::fwrite(text.data(), 1, text.size(), stdout);
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ncil::IoError("cannot write " + path);
    out << text;
}

int cmd_run(const RunArgs& args) {
    ncil::StreamManifest manifest;
    ncil::TaskStream stream;
    ncil::TrainConfig cfg;
    ncil::EngineOptions opts;
    ncil::AblationFlags flags;

    try {
        manifest = ncil::load_manifest(args.manifest);
        apply_manifest_config(manifest, cfg, opts);

        if (args.epochs) cfg.epochs = *args.epochs;
        if (args.lr) cfg.lr0 = *args.lr;
        if (args.temperature) cfg.temperature = *args.temperature;
        flags.dynamic_etf = !args.no_dynamic_etf;
        flags.init_align = !args.no_init_align;
        flags.pap_loss = !args.no_pap;
        opts.align_test = opts.align_test && !args.no_align_test;
        ncil::validate(cfg);

        stream = ncil::build_stream(manifest);
        if (stream.total_classes > stream.dim)
            throw ncil::ConfigError("stream classes exceed feature dim");
    } catch (const ncil::Error& e) {
        std::cerr << "ncil run: " << e.what() << "\n";
        return 2;
    }

    try {
        ncil::RunResult run = ncil::run_stream(stream, cfg, flags, args.seed, opts);
        write_text(args.out, ncil::report_to_json(run.report).dump(2) + "\n");
        if (!args.csv.empty()) write_text(args.csv, ncil::report_to_csv(run.report));
        if (!args.log.empty()) {
            std::ostringstream jsonl;
            for (std::size_t t = 0; t < run.training_logs.size(); ++t)
                for (const ncil::EpochLog& e : run.training_logs[t]) {
                    nlohmann::ordered_json j;
                    j["task"] = t + 1;
                    j["epoch"] = e.epoch;
                    j["lr"] = e.lr;
                    j["pap"] = e.pap;
                    j["ce"] = e.ce;
                    j["total"] = e.total;
                    jsonl << j.dump() << "\n";
                }
            write_text(args.log, jsonl.str());
        }
    } catch (const std::exception& e) {
        std::cerr << "ncil run: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_nc(const std::string& input, const std::string& classifier_path, double pinv_tol,
           const std::string& out) {
    ncil::FeatureSnapshot snap;
    std::optional<ncil::Matrix> anchors;
    try {
        snap = ncil::read_embeddings(input);
        if (!classifier_path.empty()) {
            ncil::FeatureSnapshot cs = ncil::read_embeddings(classifier_path);
            if (cs.dim != snap.dim)
                throw ncil::DimensionError("classifier dim disagrees with embeddings");
            std::vector<ncil::Vec> cols(cs.samples.size());
            for (const auto& [slot, f] : cs.samples) {
                if (slot >= cols.size())
                    throw ncil::FormatError("classifier labels must be 0..K-1 anchor slots");
                cols[slot] = f;
            }
            anchors = ncil::Matrix::from_columns(cs.dim, cols);
        }
    } catch (const ncil::Error& e) {
        std::cerr << "ncil nc: " << e.what() << "\n";
        return 2;
    }

    try {
        ncil::NcReport r =
            ncil::compute_report(snap, anchors ? &*anchors : nullptr, pinv_tol);
        write_text(out, ncil::nc_report_to_json(r).dump(2) + "\n");
    } catch (const std::exception& e) {
        std::cerr << "ncil nc: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_synth(const ncil::SynthSpec& spec, const std::string& out_dir) {
    try {
        ncil::validate(spec);
    } catch (const ncil::Error& e) {
        std::cerr << "ncil synth: " << e.what() << "\n";
        return 2;
    }
    try {
        ncil::generate_synthetic(spec, out_dir);
        std::cout << (std::filesystem::path(out_dir) / "manifest.toml").string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "ncil synth: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cmd_etf(std::size_t classes, std::size_t dim, std::uint64_t seed, const std::string& out) {
    ncil::EtfClassifier clf;
    try {
        clf = ncil::init_classifier(dim, classes, seed);
    } catch (const ncil::Error& e) {
        std::cerr << "ncil etf: " << e.what() << "\n";
        return 2;
    }
    try {
        std::vector<std::pair<std::uint32_t, ncil::Vec>> records;
        for (std::size_t k = 0; k < clf.num_classes; ++k)
            records.emplace_back(static_cast<std::uint32_t>(k), clf.anchors.col(k));
        ncil::write_embeddings(out, records, dim);
        std::cout << out << "\n";
    } catch (const std::exception& e) {
        std::cerr << "ncil etf: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural-collapse-guided class-incremental learning on precomputed embeddings"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "Run an incremental stream and report accuracy/NC");
    run->add_option("--manifest", run_args.manifest, "Stream manifest (TOML subset)")
        ->required();
    run->add_option("--out", run_args.out, "Report JSON path (default stdout)");
    run->add_option("--csv", run_args.csv, "Also write a per-stage CSV");
    run->add_option("--log", run_args.log, "Write per-epoch training log (JSON lines)");
    run->add_option("--seed", run_args.seed, "Master seed");
    std::size_t epochs_val = 0;
    double lr_val = 0.0, temp_val = 0.0;
    auto* epochs_opt = run->add_option("--epochs", epochs_val, "Training epochs per task");
    auto* lr_opt = run->add_option("--lr", lr_val, "Initial learning rate");
    auto* temp_opt = run->add_option("--temperature", temp_val, "CE cosine temperature");
    run->add_flag("--no-dynamic-etf", run_args.no_dynamic_etf,
                  "Fixed full-size ETF classifier from task 1");
    run->add_flag("--no-init-align", run_args.no_init_align,
                  "Reuse alignment parameters across tasks");
    run->add_flag("--no-pap", run_args.no_pap, "Drop the PAP loss term");
    run->add_flag("--no-align-test", run_args.no_align_test,
                  "Classify raw features instead of aligned ones");

    std::string nc_input, nc_classifier, nc_out;
    double nc_pinv_tol = 1e-10;
    auto* nc = app.add_subcommand("nc", "Neural-collapse metrics for an embedding file");
    nc->add_option("input", nc_input, "EMB1 embedding file")->required();
    nc->add_option("--classifier", nc_classifier,
                   "EMB1 anchor file (as written by `etf`) enabling NC3");
    nc->add_option("--pinv-tol", nc_pinv_tol, "Pseudoinverse eigenvalue cutoff");
    nc->add_option("--out", nc_out, "Report JSON path (default stdout)");

    ncil::SynthSpec spec;
    std::string synth_dir = ".";
    auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic drift stream");
    synth->add_option("--classes", spec.classes, "Total classes")->required();
    synth->add_option("--dim", spec.dim, "Feature dimension")->required();
    synth->add_option("--tasks", spec.tasks, "Task count")->required();
    synth->add_option("--samples", spec.samples_per_class, "Samples per class");
    synth->add_option("--sigma", spec.sigma, "Within-class noise");
    synth->add_option("--theta", spec.theta, "Per-task rotation angle (radians)");
    synth->add_option("--delta", spec.delta, "Per-task additive center noise");
    synth->add_option("--seed", spec.seed, "Master seed");
    synth->add_option("--out-dir", synth_dir, "Output directory (default .)");

    std::size_t etf_classes = 0, etf_dim = 0;
    std::uint64_t etf_seed = 0;
    std::string etf_out = "etf.emb";
    auto* etf = app.add_subcommand("etf", "Dump a freshly built ETF anchor matrix");
    etf->add_option("--classes", etf_classes, "Anchor count K")->required();
    etf->add_option("--dim", etf_dim, "Feature dimension")->required();
    etf->add_option("--seed", etf_seed, "Basis seed");
    etf->add_option("--out", etf_out, "Output EMB1 path (default etf.emb)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (run->parsed()) {
        if (epochs_opt->count()) run_args.epochs = epochs_val;
        if (lr_opt->count()) run_args.lr = lr_val;
        if (temp_opt->count()) run_args.temperature = temp_val;
        return cmd_run(run_args);
    }
    if (nc->parsed()) return cmd_nc(nc_input, nc_classifier, nc_pinv_tol, nc_out);
    if (synth->parsed()) return cmd_synth(spec, synth_dir);
    if (etf->parsed()) return cmd_etf(etf_classes, etf_dim, etf_seed, etf_out);
    return 2;
}
