#pragma once

// Embedding dataset files, task-split manifests, and the seeded synthetic
// drift generator.
//
// EMB1 binary layout (little-endian, normative):
//   bytes 0-3   magic "EMB1"
//   byte  4     version, currently 1
//   bytes 5-8   feature dimension d, uint32
//   bytes 9-16  record count, uint64
//   per record: uint32 label, then d IEEE-754 binary32 features
//
// Features are stored as binary32 but computed in binary64; the quantization
// boundary is at file I/O only. The CSV alternative has the header
// `label,f0,...,f{d-1}` and round-trips within binary32 precision.
//
// Manifest files are a flat TOML subset:
//   dim = 32
//   [config]            # optional scalar overrides, CLI flags win
//   epochs = 40
//   [[tasks]]
//   classes = [0, 1, 2]
//   train = "task1_train.emb"
//   test = "task1_test.emb"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ncil/errors.hpp"
#include "ncil/etf.hpp"
#include "ncil/linalg.hpp"
#include "ncil/ncmetrics.hpp"

namespace ncil {

namespace io_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

class Reader {
public:
    Reader(const std::string& bytes, std::string what)
        : bytes_(bytes), what_(std::move(what)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
                 << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
                 << (8 * i);
        pos_ += 8;
        return v;
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }

    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string raw(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void expect_end() const {
        if (pos_ != bytes_.size())
            throw FormatError(what_ + ": trailing bytes beyond declared records");
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw FormatError(what_ + ": truncated file");
    }

    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spill(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path);
}

} // namespace io_detail

// ---------------------------------------------------------------------------
// EMB1 binary embedding files
// ---------------------------------------------------------------------------

inline void write_embeddings(const std::string& path,
                             const std::vector<std::pair<std::uint32_t, Vec>>& records,
                             std::size_t dim) {
    std::string out;
    out.reserve(17 + records.size() * (4 + 4 * dim));
    out += "EMB1";
    out.push_back(static_cast<char>(1));
    io_detail::put_u32(out, static_cast<std::uint32_t>(dim));
    io_detail::put_u64(out, static_cast<std::uint64_t>(records.size()));
    for (const auto& [label, feature] : records) {
        if (feature.size() != dim)
            throw DimensionError("write_embeddings: record dim mismatch");
        io_detail::put_u32(out, label);
        for (double v : feature) io_detail::put_f32(out, static_cast<float>(v));
    }
    io_detail::spill(path, out);
}

inline FeatureSnapshot read_embeddings(const std::string& path) {
    std::string bytes = io_detail::slurp(path);
    io_detail::Reader r(bytes, path);
    if (r.raw(4) != "EMB1") throw FormatError(path + ": bad magic, expected EMB1");
    std::uint8_t version = r.u8();
    if (version != 1)
        throw FormatError(path + ": unsupported EMB1 version " + std::to_string(version));
    const std::uint32_t dim = r.u32();
    const std::uint64_t count = r.u64();

    std::vector<std::pair<std::uint32_t, Vec>> records;
    records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t label = r.u32();
        Vec f(dim);
        for (std::uint32_t j = 0; j < dim; ++j) f[j] = static_cast<double>(r.f32());
        records.emplace_back(label, std::move(f));
    }
    r.expect_end();
    return make_snapshot(dim, std::move(records));
}

// ---------------------------------------------------------------------------
// CSV embedding files
// ---------------------------------------------------------------------------

inline void write_embeddings_csv(const std::string& path,
                                 const std::vector<std::pair<std::uint32_t, Vec>>& records,
                                 std::size_t dim) {
    std::ostringstream out;
    out << "label";
    for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
    out << "\n";
    char buf[64];
    for (const auto& [label, feature] : records) {
        if (feature.size() != dim)
            throw DimensionError("write_embeddings_csv: record dim mismatch");
        out << label;
        for (double v : feature) {
            // quantize to binary32 so CSV and EMB1 carry the same values
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
            out << ',' << buf;
        }
        out << "\n";
    }
    io_detail::spill(path, out.str());
}

inline FeatureSnapshot read_embeddings_csv(const std::string& path) {
    std::string bytes = io_detail::slurp(path);
    std::istringstream in(bytes);
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty CSV");
    if (line.size() && line.back() == '\r') line.pop_back();
    if (line.rfind("label", 0) != 0) throw FormatError(path + ": bad CSV header");
    std::size_t dim = line.empty() ? 0 : static_cast<std::size_t>(
                                             std::count(line.begin(), line.end(), ',') );

    std::vector<std::pair<std::uint32_t, Vec>> records;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.size() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        if (!std::getline(row, cell, ','))
            throw FormatError(path + ": malformed row " + std::to_string(lineno));
        std::uint32_t label = 0;
        try {
            label = static_cast<std::uint32_t>(std::stoul(cell));
        } catch (const std::exception&) {
            throw FormatError(path + ": bad label on row " + std::to_string(lineno));
        }
        Vec f;
        f.reserve(dim);
        while (std::getline(row, cell, ',')) {
            try {
                f.push_back(static_cast<double>(std::stof(cell)));
            } catch (const std::exception&) {
                throw FormatError(path + ": bad value on row " + std::to_string(lineno));
            }
        }
        if (f.size() != dim)
            throw DimensionError(path + ": row " + std::to_string(lineno) +
                                 " has wrong field count");
        records.emplace_back(label, std::move(f));
    }
    return make_snapshot(dim, std::move(records));
}

// ---------------------------------------------------------------------------
// Stream manifests
// ---------------------------------------------------------------------------

struct ManifestTask {
    std::vector<std::uint32_t> classes;
    std::string train_path;
    std::string test_path;
};

struct StreamManifest {
    std::size_t dim = 0;
    std::vector<ManifestTask> tasks;
    std::size_t total_classes = 0;
    std::map<std::string, std::string> config; // raw [config] entries
};

namespace io_detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

inline std::string unquote(const std::string& s, const std::string& what) {
    if (s.size() < 2 || s.front() != '"' || s.back() != '"')
        throw FormatError(what + ": expected a quoted string, got '" + s + "'");
    return s.substr(1, s.size() - 2);
}

inline std::vector<std::uint32_t> parse_int_array(const std::string& s,
                                                  const std::string& what) {
    std::string t = trim(s);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']')
        throw FormatError(what + ": expected an array, got '" + s + "'");
    std::vector<std::uint32_t> out;
    std::istringstream in(t.substr(1, t.size() - 2));
    std::string cell;
    while (std::getline(in, cell, ',')) {
        cell = trim(cell);
        if (cell.empty()) continue;
        try {
            out.push_back(static_cast<std::uint32_t>(std::stoul(cell)));
        } catch (const std::exception&) {
            throw FormatError(what + ": bad integer '" + cell + "'");
        }
    }
    return out;
}

} // namespace io_detail

inline void validate_disjoint(const std::vector<ManifestTask>& tasks) {
    std::map<std::uint32_t, std::size_t> owner;
    std::set<std::uint32_t> offending;
    for (std::size_t t = 0; t < tasks.size(); ++t)
        for (std::uint32_t c : tasks[t].classes) {
            auto [it, inserted] = owner.emplace(c, t);
            if (!inserted) offending.insert(c);
        }
    if (!offending.empty()) {
        std::string msg = "task class sets overlap on:";
        for (std::uint32_t c : offending) msg += " " + std::to_string(c);
        throw OverlapError(msg);
    }
}

inline StreamManifest load_manifest(const std::string& path) {
    std::string bytes = io_detail::slurp(path);
    std::istringstream in(bytes);
    std::string line;

    StreamManifest m;
    bool have_dim = false;
    enum class Section { Top, Config, Task } section = Section::Top;
    std::size_t lineno = 0;

    while (std::getline(in, line)) {
        ++lineno;
        line = io_detail::trim(io_detail::strip_comment(line));
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);

        if (line == "[[tasks]]") {
            section = Section::Task;
            m.tasks.emplace_back();
            continue;
        }
        if (line == "[config]") {
            section = Section::Config;
            continue;
        }
        if (line.front() == '[')
            throw FormatError(where + ": unknown section " + line);

        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(where + ": expected key = value");
        std::string key = io_detail::trim(line.substr(0, eq));
        std::string value = io_detail::trim(line.substr(eq + 1));

        if (section == Section::Top) {
            if (key == "dim") {
                try {
                    m.dim = static_cast<std::size_t>(std::stoul(value));
                } catch (const std::exception&) {
                    throw FormatError(where + ": bad dim value");
                }
                have_dim = true;
            } else {
                throw FormatError(where + ": unknown top-level key " + key);
            }
        } else if (section == Section::Config) {
            m.config[key] = value;
        } else {
            ManifestTask& task = m.tasks.back();
            if (key == "classes")
                task.classes = io_detail::parse_int_array(value, where);
            else if (key == "train")
                task.train_path = io_detail::unquote(value, where);
            else if (key == "test")
                task.test_path = io_detail::unquote(value, where);
            else
                throw FormatError(where + ": unknown task key " + key);
        }
    }

    if (!have_dim) throw FormatError(path + ": missing dim");
    if (m.tasks.empty()) throw FormatError(path + ": no tasks");
    std::set<std::uint32_t> all;
    for (std::size_t t = 0; t < m.tasks.size(); ++t) {
        const ManifestTask& task = m.tasks[t];
        const std::string where = path + ": task " + std::to_string(t + 1);
        if (task.classes.empty()) throw FormatError(where + ": missing classes");
        if (task.train_path.empty()) throw FormatError(where + ": missing train file path");
        if (task.test_path.empty()) throw FormatError(where + ": missing test file path");
        all.insert(task.classes.begin(), task.classes.end());
    }
    validate_disjoint(m.tasks);
    m.total_classes = all.size();

    // Relative paths are resolved against the manifest's own directory.
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    for (ManifestTask& task : m.tasks) {
        auto resolve = [&](const std::string& p) {
            std::filesystem::path fp(p);
            return fp.is_absolute() ? p : (base / fp).string();
        };
        task.train_path = resolve(task.train_path);
        task.test_path = resolve(task.test_path);
    }
    return m;
}

inline void write_manifest(const std::string& path, const StreamManifest& m,
                           const std::vector<std::pair<std::string, std::string>>&
                               relative_paths /* (train, test) per task */) {
    if (relative_paths.size() != m.tasks.size())
        throw DimensionError("write_manifest: path list length mismatch");
    std::ostringstream out;
    out << "dim = " << m.dim << "\n";
    for (std::size_t t = 0; t < m.tasks.size(); ++t) {
        out << "\n[[tasks]]\n";
        out << "classes = [";
        for (std::size_t i = 0; i < m.tasks[t].classes.size(); ++i)
            out << (i ? ", " : "") << m.tasks[t].classes[i];
        out << "]\n";
        out << "train = \"" << relative_paths[t].first << "\"\n";
        out << "test = \"" << relative_paths[t].second << "\"\n";
    }
    io_detail::spill(path, out.str());
}

// ---------------------------------------------------------------------------
// Seeded synthetic drift generator
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::size_t dim = 32;
    std::size_t classes = 12;
    std::size_t tasks = 4;
    std::size_t samples_per_class = 50;
    double sigma = 0.05; // within-class noise
    double theta = 0.0;  // per-task rotation angle in a fixed random plane
    double delta = 0.0;  // per-task additive center noise
    std::uint64_t seed = 0;
};

inline void validate(const SynthSpec& spec) {
    if (spec.classes < 2 || spec.classes > spec.dim)
        throw ConfigError("SynthSpec: need 2 <= classes <= dim");
    if (spec.tasks < 1 || spec.tasks > spec.classes)
        throw ConfigError("SynthSpec: need 1 <= tasks <= classes");
    if (spec.samples_per_class < 2)
        throw ConfigError("SynthSpec: need at least 2 samples per class");
    if (spec.sigma < 0.0 || spec.delta < 0.0)
        throw ConfigError("SynthSpec: noise levels must be nonnegative");
    if (spec.theta < 0.0 || spec.theta >= 3.14159265358979323846)
        throw ConfigError("SynthSpec: theta must lie in [0, pi)");
}

// Contiguous class partition; remainder classes go to the earliest tasks.
inline std::vector<std::vector<std::uint32_t>> contiguous_partition(std::size_t classes,
                                                                    std::size_t tasks) {
    std::vector<std::vector<std::uint32_t>> out(tasks);
    std::size_t base = classes / tasks, rem = classes % tasks, next = 0;
    for (std::size_t t = 0; t < tasks; ++t) {
        std::size_t n = base + (t < rem ? 1 : 0);
        for (std::size_t i = 0; i < n; ++i)
            out[t].push_back(static_cast<std::uint32_t>(next++));
    }
    return out;
}

// Generates the stream under the manifest's directory. Class centers start
// uniform on the unit sphere; before each task after the first, every center
// is rotated by theta in one fixed seeded plane and perturbed by delta-scale
// Gaussian noise, so features sampled at task t reflect t-1 drift steps.
// Task t's train file holds 80% draws for its own classes; its test file
// holds 20%-size draws for every class seen so far, at the current drift.
inline StreamManifest generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
    validate(spec);
    std::filesystem::create_directories(out_dir);

    Rng rng(spec.seed);
    const std::size_t d = spec.dim;

    std::vector<Vec> centers(spec.classes);
    for (Vec& c : centers) c = normalized(rng.gaussian_vec(d));

    // Fixed rotation plane, drawn even when theta = 0 so parameter tweaks
    // leave the rest of the stream unchanged.
    Matrix plane = detail::orthonormal_columns(d, 2, Matrix(d, 0), rng);
    const Vec p = plane.col(0), q = plane.col(1);

    auto partition = contiguous_partition(spec.classes, spec.tasks);
    const std::size_t n_train =
        std::max<std::size_t>(1, (spec.samples_per_class * 4) / 5);
    const std::size_t n_test = spec.samples_per_class - n_train;

    StreamManifest m;
    m.dim = d;
    m.total_classes = spec.classes;
    std::vector<std::pair<std::string, std::string>> rel_paths;

    std::vector<std::uint32_t> seen;
    for (std::size_t t = 0; t < spec.tasks; ++t) {
        if (t > 0) {
            const double ct = std::cos(spec.theta), st = std::sin(spec.theta);
            for (Vec& c : centers) {
                double a = dot(p, c), b = dot(q, c);
                // rotate the (p, q)-plane component by theta
                axpy(ct * a - st * b - a, p, c);
                axpy(st * a + ct * b - b, q, c);
                if (spec.delta > 0.0) axpy(spec.delta, rng.gaussian_vec(d), c);
            }
        }

        seen.insert(seen.end(), partition[t].begin(), partition[t].end());

        std::vector<std::pair<std::uint32_t, Vec>> train, test;
        for (std::uint32_t c : seen) {
            bool current = std::find(partition[t].begin(), partition[t].end(), c) !=
                           partition[t].end();
            std::size_t draws = current ? spec.samples_per_class : n_test;
            for (std::size_t i = 0; i < draws; ++i) {
                Vec x = centers[c];
                if (spec.sigma > 0.0) axpy(spec.sigma, rng.gaussian_vec(d), x);
                if (current && i < n_train)
                    train.emplace_back(c, std::move(x));
                else
                    test.emplace_back(c, std::move(x));
            }
        }

        std::string train_rel = "task" + std::to_string(t + 1) + "_train.emb";
        std::string test_rel = "task" + std::to_string(t + 1) + "_test.emb";
        std::filesystem::path dir(out_dir);
        write_embeddings((dir / train_rel).string(), train, d);
        write_embeddings((dir / test_rel).string(), test, d);

        ManifestTask task;
        task.classes = partition[t];
        task.train_path = (dir / train_rel).string();
        task.test_path = (dir / test_rel).string();
        m.tasks.push_back(task);
        rel_paths.emplace_back(train_rel, test_rel);
    }

    write_manifest((std::filesystem::path(out_dir) / "manifest.toml").string(), m, rel_paths);
    return m;
}

} // namespace ncil
