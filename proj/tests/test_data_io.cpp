#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "ncil/data_io.hpp"
#include "ncil/ncmetrics.hpp"

using namespace ncil;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
    fs::path p = fs::temp_directory_path() / "ncil_data_io_tests";
    fs::create_directories(p);
    return p;
}

std::string slurp_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("EMB1 round-trip", "[data_io]") {
    Rng rng(1);
    std::vector<std::pair<std::uint32_t, Vec>> records;
    for (int i = 0; i < 100; ++i)
        records.push_back({rng.index(7) == 0 ? 5u : static_cast<std::uint32_t>(rng.index(4)),
                           rng.gaussian_vec(6)});

    fs::path p = test_dir() / "roundtrip.emb";
    write_embeddings(p.string(), records, 6);
    FeatureSnapshot snap = read_embeddings(p.string());
    REQUIRE(snap.samples.size() == 100);
    REQUIRE(snap.dim == 6);
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(snap.samples[i].first == records[i].first);
        for (std::size_t j = 0; j < 6; ++j)
            // equality after binary32 quantization
            CHECK(snap.samples[i].second[j] ==
                  static_cast<double>(static_cast<float>(records[i].second[j])));
    }
}

TEST_CASE("EMB1 format errors", "[data_io]") {
    fs::path p = test_dir() / "bad.emb";

    SECTION("wrong magic") {
        std::ofstream(p, std::ios::binary) << "EMB2" << std::string(13, '\0');
        CHECK_THROWS_AS(read_embeddings(p.string()), FormatError);
    }

    SECTION("wrong version byte") {
        std::string bytes = "EMB1";
        bytes.push_back(2);
        bytes += std::string(12, '\0');
        std::ofstream(p, std::ios::binary) << bytes;
        CHECK_THROWS_AS(read_embeddings(p.string()), FormatError);
    }

    SECTION("truncated records") {
        std::vector<std::pair<std::uint32_t, Vec>> records = {{0, {1.0, 2.0}}, {1, {3.0, 4.0}}};
        write_embeddings(p.string(), records, 2);
        std::string bytes = slurp_file(p);
        std::ofstream(p, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
        CHECK_THROWS_AS(read_embeddings(p.string()), FormatError);
    }

    SECTION("trailing garbage") {
        std::vector<std::pair<std::uint32_t, Vec>> records = {{0, {1.0, 2.0}}};
        write_embeddings(p.string(), records, 2);
        std::ofstream(p, std::ios::binary | std::ios::app) << "xx";
        CHECK_THROWS_AS(read_embeddings(p.string()), FormatError);
    }

    SECTION("missing file") {
        CHECK_THROWS_AS(read_embeddings((test_dir() / "nope.emb").string()), IoError);
    }

    SECTION("mixed record dims rejected at write") {
        std::vector<std::pair<std::uint32_t, Vec>> records = {{0, {1.0, 2.0}}, {1, {3.0}}};
        CHECK_THROWS_AS(write_embeddings(p.string(), records, 2), DimensionError);
    }
}

TEST_CASE("empty EMB1 file is exactly the 17-byte header", "[data_io]") {
    fs::path p = test_dir() / "empty.emb";
    write_embeddings(p.string(), {}, 5);
    CHECK(fs::file_size(p) == 17);
}

TEST_CASE("CSV embeddings round-trip within binary32", "[data_io]") {
    Rng rng(2);
    std::vector<std::pair<std::uint32_t, Vec>> records;
    for (int i = 0; i < 25; ++i)
        records.push_back({static_cast<std::uint32_t>(rng.index(3)), rng.gaussian_vec(4)});

    fs::path p = test_dir() / "roundtrip.csv";
    write_embeddings_csv(p.string(), records, 4);
    FeatureSnapshot snap = read_embeddings_csv(p.string());
    REQUIRE(snap.samples.size() == 25);
    for (std::size_t i = 0; i < 25; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(static_cast<float>(snap.samples[i].second[j]) ==
                  static_cast<float>(records[i].second[j]));

    SECTION("header is the documented key set") {
        std::string head = slurp_file(p).substr(0, 14);
        CHECK(head == "label,f0,f1,f2");
    }

    SECTION("bad header rejected") {
        std::ofstream(p) << "nope,f0\n0,1.0\n";
        CHECK_THROWS_AS(read_embeddings_csv(p.string()), FormatError);
    }
}

TEST_CASE("manifest parsing", "[data_io]") {
    fs::path dir = test_dir();

    SECTION("valid two-task manifest") {
        fs::path p = dir / "ok.toml";
        std::ofstream(p) << "dim = 4\n"
                            "[config]\n"
                            "epochs = 7\n"
                            "[[tasks]]\n"
                            "classes = [0, 1]\n"
                            "train = \"a_train.emb\"\n"
                            "test = \"a_test.emb\"\n"
                            "[[tasks]]\n"
                            "classes = [2]\n"
                            "train = \"b_train.emb\"\n"
                            "test = \"b_test.emb\"\n";
        StreamManifest m = load_manifest(p.string());
        CHECK(m.dim == 4);
        CHECK(m.tasks.size() == 2);
        CHECK(m.total_classes == 3);
        CHECK(m.config.at("epochs") == "7");
        // relative paths resolve against the manifest directory
        CHECK(m.tasks[0].train_path == (dir / "a_train.emb").string());
    }

    SECTION("overlapping classes name the offender") {
        fs::path p = dir / "overlap.toml";
        std::ofstream(p) << "dim = 4\n"
                            "[[tasks]]\n"
                            "classes = [7, 1]\n"
                            "train = \"a.emb\"\ntest = \"b.emb\"\n"
                            "[[tasks]]\n"
                            "classes = [7]\n"
                            "train = \"c.emb\"\ntest = \"d.emb\"\n";
        try {
            load_manifest(p.string());
            FAIL("expected OverlapError");
        } catch (const OverlapError& e) {
            CHECK(std::string(e.what()).find("7") != std::string::npos);
        }
    }

    SECTION("missing train path") {
        fs::path p = dir / "nopath.toml";
        std::ofstream(p) << "dim = 4\n[[tasks]]\nclasses = [0, 1]\ntest = \"b.emb\"\n";
        CHECK_THROWS_AS(load_manifest(p.string()), FormatError);
    }

    SECTION("missing dim") {
        fs::path p = dir / "nodim.toml";
        std::ofstream(p) << "[[tasks]]\nclasses = [0]\ntrain = \"a\"\ntest = \"b\"\n";
        CHECK_THROWS_AS(load_manifest(p.string()), FormatError);
    }
}

TEST_CASE("synthetic generator basics", "[data_io]") {
    fs::path dir = test_dir() / "synth_basic";

    SECTION("noise-free stream collapses to the centers") {
        SynthSpec spec;
        spec.dim = 8;
        spec.classes = 4;
        spec.tasks = 2;
        spec.samples_per_class = 10;
        spec.sigma = 0.0;
        spec.theta = 0.0;
        spec.delta = 0.0;
        spec.seed = 5;
        StreamManifest m = generate_synthetic(spec, dir.string());

        for (const ManifestTask& task : m.tasks) {
            FeatureSnapshot train = read_embeddings(task.train_path);
            // all samples of a class identical => nc1 would be 0; check directly
            std::map<std::uint32_t, Vec> first;
            for (const auto& [label, f] : train.samples) {
                auto [it, fresh] = first.emplace(label, f);
                if (!fresh) REQUIRE(f == it->second);
            }
            REQUIRE(nc1(train) == 0.0);
        }
    }

    SECTION("same spec and seed give byte-identical files") {
        SynthSpec spec;
        spec.dim = 6;
        spec.classes = 4;
        spec.tasks = 2;
        spec.samples_per_class = 8;
        spec.sigma = 0.1;
        spec.theta = 0.2;
        spec.delta = 0.01;
        spec.seed = 12;
        fs::path d1 = test_dir() / "synth_rep1", d2 = test_dir() / "synth_rep2";
        generate_synthetic(spec, d1.string());
        generate_synthetic(spec, d2.string());
        for (const char* name :
             {"manifest.toml", "task1_train.emb", "task1_test.emb", "task2_test.emb"})
            REQUIRE(slurp_file(d1 / name) == slurp_file(d2 / name));
    }

    SECTION("contiguous partition") {
        auto parts = contiguous_partition(6, 3);
        REQUIRE(parts == std::vector<std::vector<std::uint32_t>>{{0, 1}, {2, 3}, {4, 5}});
    }

    SECTION("spec validation") {
        SynthSpec bad;
        bad.classes = 10;
        bad.dim = 4;
        CHECK_THROWS_AS(validate(bad), ConfigError);
    }
}

TEST_CASE("synthetic benchmark is solvable and drift is nontrivial", "[data_io]") {
    // Nearest-class-mean classification with pooled (first-view) class means.
    auto ncm_accuracy = [](const StreamManifest& m, std::size_t stage,
                           bool only_old_classes) {
        std::map<std::uint32_t, Vec> means;
        std::set<std::uint32_t> current;
        for (std::size_t t = 0; t <= stage; ++t) {
            FeatureSnapshot train = read_embeddings(m.tasks[t].train_path);
            ClassMeans cm = class_means(train);
            for (std::size_t j = 0; j < cm.classes.size(); ++j)
                means.emplace(cm.classes[j], cm.means.col(j));
        }
        current.insert(m.tasks[stage].classes.begin(), m.tasks[stage].classes.end());

        std::size_t hits = 0, total = 0;
        for (std::size_t t = 0; t <= stage; ++t) {
            FeatureSnapshot test = read_embeddings(m.tasks[t].test_path);
            for (const auto& [label, f] : test.samples) {
                if (only_old_classes && current.count(label)) continue;
                double best = -1e300;
                std::uint32_t arg = 0;
                for (const auto& [cls, mean] : means) {
                    double s = dot(f, mean) / (norm(f) * norm(mean));
                    if (s > best) {
                        best = s;
                        arg = cls;
                    }
                }
                ++total;
                hits += arg == label;
            }
        }
        return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
    };

    SECTION("small noise, no drift: NCM is perfect") {
        SynthSpec spec;
        spec.dim = 16;
        spec.classes = 6;
        spec.tasks = 3;
        spec.samples_per_class = 20;
        spec.sigma = 0.05;
        spec.theta = 0.0;
        spec.delta = 0.0;
        spec.seed = 7;
        StreamManifest m = generate_synthetic(spec, (test_dir() / "synth_easy").string());
        CHECK(ncm_accuracy(m, spec.tasks - 1, false) == 1.0);
    }

    SECTION("large rotation degrades old-class accuracy across stages") {
        // A plane rotation touches ~2/d of each center's mass, so drift only
        // bites when the space is low-dimensional relative to the class count.
        SynthSpec spec;
        spec.dim = 6;
        spec.classes = 6;
        spec.tasks = 3;
        spec.samples_per_class = 20;
        spec.sigma = 0.05;
        spec.theta = 1.5;
        spec.delta = 0.0;
        spec.seed = 7;
        StreamManifest m = generate_synthetic(spec, (test_dir() / "synth_drift").string());
        double first = ncm_accuracy(m, 0, false);
        double last = ncm_accuracy(m, spec.tasks - 1, true);
        CHECK(first == 1.0);
        CHECK(last < first - 0.05);
    }
}
