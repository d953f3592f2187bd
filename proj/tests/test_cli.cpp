#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ncil/data_io.hpp"

using namespace ncil;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
    const char* p = std::getenv("NCIL_CLI");
    return p ? p : "";
}

fs::path test_dir() {
    fs::path p = fs::temp_directory_path() / "ncil_cli_tests";
    fs::create_directories(p);
    return p;
}

int run_cli(const std::string& args) {
    std::string cmd = cli_path() + " " + args + " >/dev/null 2>/dev/null";
    int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("cli help and exit codes", "[cli]") {
    if (cli_path().empty()) {
        WARN("NCIL_CLI not set; skipping CLI tests");
        return;
    }

    CHECK(run_cli("--help") == 0);
    for (const char* sub : {"run", "nc", "synth", "etf"})
        CHECK(run_cli(std::string(sub) + " --help") == 0);

    SECTION("unknown flags are rejected") {
        CHECK(run_cli("run --manifest x.toml --frobnicate") == 2);
    }

    SECTION("missing manifest exits 2") {
        CHECK(run_cli("run --manifest " + (test_dir() / "missing.toml").string()) == 2);
    }

    SECTION("etf with d < K exits 2") {
        CHECK(run_cli("etf --classes 9 --dim 8 --out " +
                      (test_dir() / "no.emb").string()) == 2);
    }
}

TEST_CASE("cli synth and etf produce inspectable files", "[cli]") {
    if (cli_path().empty()) return;

    SECTION("synth writes a manifest and task files") {
        fs::path dir = test_dir() / "synth_out";
        fs::remove_all(dir);
        REQUIRE(run_cli("synth --classes 6 --dim 16 --tasks 3 --seed 9 --out-dir " +
                        dir.string()) == 0);
        CHECK(fs::exists(dir / "manifest.toml"));
        std::size_t emb_files = 0;
        for (const auto& e : fs::directory_iterator(dir))
            emb_files += e.path().extension() == ".emb";
        CHECK(emb_files == 6);
        StreamManifest m = load_manifest((dir / "manifest.toml").string());
        CHECK(m.total_classes == 6);
        CHECK(m.tasks.size() == 3);
    }

    SECTION("etf dumps unit-norm anchors") {
        fs::path out = test_dir() / "anchors.emb";
        REQUIRE(run_cli("etf --classes 4 --dim 8 --seed 1 --out " + out.string()) == 0);
        FeatureSnapshot snap = read_embeddings(out.string());
        REQUIRE(snap.samples.size() == 4);
        for (const auto& [label, f] : snap.samples)
            CHECK(norm(f) == Catch::Approx(1.0).margin(1e-6)); // binary32 on disk
    }
}

TEST_CASE("cli nc subcommand", "[cli]") {
    if (cli_path().empty()) return;
    fs::path dir = test_dir();

    SECTION("collapsed fixture gives nc1 = 0") {
        std::vector<std::pair<std::uint32_t, Vec>> records = {
            {0, {1.0, 0.0}}, {0, {1.0, 0.0}}, {1, {0.0, 1.0}}, {1, {0.0, 1.0}}};
        fs::path emb = dir / "collapsed.emb";
        write_embeddings(emb.string(), records, 2);
        fs::path out = dir / "nc.json";
        REQUIRE(run_cli("nc " + emb.string() + " --out " + out.string()) == 0);
        std::string json = slurp_file(out);
        CHECK(json.find("\"nc1\": 0.0") != std::string::npos);
    }

    SECTION("single-class file fails") {
        fs::path emb = dir / "single.emb";
        write_embeddings(emb.string(), {{0, {1.0, 0.0}}, {0, {0.9, 0.1}}}, 2);
        CHECK(run_cli("nc " + emb.string()) != 0);
    }

    SECTION("anchors scored against themselves give nc2 ~ 0") {
        fs::path anchors = dir / "self.emb";
        REQUIRE(run_cli("etf --classes 4 --dim 8 --seed 3 --out " + anchors.string()) == 0);
        fs::path out = dir / "nc_self.json";
        REQUIRE(run_cli("nc " + anchors.string() + " --classifier " + anchors.string() +
                        " --out " + out.string()) == 0);
        auto j = nlohmann::json::parse(slurp_file(out));
        CHECK(j["nc2"].get<double>() < 1e-6);
        CHECK(j["nc3"].get<double>() < 1e-6);
    }
}

TEST_CASE("cli run writes identical reports for identical args", "[cli]") {
    if (cli_path().empty()) return;
    fs::path dir = test_dir() / "run_det";
    fs::remove_all(dir);
    REQUIRE(run_cli("synth --classes 4 --dim 8 --tasks 2 --samples 20 --sigma 0.05 "
                    "--theta 0.05 --seed 2 --out-dir " +
                    dir.string()) == 0);
    std::string manifest = (dir / "manifest.toml").string();

    fs::path r1 = dir / "r1.json", r2 = dir / "r2.json";
    std::string args = "run --manifest " + manifest + " --seed 1 --epochs 5 --out ";
    REQUIRE(run_cli(args + r1.string()) == 0);
    REQUIRE(run_cli(args + r2.string()) == 0);
    REQUIRE(slurp_file(r1) == slurp_file(r2));

    SECTION("--no-pap is echoed in the report") {
        fs::path r3 = dir / "r3.json";
        REQUIRE(run_cli(args + r3.string() + " --no-pap") == 0);
        auto j = nlohmann::json::parse(slurp_file(r3));
        CHECK(j["flags"]["pap_loss"] == false);
    }

    SECTION("--no-align-test is echoed in the report") {
        fs::path r4 = dir / "r4.json";
        REQUIRE(run_cli(args + r4.string() + " --no-align-test") == 0);
        auto j = nlohmann::json::parse(slurp_file(r4));
        CHECK(j["config"]["align_test"] == false);
    }

    SECTION("--log writes JSON lines with the expected keys") {
        fs::path r5 = dir / "r5.json", log = dir / "train.jsonl";
        REQUIRE(run_cli(args + r5.string() + " --log " + log.string()) == 0);
        std::istringstream lines(slurp_file(log));
        std::string line;
        std::size_t n = 0;
        while (std::getline(lines, line)) {
            auto j = nlohmann::json::parse(line);
            for (const char* key : {"task", "epoch", "lr", "pap", "ce", "total"})
                REQUIRE(j.contains(key));
            ++n;
        }
        CHECK(n == 2 * (5 + 1)); // two tasks, epochs+1 entries each
    }
}

TEST_CASE("cli config precedence: flag beats manifest beats default", "[cli]") {
    if (cli_path().empty()) return;
    fs::path dir = test_dir() / "precedence";
    fs::remove_all(dir);
    REQUIRE(run_cli("synth --classes 4 --dim 8 --tasks 2 --samples 10 --seed 4 --out-dir " +
                    dir.string()) == 0);

    // splice a [config] table into the generated manifest, after the dim line
    std::string manifest = slurp_file(dir / "manifest.toml");
    std::size_t eol = manifest.find('\n');
    REQUIRE(eol != std::string::npos);
    std::ofstream(dir / "manifest.toml") << manifest.substr(0, eol + 1) +
                                                "[config]\nepochs = 3\n" +
                                                manifest.substr(eol + 1);

    fs::path out = dir / "report.json";
    std::string base = "run --manifest " + (dir / "manifest.toml").string() + " --out ";
    REQUIRE(run_cli(base + out.string()) == 0);
    CHECK(nlohmann::json::parse(slurp_file(out))["config"]["epochs"] == 3);

    REQUIRE(run_cli(base + out.string() + " --epochs 2") == 0);
    CHECK(nlohmann::json::parse(slurp_file(out))["config"]["epochs"] == 2);
}
