// End-to-end tests that drive the installed binary through a shell, checking
// exit codes, emitted files, and stdout JSON.

#include "support/sha256.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

namespace {

namespace fs = std::filesystem;

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

fs::path work_dir() {
    static const fs::path dir =
        fs::temp_directory_path() / ("cmm_cli_" + std::to_string(getpid()));
    static const bool made = [&] {
        fs::remove_all(dir);
        fs::create_directories(dir);
        return true;
    }();
    (void)made;
    return dir;
}

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path out = work_dir() / ("stdout_" + std::to_string(counter));
    const fs::path err = work_dir() / ("stderr_" + std::to_string(counter));
    ++counter;

    const std::string command = std::string(CMM_CLI_PATH) + " " + args + " > " +
                                out.string() + " 2> " + err.string();
    const int status = std::system(command.c_str());

    CliResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = read_text(out);
    result.err = read_text(err);
    return result;
}

std::vector<std::uint8_t> slurp_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

/// Trains the two shared-seed task checkpoints used across the CLI tests.
void ensure_trained_pair() {
    static const bool done = [] {
        const fs::path base = work_dir();
        const std::string common =
            " --seed 42 --dim 6 --classes 3 --depth 2 --hidden 8 --samples 80 --epochs 8";
        CliResult a = run_cli("train-toy" + common + " --task-index 0 --out " +
                              (base / "model_a").string());
        CliResult b = run_cli("train-toy" + common + " --task-index 1 --out " +
                              (base / "model_b").string());
        REQUIRE(a.exit_code == 0);
        REQUIRE(b.exit_code == 0);
        return true;
    }();
    (void)done;
}

} // namespace

TEST_CASE("missing subcommand is a usage error") {
    const CliResult result = run_cli("");
    CHECK(result.exit_code == 1);
    CHECK(result.err.find("Usage") != std::string::npos);
}

TEST_CASE("unknown flags are rejected with usage text") {
    const CliResult result = run_cli("merge --bogus-flag 1 --out x");
    CHECK(result.exit_code == 1);
    CHECK(!result.err.empty());
}

TEST_CASE("train-toy writes a checkpoint, samples, and an eval summary") {
    ensure_trained_pair();
    const fs::path dir = work_dir() / "model_a";
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "weights.bin"));
    CHECK(fs::exists(dir / "samples.cmmx"));
}

TEST_CASE("merge emits per-layer diagnostics and a loadable checkpoint") {
    ensure_trained_pair();
    const fs::path base = work_dir();
    const std::string args = "merge --method com --model " + (base / "model_a").string() +
                             " --model " + (base / "model_b").string() + " --data " +
                             (base / "model_a" / "samples.cmmx").string() + " --data " +
                             (base / "model_b" / "samples.cmmx").string() + " --out " +
                             (base / "merged").string();
    const CliResult result = run_cli(args);
    REQUIRE(result.exit_code == 0);

    const nlohmann::json diag = nlohmann::json::parse(result.out);
    CHECK(diag["method"] == "com");
    REQUIRE(diag["per_layer_omega"].is_array());
    CHECK(diag["per_layer_omega"].size() == 2);
    for (const auto& omega : diag["per_layer_omega"]) {
        CHECK(omega.get<double>() >= 0.0);
    }
    CHECK(fs::exists(base / "merged" / "weights.bin"));
}

TEST_CASE("merge output is byte-identical across reruns") {
    ensure_trained_pair();
    const fs::path base = work_dir();
    for (const char* out : {"merged_rep1", "merged_rep2"}) {
        const std::string args = "merge --method com-weighted --model " +
                                 (base / "model_a").string() + " --model " +
                                 (base / "model_b").string() + " --data " +
                                 (base / "model_a" / "samples.cmmx").string() + " --data " +
                                 (base / "model_b" / "samples.cmmx").string() + " --out " +
                                 (base / out).string();
        REQUIRE(run_cli(args).exit_code == 0);
    }
    CHECK(testsupport::sha256_hex(slurp_bytes(base / "merged_rep1" / "weights.bin")) ==
          testsupport::sha256_hex(slurp_bytes(base / "merged_rep2" / "weights.bin")));
    CHECK(read_text(base / "merged_rep1" / "manifest.json") ==
          read_text(base / "merged_rep2" / "manifest.json"));
}

TEST_CASE("mismatched model and data counts exit before computing") {
    ensure_trained_pair();
    const fs::path base = work_dir();
    const std::string args = "merge --method com --model " + (base / "model_a").string() +
                             " --model " + (base / "model_b").string() + " --data " +
                             (base / "model_a" / "samples.cmmx").string() + " --out " +
                             (base / "merged_bad").string();
    const CliResult result = run_cli(args);
    CHECK(result.exit_code == 1);
    CHECK(!fs::exists(base / "merged_bad"));
}

TEST_CASE("mcs reports zero layer-1 shift") {
    ensure_trained_pair();
    const fs::path base = work_dir();
    REQUIRE(fs::exists(base / "merged"));
    const std::string args = "mcs --merged " + (base / "merged").string() + " --model " +
                             (base / "model_a").string() + " --data " +
                             (base / "model_a" / "samples.cmmx").string() + " --out " +
                             (base / "mcs.json").string();
    const CliResult result = run_cli(args);
    REQUIRE(result.exit_code == 0);

    const nlohmann::json report = nlohmann::json::parse(result.out);
    CHECK(report["layers"][0]["per_task"][0].get<double>() == 0.0);
    CHECK(report["grand_total"].get<double>() >= 0.0);
    CHECK(fs::exists(base / "mcs.json"));
    const nlohmann::json file_report = nlohmann::json::parse(read_text(base / "mcs.json"));
    CHECK(file_report == report);
}

TEST_CASE("eval reports accuracy from a regenerated task") {
    ensure_trained_pair();
    const fs::path base = work_dir();
    const std::string args = "eval --model " + (base / "model_a").string() +
                             " --seed 42 --task-index 0 --dim 6 --classes 3 --samples 80";
    const CliResult result = run_cli(args);
    REQUIRE(result.exit_code == 0);
    const nlohmann::json eval = nlohmann::json::parse(result.out);
    const double accuracy = eval["accuracy"].get<double>();
    CHECK(accuracy >= 0.0);
    CHECK(accuracy <= 1.0);
}

TEST_CASE("loading a missing checkpoint is a data error") {
    const CliResult result = run_cli("eval --model /nonexistent/dir");
    CHECK(result.exit_code == 2);
    CHECK(!result.err.empty());
}

TEST_CASE("experiment writes a report with every requested method") {
    const fs::path base = work_dir();
    const std::string args =
        "experiment --tasks 2 --dim 6 --classes 3 --depth 2 --hidden 8 "
        "--samples-per-split 60 --merge-samples 40 --epochs 6 --seed 7 "
        "--methods avg,com --out " +
        (base / "report.json").string();
    const CliResult result = run_cli(args);
    REQUIRE(result.exit_code == 0);

    const nlohmann::json summary = nlohmann::json::parse(result.out);
    REQUIRE(summary["methods"].size() == 2);
    CHECK(summary["methods"][0]["method"] == "average");
    CHECK(summary["methods"][1]["method"] == "com");

    const nlohmann::json report = nlohmann::json::parse(read_text(base / "report.json"));
    CHECK(report["config"]["seed"] == 7);
    CHECK(report["methods"].size() == 2);
    CHECK(report["finetuned"].size() == 2);
}
