#include "cmm/errors.hpp"
#include "cmm/harness.hpp"
#include "cmm/io.hpp"

#include "support/sha256.hpp"
#include "support/test_helpers.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

using cmm::DenseMatrix;
using cmm::SequentialModel;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& tag) {
    const fs::path dir =
        fs::temp_directory_path() / ("cmm_io_" + tag + "_" + std::to_string(getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::uint8_t> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
}

void dump(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

/// Model whose weights are all exactly representable in float32.
SequentialModel f32_model() {
    DenseMatrix w1(3, 5), w2(2, 4);
    for (std::size_t i = 0; i < w1.size(); ++i) {
        w1.data()[i] = (static_cast<double>(i) - 6.0) / 256.0;
    }
    for (std::size_t i = 0; i < w2.size(); ++i) {
        w2.data()[i] = (static_cast<double>(i) + 1.0) * 0.5;
    }
    std::vector<cmm::LinearLayer> layers(2);
    layers[0] = {"fc1", std::move(w1), true, cmm::ActivationKind::relu};
    layers[1] = {"fc2", std::move(w2), true, cmm::ActivationKind::identity};
    return SequentialModel(4, std::move(layers));
}

} // namespace

TEST_CASE("checkpoints round-trip exactly for f32-representable weights") {
    const fs::path dir = temp_dir("roundtrip");
    const SequentialModel model = f32_model();
    cmm::io::save_checkpoint(model, dir);
    const SequentialModel loaded = cmm::io::load_checkpoint(dir);

    CHECK(loaded.input_dim() == model.input_dim());
    REQUIRE(loaded.layer_count() == model.layer_count());
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        CHECK(loaded.layer(l).name == model.layer(l).name);
        CHECK(loaded.layer(l).has_bias == model.layer(l).has_bias);
        CHECK(loaded.layer(l).activation == model.layer(l).activation);
        CHECK(loaded.layer(l).weight.data() == model.layer(l).weight.data());
    }
    fs::remove_all(dir);
}

TEST_CASE("weights.bin stores row-major little-endian float32") {
    const fs::path dir = temp_dir("layout");
    std::vector<cmm::LinearLayer> layers(1);
    layers[0] = {"fc1", DenseMatrix{{1.0, 2.0}, {3.0, 4.0}}, false,
                 cmm::ActivationKind::identity};
    cmm::io::save_checkpoint(SequentialModel(2, std::move(layers)), dir);

    const std::vector<std::uint8_t> want = {
        0x00, 0x00, 0x80, 0x3F,  // 1.0f
        0x00, 0x00, 0x00, 0x40,  // 2.0f
        0x00, 0x00, 0x40, 0x40,  // 3.0f
        0x00, 0x00, 0x80, 0x40,  // 4.0f
    };
    CHECK(slurp(dir / "weights.bin") == want);
    fs::remove_all(dir);
}

TEST_CASE("blocks are zero-padded to 8-byte offsets") {
    const fs::path dir = temp_dir("padding");
    // 1x3 then 2x1: first block is 12 bytes, padded to 16.
    std::vector<cmm::LinearLayer> layers(2);
    layers[0] = {"fc1", DenseMatrix{{1.0, 1.0, 1.0}}, false, cmm::ActivationKind::identity};
    layers[1] = {"fc2", DenseMatrix{{1.0}, {1.0}}, false, cmm::ActivationKind::identity};
    cmm::io::save_checkpoint(SequentialModel(3, std::move(layers)), dir);

    const std::vector<std::uint8_t> blob = slurp(dir / "weights.bin");
    CHECK(blob.size() == 24);  // 16 + 8
    CHECK(blob[12] == 0);
    CHECK(blob[13] == 0);

    nlohmann::json manifest;
    std::ifstream(dir / "manifest.json") >> manifest;
    CHECK(manifest["layers"][0]["byte_offset"] == 0);
    CHECK(manifest["layers"][1]["byte_offset"] == 16);

    const SequentialModel loaded = cmm::io::load_checkpoint(dir);
    CHECK(loaded.layer(1).weight(1, 0) == 1.0);
    fs::remove_all(dir);
}

TEST_CASE("truncated blobs are rejected") {
    const fs::path dir = temp_dir("truncate");
    cmm::io::save_checkpoint(f32_model(), dir);
    std::vector<std::uint8_t> blob = slurp(dir / "weights.bin");
    blob.resize(blob.size() - 4);
    dump(dir / "weights.bin", blob);
    CHECK_THROWS_AS(cmm::io::load_checkpoint(dir), cmm::CorruptCheckpoint);
    fs::remove_all(dir);
}

TEST_CASE("unknown activation tags are rejected by name") {
    const fs::path dir = temp_dir("unknown_act");
    cmm::io::save_checkpoint(f32_model(), dir);

    nlohmann::ordered_json manifest;
    std::ifstream(dir / "manifest.json") >> manifest;
    manifest["layers"][0]["activation"] = "swish";
    std::ofstream(dir / "manifest.json") << manifest.dump(2);

    CHECK_THROWS_WITH_AS(cmm::io::load_checkpoint(dir),
                         doctest::Contains("unknown activation tag 'swish'"),
                         cmm::CorruptCheckpoint);
    fs::remove_all(dir);
}

TEST_CASE("future format versions are rejected") {
    const fs::path dir = temp_dir("version");
    cmm::io::save_checkpoint(f32_model(), dir);
    nlohmann::ordered_json manifest;
    std::ifstream(dir / "manifest.json") >> manifest;
    manifest["format_version"] = 2;
    std::ofstream(dir / "manifest.json") << manifest.dump(2);
    CHECK_THROWS_AS(cmm::io::load_checkpoint(dir), cmm::UnsupportedVersion);
    fs::remove_all(dir);
}

TEST_CASE("loader re-validates the dimension chain") {
    const fs::path dir = temp_dir("chain");
    cmm::io::save_checkpoint(f32_model(), dir);
    nlohmann::ordered_json manifest;
    std::ifstream(dir / "manifest.json") >> manifest;
    manifest["input_dim"] = 7;  // fc1 expects 4 inputs
    std::ofstream(dir / "manifest.json") << manifest.dump(2);
    CHECK_THROWS_AS(cmm::io::load_checkpoint(dir), cmm::InvalidModel);
    fs::remove_all(dir);
}

TEST_CASE("matrix files start with the CMMX magic") {
    const fs::path dir = temp_dir("magic");
    cmm::io::save_matrix(DenseMatrix{{1.0}}, dir / "m.cmmx");
    const std::vector<std::uint8_t> bytes = slurp(dir / "m.cmmx");
    REQUIRE(bytes.size() >= 4);
    CHECK(bytes[0] == 0x43);
    CHECK(bytes[1] == 0x4D);
    CHECK(bytes[2] == 0x4D);
    CHECK(bytes[3] == 0x58);
    fs::remove_all(dir);
}

TEST_CASE("empty matrices round-trip") {
    const fs::path dir = temp_dir("empty");
    cmm::io::save_matrix(DenseMatrix(0, 0), dir / "empty.cmmx");
    const DenseMatrix loaded = cmm::io::load_matrix(dir / "empty.cmmx");
    CHECK(loaded.rows() == 0);
    CHECK(loaded.cols() == 0);
    CHECK(slurp(dir / "empty.cmmx").size() == 24);  // header only
    fs::remove_all(dir);
}

TEST_CASE("matrix bytes are stable across save-load-save") {
    const fs::path dir = temp_dir("stable");
    const DenseMatrix m = testsupport::random_matrix(16, 128, 1234);
    cmm::io::save_matrix(m, dir / "a.cmmx");
    const std::string first = testsupport::sha256_hex(slurp(dir / "a.cmmx"));
    cmm::io::save_matrix(cmm::io::load_matrix(dir / "a.cmmx"), dir / "b.cmmx");
    const std::string second = testsupport::sha256_hex(slurp(dir / "b.cmmx"));
    CHECK(first == second);
    fs::remove_all(dir);
}

TEST_CASE("non-matrix files are rejected") {
    const fs::path dir = temp_dir("notmatrix");
    dump(dir / "bogus.cmmx", {'B', 'O', 'G', 'U', 'S'});
    CHECK_THROWS_AS(cmm::io::load_matrix(dir / "bogus.cmmx"), cmm::NotAMatrixFile);
    dump(dir / "short.cmmx", {'C', 'M', 'M', 'X', 1});
    CHECK_THROWS_AS(cmm::io::load_matrix(dir / "short.cmmx"), cmm::NotAMatrixFile);
    fs::remove_all(dir);
}

TEST_CASE("round-tripped models evaluate identically at f32 precision") {
    const auto tasks = cmm::gen_tasks(42, 1, 6, 3, 80);
    const SequentialModel init = cmm::make_mlp(6, {9}, 3, cmm::ActivationKind::relu, true, 42);
    const SequentialModel trained = cmm::train_model(init, tasks[0], {0.05, 10, 32, 42});

    const fs::path dir = temp_dir("evalrt");
    cmm::io::save_checkpoint(trained, dir);
    const SequentialModel loaded = cmm::io::load_checkpoint(dir);

    const cmm::EvalResult before = cmm::evaluate(trained, tasks[0]);
    const cmm::EvalResult after = cmm::evaluate(loaded, tasks[0]);
    CHECK(before.accuracy == after.accuracy);
    CHECK(after.loss == doctest::Approx(before.loss).epsilon(1e-5));
    fs::remove_all(dir);
}

TEST_CASE("seed-42 checkpoint bytes match the frozen digest") {
    const fs::path dir = temp_dir("digest");
    const SequentialModel model = cmm::make_mlp(16, {32, 32}, 4, cmm::ActivationKind::relu,
                                                true, 42);
    cmm::io::save_checkpoint(model, dir);
    const std::string digest = testsupport::sha256_hex(slurp(dir / "weights.bin"));
    CHECK(digest == "e47d9082ae1b2606aeb25085812c261e8da85963f93ed2487d26e9d373e0cc2c");
    fs::remove_all(dir);
}
