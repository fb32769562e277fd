#include "cmm/io.hpp"

#include "cmm/errors.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace cmm::io {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kMatrixVersion = 1;
constexpr char kMatrixMagic[4] = {'C', 'M', 'M', 'X'};
constexpr std::size_t kAlignment = 8;

std::size_t aligned_size(std::size_t bytes) {
    return (bytes + kAlignment - 1) / kAlignment * kAlignment;
}

// Explicit little-endian encoding keeps the formats identical on any host.

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int shift = 0; shift < 64; shift += 8) {
        out.push_back(static_cast<std::uint8_t>(v >> shift));
    }
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
    return static_cast<std::uint32_t>(in[at]) | static_cast<std::uint32_t>(in[at + 1]) << 8 |
           static_cast<std::uint32_t>(in[at + 2]) << 16 |
           static_cast<std::uint32_t>(in[at + 3]) << 24;
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t at) {
    std::uint64_t v = 0;
    for (int b = 7; b >= 0; --b) {
        v = v << 8 | in[at + static_cast<std::size_t>(b)];
    }
    return v;
}

float get_f32(const std::vector<std::uint8_t>& in, std::size_t at) {
    return std::bit_cast<float>(get_u32(in, at));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) {
        throw IoError("read failure on '" + path.string() + "'");
    }
    return bytes;
}

void write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) {
        throw IoError("write failure on '" + path.string() + "'");
    }
}

void append_matrix_f32(std::vector<std::uint8_t>& blob, const DenseMatrix& m,
                       const std::string& context) {
    for (double v : m.data()) {
        if (std::isnan(v)) {
            throw InvalidModel(context + ": NaN value cannot be serialized");
        }
        const float narrowed = static_cast<float>(v);
        if (!std::isfinite(narrowed)) {
            throw InvalidModel(context + ": value " + std::to_string(v) +
                               " exceeds float32 range");
        }
        put_f32(blob, narrowed);
    }
}

} // namespace

void save_checkpoint(const SequentialModel& model, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create checkpoint directory '" + dir.string() + "': " +
                      ec.message());
    }

    ordered_json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["input_dim"] = model.input_dim();
    manifest["layers"] = ordered_json::array();

    std::vector<std::uint8_t> blob;
    for (const LinearLayer& layer : model.layers()) {
        const std::size_t offset = blob.size();
        append_matrix_f32(blob, layer.weight, "layer '" + layer.name + "'");
        blob.resize(aligned_size(blob.size()), 0);

        ordered_json entry;
        entry["name"] = layer.name;
        entry["rows"] = layer.weight.rows();
        entry["cols"] = layer.weight.cols();
        entry["has_bias"] = layer.has_bias;
        entry["activation"] = to_string(layer.activation);
        entry["byte_offset"] = offset;
        manifest["layers"].push_back(std::move(entry));
    }

    write_json_file(manifest, dir / "manifest.json");
    write_file(dir / "weights.bin", blob.data(), blob.size());
}

SequentialModel load_checkpoint(const std::filesystem::path& dir) {
    const std::filesystem::path manifest_path = dir / "manifest.json";
    std::ifstream manifest_in(manifest_path);
    if (!manifest_in) {
        throw IoError("cannot open '" + manifest_path.string() + "'");
    }
    ordered_json manifest;
    try {
        manifest_in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint("manifest.json is not valid JSON: " + std::string(e.what()));
    }

    std::uint64_t version = 0;
    std::uint64_t input_dim = 0;
    try {
        version = manifest.at("format_version").get<std::uint64_t>();
        if (version != kCheckpointVersion) {
            throw UnsupportedVersion("checkpoint format_version " + std::to_string(version) +
                                     " is not supported (expected " +
                                     std::to_string(kCheckpointVersion) + ")");
        }
        input_dim = manifest.at("input_dim").get<std::uint64_t>();
        if (!manifest.at("layers").is_array() || manifest.at("layers").empty()) {
            throw CorruptCheckpoint("manifest has no layers");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpoint("manifest.json is missing required keys: " +
                                std::string(e.what()));
    }

    const std::vector<std::uint8_t> blob = read_file(dir / "weights.bin");

    std::vector<LinearLayer> layers;
    std::size_t expected_offset = 0;
    for (const auto& entry : manifest.at("layers")) {
        std::string name;
        std::string activation_tag;
        std::uint64_t rows = 0;
        std::uint64_t cols = 0;
        std::uint64_t offset = 0;
        bool has_bias = false;
        try {
            name = entry.at("name").get<std::string>();
            rows = entry.at("rows").get<std::uint64_t>();
            cols = entry.at("cols").get<std::uint64_t>();
            has_bias = entry.at("has_bias").get<bool>();
            activation_tag = entry.at("activation").get<std::string>();
            offset = entry.at("byte_offset").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw CorruptCheckpoint("malformed layer entry: " + std::string(e.what()));
        }

        if (offset != expected_offset || offset % kAlignment != 0) {
            throw CorruptCheckpoint("layer '" + name + "' has byte_offset " +
                                    std::to_string(offset) + ", expected " +
                                    std::to_string(expected_offset));
        }
        if (rows == 0 || cols == 0) {
            throw CorruptCheckpoint("layer '" + name + "' declares an empty weight");
        }
        const std::size_t bytes = static_cast<std::size_t>(rows * cols) * 4;
        if (offset + bytes > blob.size()) {
            throw CorruptCheckpoint("weights.bin is truncated: layer '" + name + "' needs " +
                                    std::to_string(offset + bytes) + " bytes, file has " +
                                    std::to_string(blob.size()));
        }

        ActivationKind activation;
        try {
            activation = activation_from_string(activation_tag);
        } catch (const Error& e) {
            throw CorruptCheckpoint(std::string("layer '") + name + "': " + e.what());
        }

        std::vector<double> values(rows * cols);
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = static_cast<double>(get_f32(blob, offset + i * 4));
        }

        LinearLayer layer;
        layer.name = name;
        layer.has_bias = has_bias;
        layer.activation = activation;
        try {
            layer.weight = DenseMatrix(rows, cols, std::move(values));
        } catch (const Error& e) {
            throw CorruptCheckpoint("layer '" + name + "': " + std::string(e.what()));
        }
        layers.push_back(std::move(layer));
        expected_offset = aligned_size(offset + bytes);
    }

    if (expected_offset != blob.size()) {
        throw CorruptCheckpoint("weights.bin has " + std::to_string(blob.size()) +
                                " bytes, manifest accounts for " +
                                std::to_string(expected_offset));
    }

    // The model constructor re-checks the dimension chain and finiteness.
    return SequentialModel(input_dim, std::move(layers));
}

void save_matrix(const DenseMatrix& m, const std::filesystem::path& file) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(24 + m.size() * 4);
    bytes.insert(bytes.end(), kMatrixMagic, kMatrixMagic + 4);
    put_u32(bytes, kMatrixVersion);
    put_u64(bytes, m.rows());
    put_u64(bytes, m.cols());
    append_matrix_f32(bytes, m, "matrix");
    write_file(file, bytes.data(), bytes.size());
}

DenseMatrix load_matrix(const std::filesystem::path& file) {
    const std::vector<std::uint8_t> bytes = read_file(file);
    if (bytes.size() < 4 || !std::equal(kMatrixMagic, kMatrixMagic + 4, bytes.begin())) {
        throw NotAMatrixFile("'" + file.string() + "' does not start with the CMMX magic");
    }
    if (bytes.size() < 24) {
        throw NotAMatrixFile("'" + file.string() + "' is too short for a matrix header");
    }
    const std::uint32_t version = get_u32(bytes, 4);
    if (version != kMatrixVersion) {
        throw UnsupportedVersion("matrix file version " + std::to_string(version) +
                                 " is not supported");
    }
    const std::uint64_t rows = get_u64(bytes, 8);
    const std::uint64_t cols = get_u64(bytes, 16);
    const std::size_t expected = 24 + static_cast<std::size_t>(rows * cols) * 4;
    if (bytes.size() != expected) {
        throw NotAMatrixFile("'" + file.string() + "' payload has " +
                             std::to_string(bytes.size() - 24) + " bytes, expected " +
                             std::to_string(expected - 24));
    }

    std::vector<double> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] = static_cast<double>(get_f32(bytes, 24 + i * 4));
    }
    return DenseMatrix(rows, cols, std::move(values));
}

ordered_json mcs_report_to_json(const MCSReport& report) {
    ordered_json out;
    out["format_version"] = 1;
    out["method_label"] = report.method_label;
    out["layers"] = ordered_json::array();
    for (std::size_t l = 0; l < report.per_layer.size(); ++l) {
        ordered_json layer;
        layer["layer"] = l + 1;
        layer["per_task"] = report.per_layer[l].per_task;
        layer["total"] = report.per_layer[l].total;
        out["layers"].push_back(std::move(layer));
    }
    out["grand_total"] = report.grand_total;
    return out;
}

ordered_json eval_result_to_json(const EvalResult& result) {
    ordered_json out;
    out["task"] = result.task_name;
    out["accuracy"] = result.accuracy;
    out["loss"] = result.loss;
    return out;
}

ordered_json merge_diagnostics_to_json(const MergeOutcome& outcome, MergeMethod method) {
    ordered_json out;
    out["method"] = to_string(method);
    out["per_layer_omega"] = outcome.per_layer_omega;
    if (!outcome.per_layer_weights.empty()) {
        ordered_json weights = ordered_json::array();
        for (const SensitivityWeights& w : outcome.per_layer_weights) {
            weights.push_back(w.per_task);
        }
        out["per_layer_importance"] = std::move(weights);
    }
    out["sample_counts"] = outcome.stats_provenance;
    return out;
}

namespace {

ordered_json hyper_to_json(const TrainHyper& hyper) {
    ordered_json out;
    out["learning_rate"] = hyper.learning_rate;
    out["epochs"] = hyper.epochs;
    out["batch_size"] = hyper.batch_size;
    return out;
}

} // namespace

ordered_json experiment_report_to_json(const ExperimentReport& report) {
    ordered_json out;
    out["format_version"] = 1;

    ordered_json config;
    config["seed"] = report.spec.seed;
    config["num_tasks"] = report.spec.num_tasks;
    config["input_dim"] = report.spec.input_dim;
    config["num_classes"] = report.spec.num_classes;
    config["depth"] = report.spec.depth;
    config["hidden_dim"] = report.spec.hidden_dim;
    config["samples_per_split"] = report.spec.samples_per_split;
    config["samples_for_merging"] = report.spec.samples_for_merging;
    config["hidden_activation"] = to_string(report.spec.hidden_activation);
    config["pretrain"] = hyper_to_json(report.spec.pretrain);
    config["finetune"] = hyper_to_json(report.spec.finetune);
    ordered_json merge_cfg;
    merge_cfg["lambda_rel"] = report.spec.merge_cfg.lambda_rel;
    merge_cfg["rank_eps"] = report.spec.merge_cfg.rank_eps;
    merge_cfg["normalize"] = report.spec.merge_cfg.normalize;
    merge_cfg["max_samples_per_task"] = report.spec.merge_cfg.max_samples_per_task;
    merge_cfg["weight_floor_rel"] = report.spec.merge_cfg.weight_floor_rel;
    config["merge"] = std::move(merge_cfg);
    ordered_json methods = ordered_json::array();
    for (MergeMethod m : report.spec.methods) {
        methods.push_back(to_string(m));
    }
    config["methods"] = std::move(methods);
    config["sweep_sample_counts"] = report.spec.sweep_sample_counts;
    out["config"] = std::move(config);

    out["finetuned"] = ordered_json::array();
    for (const EvalResult& eval : report.finetuned) {
        out["finetuned"].push_back(eval_result_to_json(eval));
    }

    out["methods"] = ordered_json::array();
    for (const MethodReport& method : report.methods) {
        ordered_json entry;
        entry["method"] = to_string(method.method);
        entry["per_task"] = ordered_json::array();
        for (std::size_t t = 0; t < method.per_task.size(); ++t) {
            ordered_json task = eval_result_to_json(method.per_task[t]);
            task["normalized_score"] = method.normalized_scores[t];
            entry["per_task"].push_back(std::move(task));
        }
        entry["average_normalized_score"] = method.average_normalized_score;
        entry["per_layer_omega"] = method.per_layer_omega;
        entry["mcs_grand_total"] = method.mcs.grand_total;
        out["methods"].push_back(std::move(entry));
    }

    out["sample_sweep"] = ordered_json::array();
    for (const SweepPoint& point : report.sweep) {
        ordered_json entry;
        entry["samples"] = point.samples;
        entry["average_normalized_score"] = point.average_normalized_score;
        out["sample_sweep"].push_back(std::move(entry));
    }
    return out;
}

void write_json_file(const ordered_json& value, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + file.string() + "' for writing");
    }
    out << value.dump(2) << '\n';
    if (!out) {
        throw IoError("write failure on '" + file.string() + "'");
    }
}

} // namespace cmm::io
