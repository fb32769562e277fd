#pragma once

#include "cmm/harness.hpp"
#include "cmm/mcs.hpp"
#include "cmm/merge.hpp"
#include "cmm/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace cmm::io {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Checkpoint format
//
// A checkpoint is a directory with two files:
//   manifest.json  - format_version (1), input_dim, and one entry per layer:
//                    {name, rows, cols, has_bias, activation, byte_offset}.
//   weights.bin    - row-major little-endian float32 blobs, concatenated in
//                    manifest order. Each blob is zero-padded to an 8-byte
//                    boundary; byte_offset points at the blob start.
//
// Weights live in memory as f64 and are narrowed to f32 on disk; a value
// round-trips exactly whenever it is representable in f32.
// ---------------------------------------------------------------------------

void save_checkpoint(const SequentialModel& model, const std::filesystem::path& dir);
SequentialModel load_checkpoint(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Matrix file format (.cmmx)
//
//   magic   "CMMX" (0x43 0x4D 0x4D 0x58)
//   version u32 little-endian, currently 1
//   rows    u64 little-endian
//   cols    u64 little-endian
//   payload rows*cols float32 little-endian, row-major
//
// A 0x0 matrix is legal and carries an empty payload.
// ---------------------------------------------------------------------------

void save_matrix(const DenseMatrix& m, const std::filesystem::path& file);
DenseMatrix load_matrix(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Report schemas. Keys are emitted in a fixed order; arrays follow layer and
// task order; numbers serialize with shortest round-trip precision (at most
// 17 significant digits).
// ---------------------------------------------------------------------------

ordered_json mcs_report_to_json(const MCSReport& report);
ordered_json experiment_report_to_json(const ExperimentReport& report);

/// Per-layer solve diagnostics printed by the merge command.
ordered_json merge_diagnostics_to_json(const MergeOutcome& outcome, MergeMethod method);

ordered_json eval_result_to_json(const EvalResult& result);

void write_json_file(const ordered_json& value, const std::filesystem::path& file);

} // namespace cmm::io
