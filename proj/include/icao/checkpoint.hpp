// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "icao/model.hpp"

namespace icao {

inline constexpr int kCheckpointSchemaVersion = 1;

/// Optimizer state needed to continue training exactly where it stopped.
struct TrainingState {
  int epoch = 0;                 // completed epochs
  std::uint64_t adam_step = 0;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::string metadata_json = "{}";  // free-form object, e.g. the training config
};

struct LoadedCheckpoint {
  SegClsModel model;
  std::optional<TrainingState> training;
};

/// Container layout (little-endian):
///
///   bytes 0..7   "ICAOCKPT"
///   bytes 8..11  u32 header length N
///   N bytes      JSON header
///   rest         float64 tensor data
///
/// The header holds "schema_version", "model_config", optional "thresholds" (26 numbers),
/// optional "training" {"epoch", "adam_step", "metadata"} and "tensors", a list of
/// {"name", "shape", "dtype": "f64", "offset", "nbytes"} with offsets relative to the data start.
/// Model tensors use the model's parameter names; optimizer moments are "adam.m" and "adam.v".
void save_checkpoint(const std::filesystem::path& path, const SegClsModel& model,
                     const TrainingState* training = nullptr);

/// Throws DataError on a bad magic, truncated data, a schema-version mismatch or a tensor
/// manifest that disagrees with the configured architecture. `external` supplies the encoder
/// for "external:*" configs.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::shared_ptr<const Encoder> external = nullptr);

/// The JSON header alone.
std::string read_checkpoint_header(const std::filesystem::path& path);

}  // namespace icao
