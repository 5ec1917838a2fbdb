// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "icao/reason_registry.hpp"
#include "icao/records.hpp"

namespace icao {

/// Parses one manifest line (a JSON object). Throws DataError naming the offending field.
ImageRecord parse_record(std::string_view line);

/// Canonical single-line JSON form: keys sorted, no whitespace.
std::string serialize_record(const ImageRecord& record);

struct ManifestOptions {
  const ReasonRegistry* registry = nullptr;  // nullptr selects ReasonRegistry::builtin()
  bool lenient_reasons = false;
};

/// Reads a newline-delimited manifest. Blank lines are skipped; record order is preserved.
/// Errors: ParseError (with line number) for malformed lines, DataError for invalid records
/// (message names the image_id) and for duplicate image ids.
std::vector<ImageRecord> load_manifest(const std::filesystem::path& path,
                                       const ManifestOptions& options = {});

/// Same as load_manifest, reading from an in-memory buffer.
std::vector<ImageRecord> parse_manifest(std::string_view text, const ManifestOptions& options = {});

void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records);

/// Resolves a record's source_path against the directory holding the manifest.
std::filesystem::path resolve_source(const std::filesystem::path& manifest_path,
                                     const ImageRecord& record);

}  // namespace icao
