// SPDX-License-Identifier: Apache-2.0
#include "icao/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "icao/errors.hpp"

namespace icao {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'I', 'C', 'A', 'O', 'C', 'K', 'P', 'T'};

struct Blob {
  std::string name;
  std::vector<int> shape;
  const double* data;
  std::size_t count;
};

struct RawCheckpoint {
  nlohmann::json header;
  std::vector<double> data;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a checkpoint file: " + path.string());
  std::uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  if (!in) throw DataError("truncated checkpoint header in " + path.string());
  std::string text(n, '\0');
  in.read(text.data(), n);
  if (!in) throw DataError("truncated checkpoint header in " + path.string());
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  if (!with_data) return raw;
  const auto start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg() - start);
  in.seekg(start);
  if (bytes % sizeof(double) != 0) throw DataError("checkpoint data is not a whole number of float64 values");
  raw.data.resize(bytes / sizeof(double));
  in.read(reinterpret_cast<char*>(raw.data.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("truncated checkpoint data in " + path.string());
  return raw;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SegClsModel& model, const TrainingState* training) {
  std::vector<Blob> blobs;
  for (const auto& e : model.layout()) {
    blobs.push_back({e.name, e.shape, model.parameters().data() + e.offset, e.size});
  }
  const auto n = model.parameters().size();
  if (training) {
    if (training->adam_m.size() != n || training->adam_v.size() != n) {
      throw ShapeError("optimizer moments do not match the parameter count");
    }
    blobs.push_back({"adam.m", {static_cast<int>(n)}, training->adam_m.data(), n});
    blobs.push_back({"adam.v", {static_cast<int>(n)}, training->adam_v.data(), n});
  }

  nlohmann::ordered_json h;
  h["schema_version"] = kCheckpointSchemaVersion;
  h["model_config"] = nlohmann::ordered_json::parse(model.config().to_json());
  h["thresholds"] = model.thresholds() ? nlohmann::ordered_json(*model.thresholds()) : nlohmann::ordered_json();
  if (training) {
    h["training"] = {{"epoch", training->epoch},
                     {"adam_step", training->adam_step},
                     {"metadata", nlohmann::ordered_json::parse(training->metadata_json)}};
  }
  auto& tensors = h["tensors"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& b : blobs) {
    const std::size_t nbytes = b.count * sizeof(double);
    tensors.push_back({{"name", b.name}, {"shape", b.shape}, {"dtype", "f64"}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string header = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(kMagic, 8);
    const auto len = static_cast<std::uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& b : blobs) {
      out.write(reinterpret_cast<const char*>(b.data), static_cast<std::streamsize>(b.count * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_checkpoint_header(const std::filesystem::path& path) { return read_raw(path, false).header.dump(); }

namespace {

LoadedCheckpoint load_impl(const std::filesystem::path& path, std::shared_ptr<const Encoder> external) {
  RawCheckpoint raw = read_raw(path, true);
  const auto& h = raw.header;
  const int version = h.value("schema_version", -1);
  if (version != kCheckpointSchemaVersion) {
    throw DataError("checkpoint schema version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointSchemaVersion) + ")");
  }
  if (!h.contains("model_config") || !h.contains("tensors")) throw DataError("checkpoint header is incomplete");

  ModelConfig config;
  try {
    config = ModelConfig::from_json(h["model_config"].dump());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint model config: ") + e.what());
  }
  std::shared_ptr<const Encoder> encoder = external ? std::move(external) : make_encoder(config);
  SegClsModel model(config, encoder, 0);

  const std::size_t n = model.parameters().size();
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : h["tensors"]) by_name[t.at("name").get<std::string>()] = &t;

  auto fetch = [&](const std::string& name, const std::vector<int>& shape, std::size_t count, double* dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint is missing tensor '" + name + "'");
    const auto& t = *it->second;
    if (t.at("dtype") != "f64") throw DataError("tensor '" + name + "' has unsupported dtype");
    if (t.at("shape").get<std::vector<int>>() != shape) throw DataError("tensor '" + name + "' has the wrong shape");
    const auto offset = t.at("offset").get<std::size_t>();
    const auto nbytes = t.at("nbytes").get<std::size_t>();
    if (nbytes != count * sizeof(double) || offset % sizeof(double) != 0 ||
        offset / sizeof(double) + count > raw.data.size()) {
      throw DataError("tensor '" + name + "' lies outside the data section");
    }
    std::memcpy(dst, raw.data.data() + offset / sizeof(double), nbytes);
    by_name.erase(it);
  };

  for (const auto& e : model.layout()) fetch(e.name, e.shape, e.size, model.parameters().data() + e.offset);

  if (h.contains("thresholds") && !h["thresholds"].is_null()) {
    try {
      model.set_thresholds(h["thresholds"].get<ThresholdVector>());
    } catch (const std::exception& e) {
      throw DataError(std::string("checkpoint thresholds: ") + e.what());
    }
  }

  LoadedCheckpoint out{std::move(model), std::nullopt};
  if (h.contains("training")) {
    TrainingState s;
    const auto& tr = h["training"];
    s.epoch = tr.at("epoch").get<int>();
    s.adam_step = tr.at("adam_step").get<std::uint64_t>();
    s.metadata_json = tr.value("metadata", nlohmann::json::object()).dump();
    s.adam_m.resize(n);
    s.adam_v.resize(n);
    fetch("adam.m", {static_cast<int>(n)}, n, s.adam_m.data());
    fetch("adam.v", {static_cast<int>(n)}, n, s.adam_v.data());
    out.training = std::move(s);
  }
  if (!by_name.empty()) throw DataError("checkpoint has unexpected tensor '" + by_name.begin()->first + "'");
  return out;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::shared_ptr<const Encoder> external) {
  try {
    return load_impl(path, std::move(external));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
}

}  // namespace icao
