// SPDX-License-Identifier: Apache-2.0
#include "icao/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "icao/errors.hpp"

namespace icao {

namespace {

using nlohmann::json;

[[noreturn]] void field_error(const std::string& field, const std::string& what) {
  throw DataError("field '" + field + "': " + what);
}

const json& require(const json& obj, const char* key, const std::string& prefix = "") {
  auto it = obj.find(key);
  if (it == obj.end()) field_error(prefix + key, "missing");
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& prefix = "") {
  const json& v = require(obj, key, prefix);
  if (!v.is_string()) field_error(prefix + key, "expected a string");
  return v.get<std::string>();
}

template <typename E, typename Parser>
E require_enum(const json& obj, const char* key, Parser parse, const char* allowed,
               const std::string& prefix = "") {
  std::string s = require_string(obj, key, prefix);
  auto e = parse(s);
  if (!e) field_error(prefix + key, "invalid value '" + s + "' (expected one of " + allowed + ")");
  return *e;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& prefix) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) field_error(prefix + k, "unknown field");
  }
}

ComplianceLabel parse_label(const json& j, const std::string& field) {
  if (!j.is_object()) field_error(field, "expected an object with a 'state' member");
  reject_unknown(j, {"state", "reason", "severity"}, field + ".");
  ComplianceLabel label;
  label.state = require_enum<ComplianceState>(j, "state", parse_compliance_state,
                                              "Compliant, NoWayToConfirm, NonCompliant", field + ".");
  if (j.contains("reason")) label.reason = require_string(j, "reason", field + ".");
  if (j.contains("severity")) label.severity = require_string(j, "severity", field + ".");
  return label;
}

json label_to_json(const ComplianceLabel& label) {
  json j;
  j["state"] = std::string(to_string(label.state));
  if (label.reason) j["reason"] = *label.reason;
  if (label.severity) j["severity"] = *label.severity;
  return j;
}

}  // namespace

ImageRecord parse_record(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("record must be a JSON object");
  reject_unknown(j,
                 {"image_id", "subject_id", "quality_tier", "source_path", "demographics", "labels",
                  "attributes", "partition", "generated_from", "restricted_to"},
                 "");

  ImageRecord r;
  r.image_id = require_string(j, "image_id");
  r.subject_id = require_string(j, "subject_id");
  r.quality_tier = require_enum<QualityTier>(j, "quality_tier", parse_quality_tier, "HQ, SQ, Gen");
  r.source_path = require_string(j, "source_path");
  r.partition = require_enum<Partition>(j, "partition", parse_partition,
                                        "All, Train, TrainBalanced, Test");

  const json& demo = require(j, "demographics");
  if (!demo.is_object()) field_error("demographics", "expected an object");
  reject_unknown(demo, {"gender", "age_group", "origin", "country"}, "demographics.");
  {
    std::string g = require_string(demo, "gender", "demographics.");
    auto gender = parse_gender(g);
    if (!gender) {
      field_error("demographics.gender",
                  "'" + g + "' is not supported; gender is modeled as two classes (Male, Female)");
    }
    r.demographics.gender = *gender;
  }
  r.demographics.age_group = require_enum<AgeGroup>(
      demo, "age_group", parse_age_group, "A0_20, A21_35, A36_50, A51_65, A66plus", "demographics.");
  r.demographics.origin = require_enum<Origin>(demo, "origin", parse_origin,
                                               "Asian, Caucasian, African", "demographics.");
  if (demo.contains("country")) r.demographics.country = require_string(demo, "country", "demographics.");

  const json& labels = require(j, "labels");
  if (!labels.is_object()) field_error("labels", "expected an object");
  for (const auto& [key, value] : labels.items()) {
    auto id = parse_requirement(key);
    if (!id || key != short_name(*id)) field_error("labels." + key, "unknown requirement");
    r.labels[*id] = parse_label(value, "labels." + key);
  }

  if (auto it = j.find("attributes"); it != j.end()) {
    if (!it->is_object()) field_error("attributes", "expected an object");
    for (const auto& [key, value] : it->items()) {
      if (!value.is_string()) field_error("attributes." + key, "expected a string");
      r.attributes[key] = value.get<std::string>();
    }
  }
  if (j.contains("generated_from")) r.generated_from = require_string(j, "generated_from");
  if (auto it = j.find("restricted_to"); it != j.end()) {
    if (!it->is_array()) field_error("restricted_to", "expected an array");
    for (const auto& v : *it) {
      auto id = v.is_string() ? parse_requirement(v.get<std::string>()) : std::nullopt;
      if (!id) field_error("restricted_to", "unknown requirement " + v.dump());
      r.restricted_to.push_back(*id);
    }
  }
  return r;
}

std::string serialize_record(const ImageRecord& r) {
  json j;
  j["image_id"] = r.image_id;
  j["subject_id"] = r.subject_id;
  j["quality_tier"] = std::string(to_string(r.quality_tier));
  j["source_path"] = r.source_path;
  j["partition"] = std::string(to_string(r.partition));

  json demo;
  demo["gender"] = std::string(to_string(r.demographics.gender));
  demo["age_group"] = std::string(to_string(r.demographics.age_group));
  demo["origin"] = std::string(to_string(r.demographics.origin));
  if (r.demographics.country) demo["country"] = *r.demographics.country;
  j["demographics"] = std::move(demo);

  json labels = json::object();
  for (const auto& [id, label] : r.labels) labels[std::string(short_name(id))] = label_to_json(label);
  j["labels"] = std::move(labels);

  j["attributes"] = r.attributes;
  if (r.generated_from) j["generated_from"] = *r.generated_from;
  if (!r.restricted_to.empty()) {
    json arr = json::array();
    for (auto id : r.restricted_to) arr.push_back(std::string(short_name(id)));
    j["restricted_to"] = std::move(arr);
  }
  return j.dump();
}

std::vector<ImageRecord> parse_manifest(std::string_view text, const ManifestOptions& options) {
  const ReasonRegistry& registry = options.registry ? *options.registry : ReasonRegistry::builtin();
  ValidationOptions vopts;
  vopts.lenient_reasons = options.lenient_reasons;

  std::vector<ImageRecord> records;
  std::unordered_set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    ImageRecord rec;
    try {
      rec = parse_record(line);
    } catch (const DataError& e) {
      throw ParseError(line_no, e.what());
    }
    auto violations = validate_record(rec, registry, vopts);
    if (!violations.empty()) {
      std::string msg = "invalid record '" + rec.image_id + "' (line " + std::to_string(line_no) + "): ";
      for (std::size_t i = 0; i < violations.size(); ++i) {
        if (i) msg += "; ";
        msg += violations[i].message;
      }
      throw DataError(msg);
    }
    if (!ids.insert(rec.image_id).second) {
      throw DataError("duplicate id '" + rec.image_id + "' (line " + std::to_string(line_no) + ")");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<ImageRecord> load_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), options);
}

void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& r : records) out << serialize_record(r) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::filesystem::path resolve_source(const std::filesystem::path& manifest_path, const ImageRecord& record) {
  std::filesystem::path p(record.source_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace icao
