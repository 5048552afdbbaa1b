#pragma once

// JSONL persistence for the core records. Every record carries
// schema_version and item_id; one record per line.

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "act/core/types.hpp"
#include "act/error.hpp"

namespace act {

using json = nlohmann::json;

namespace detail {

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
std::optional<T> get_optional(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

inline int item_id_of(const json& j) {
  if (auto it = j.find("item_id"); it != j.end()) return it->get<int>();
  if (auto it = j.find("id"); it != j.end()) return it->get<int>();
  throw ParseError("record has no item_id");
}

inline void check_schema(const json& j) {
  auto it = j.find("schema_version");
  if (it != j.end() && it->get<int>() > kSchemaVersion)
    throw ParseError("unsupported schema_version " + std::to_string(it->get<int>()));
}

}  // namespace detail

inline void to_json(json& j, const Content& c) {
  j = json{{"kind", c.kind}};
  switch (c.kind) {
    case ContentKind::text: j["text"] = c.text; break;
    case ContentKind::image: j["image"] = c.image_path; break;
    case ContentKind::vqa:
      j["question"] = c.question;
      j["image"] = c.image_path;
      break;
  }
}

inline void from_json(const json& j, Content& c) {
  if (j.is_string()) {  // bare string shorthand for text items
    c = Content::from_text(j.get<std::string>());
    return;
  }
  c.kind = j.at("kind").get<ContentKind>();
  c.text = j.value("text", "");
  c.image_path = j.value("image", "");
  c.question = j.value("question", "");
}

inline void to_json(json& j, const Item& it) {
  j = json{{"schema_version", kSchemaVersion},
           {"item_id", it.id},
           {"content", it.content},
           {"label_space", it.label_space}};
  detail::put_optional(j, "hidden_truth", it.hidden_truth);
  if (!it.features.empty()) j["features"] = it.features;
}

inline void from_json(const json& j, Item& it) {
  detail::check_schema(j);
  it.id = detail::item_id_of(j);
  it.content = j.at("content").get<Content>();
  it.label_space = j.at("label_space").get<std::vector<std::string>>();
  it.hidden_truth = detail::get_optional<Label>(j, "hidden_truth");
  it.features = j.value("features", std::vector<double>{});
}

inline void to_json(json& j, const AnnotationRecord& r) {
  j = json{{"schema_version", kSchemaVersion}, {"item_id", r.item_id},
           {"machine_label", r.machine_label}, {"strategy", r.strategy},
           {"backend_id", r.backend_id},       {"parse_ok", r.parse_ok}};
  detail::put_optional(j, "reasoning", r.reasoning);
}

inline void from_json(const json& j, AnnotationRecord& r) {
  detail::check_schema(j);
  r.item_id = detail::item_id_of(j);
  r.machine_label = j.at("machine_label").get<Label>();
  r.strategy = j.at("strategy").get<AnnotationStrategy>();
  r.backend_id = j.value("backend_id", "");
  r.parse_ok = j.value("parse_ok", true);
  r.reasoning = detail::get_optional<std::string>(j, "reasoning");
}

inline void to_json(json& j, const ReviewRecord& r) {
  j = json{{"schema_version", kSchemaVersion}, {"item_id", r.item_id},
           {"human_label", r.human_label},     {"reviewer_id", r.reviewer_id},
           {"timestamp", r.timestamp}};
  detail::put_optional(j, "hidden_truth", r.hidden_truth);
}

inline void from_json(const json& j, ReviewRecord& r) {
  detail::check_schema(j);
  r.item_id = detail::item_id_of(j);
  r.human_label = j.at("human_label").get<Label>();
  r.reviewer_id = j.value("reviewer_id", "");
  r.timestamp = j.value("timestamp", std::int64_t{0});
  r.hidden_truth = detail::get_optional<Label>(j, "hidden_truth");
}

inline void to_json(json& j, const CorrectedEntry& e) {
  j = json{{"schema_version", kSchemaVersion}, {"item_id", e.item_id},
           {"final_label", e.final_label},     {"source", e.source},
           {"machine_label", e.machine_label}, {"delta", e.delta}};
  detail::put_optional(j, "human_label", e.human_label);
  detail::put_optional(j, "pi", e.pi);
  detail::put_optional(j, "error_probability", e.error_probability);
}

inline void from_json(const json& j, CorrectedEntry& e) {
  detail::check_schema(j);
  e.item_id = detail::item_id_of(j);
  e.final_label = j.at("final_label").get<Label>();
  e.source = j.at("source").get<LabelSource>();
  e.machine_label = j.at("machine_label").get<Label>();
  e.delta = j.value("delta", 0);
  e.human_label = detail::get_optional<Label>(j, "human_label");
  e.pi = detail::get_optional<double>(j, "pi");
  e.error_probability = detail::get_optional<double>(j, "error_probability");
}

namespace jsonl {

/// Calls `fn(record, line_number)` for each non-blank line. Parse failures
/// name the 1-based line number.
inline void for_each_line(const std::filesystem::path& path,
                          const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    try {
      fn(j, lineno);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

template <typename T>
std::vector<T> read(const std::filesystem::path& path) {
  std::vector<T> out;
  for_each_line(path, [&](const json& j, std::size_t) { out.push_back(j.get<T>()); });
  return out;
}

/// Serializes records to a string, one compact JSON object per line.
template <typename T>
std::string dump(const std::vector<T>& records) {
  std::string out;
  for (const auto& r : records) {
    out += json(r).dump();
    out += '\n';
  }
  return out;
}

/// Writes through a temporary file and rename, so readers never observe a
/// half-written artifact.
inline void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
void write(const std::filesystem::path& path, const std::vector<T>& records) {
  write_atomic(path, dump(records));
}

inline void append(const std::filesystem::path& path, const json& record) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to " + path.string());
  out << record.dump() << '\n';
  out.flush();
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace jsonl

enum class DatasetFormat { jsonl };

inline Dataset load_dataset(const std::filesystem::path& path,
                            DatasetFormat format = DatasetFormat::jsonl) {
  (void)format;
  std::vector<Item> items;
  jsonl::for_each_line(path, [&](const json& j, std::size_t lineno) {
    for (const char* key : {"content", "label_space"})
      if (!j.contains(key))
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": missing field '" +
                         key + "'");
    if (!j.contains("id") && !j.contains("item_id"))
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": missing field 'id'");
    items.push_back(j.get<Item>());
  });
  return Dataset(std::move(items));
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  jsonl::write(path, ds.items());
}

inline CorrectedDataset load_corrected(const std::filesystem::path& path) {
  return CorrectedDataset{jsonl::read<CorrectedEntry>(path)};
}

inline void save_corrected(const std::filesystem::path& path, const CorrectedDataset& cd) {
  jsonl::write(path, cd.entries);
}

}  // namespace act
