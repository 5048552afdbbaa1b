#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "act/error.hpp"

namespace act {

/// Bumped whenever a persisted record layout changes.
inline constexpr int kSchemaVersion = 1;

/// Index into an item's label space.
using Label = int;
inline constexpr Label kNoLabel = -1;

enum class ContentKind { image, text, vqa };

NLOHMANN_JSON_SERIALIZE_ENUM(ContentKind, {{ContentKind::image, "image"},
                                           {ContentKind::text, "text"},
                                           {ContentKind::vqa, "vqa"}})

/// Prompt family used for an item; follows directly from its content kind.
enum class TaskKind { image_cls, text_cls, vqa };

NLOHMANN_JSON_SERIALIZE_ENUM(TaskKind, {{TaskKind::image_cls, "image_cls"},
                                        {TaskKind::text_cls, "text_cls"},
                                        {TaskKind::vqa, "vqa"}})

inline std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::image_cls: return "image_cls";
    case TaskKind::text_cls: return "text_cls";
    case TaskKind::vqa: return "vqa";
  }
  return "?";
}

/// What the annotator sees. Images are passed by reference, never decoded.
struct Content {
  ContentKind kind = ContentKind::text;
  std::string text;        // text items
  std::string image_path;  // image and vqa items
  std::string question;    // vqa items

  static Content from_text(std::string t) {
    Content c;
    c.kind = ContentKind::text;
    c.text = std::move(t);
    return c;
  }
  static Content from_image(std::string path) {
    Content c;
    c.kind = ContentKind::image;
    c.image_path = std::move(path);
    return c;
  }
  static Content from_vqa(std::string question, std::string image) {
    Content c;
    c.kind = ContentKind::vqa;
    c.question = std::move(question);
    c.image_path = std::move(image);
    return c;
  }

  TaskKind task_kind() const {
    switch (kind) {
      case ContentKind::image: return TaskKind::image_cls;
      case ContentKind::text: return TaskKind::text_cls;
      case ContentKind::vqa: return TaskKind::vqa;
    }
    return TaskKind::text_cls;
  }

  bool operator==(const Content&) const = default;
};

struct Item {
  int id = 0;
  Content content;
  std::optional<Label> hidden_truth;
  std::vector<std::string> label_space;
  /// Raw feature vector for synthetic items; empty when features come from
  /// an embedding file.
  std::vector<double> features;

  bool valid_label(Label l) const {
    return l >= 0 && static_cast<std::size_t>(l) < label_space.size();
  }

  bool operator==(const Item&) const = default;
};

class Dataset {
 public:
  Dataset() = default;

  /// Validates and takes ownership; items may arrive in any id order.
  explicit Dataset(std::vector<Item> items) : items_(std::move(items)) {
    std::sort(items_.begin(), items_.end(),
              [](const Item& a, const Item& b) { return a.id < b.id; });
    validate();
  }

  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  const Item& operator[](std::size_t i) const { return items_[i]; }
  const Item& at(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= items_.size())
      throw NotFoundError("no item with id " + std::to_string(id));
    return items_[static_cast<std::size_t>(id)];
  }
  const std::vector<Item>& items() const noexcept { return items_; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  bool all_have_truth() const {
    return std::all_of(items_.begin(), items_.end(),
                       [](const Item& it) { return it.hidden_truth.has_value(); });
  }

  bool operator==(const Dataset&) const = default;

 private:
  void validate() const {
    if (items_.empty()) throw ValidationError("dataset is empty (N must be >= 1)");
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const Item& it = items_[i];
      if (i > 0 && items_[i - 1].id == it.id)
        throw ValidationError("duplicate item id " + std::to_string(it.id));
      if (it.id != static_cast<int>(i))
        throw ValidationError("item ids must be 0..N-1; found id " + std::to_string(it.id) +
                              " at position " + std::to_string(i));
      if (it.label_space.empty())
        throw ValidationError("item " + std::to_string(it.id) + " has an empty label space");
      if (it.hidden_truth && !it.valid_label(*it.hidden_truth))
        throw ValidationError("item " + std::to_string(it.id) + " hidden_truth " +
                              std::to_string(*it.hidden_truth) + " outside label space");
    }
  }

  std::vector<Item> items_;
};

enum class AnnotationStrategy { naive, cot };

NLOHMANN_JSON_SERIALIZE_ENUM(AnnotationStrategy, {{AnnotationStrategy::naive, "naive"},
                                                  {AnnotationStrategy::cot, "cot"}})

struct AnnotationRecord {
  int item_id = 0;
  Label machine_label = kNoLabel;
  std::optional<std::string> reasoning;
  AnnotationStrategy strategy = AnnotationStrategy::naive;
  std::string backend_id;
  bool parse_ok = true;

  bool operator==(const AnnotationRecord&) const = default;
};

struct ReviewRecord {
  int item_id = 0;
  Label human_label = kNoLabel;
  std::string reviewer_id;
  /// Unix seconds for live reviews; a sequence number for simulated ones so
  /// that reruns stay byte-identical.
  std::int64_t timestamp = 0;
  /// Copied from the item when it carries a hidden truth, so disagreements
  /// between reviewer and benchmark label stay auditable.
  std::optional<Label> hidden_truth;

  bool operator==(const ReviewRecord&) const = default;
};

enum class LabelSource { machine, human };

NLOHMANN_JSON_SERIALIZE_ENUM(LabelSource, {{LabelSource::machine, "machine"},
                                           {LabelSource::human, "human"}})

struct CorrectedEntry {
  int item_id = 0;
  Label final_label = kNoLabel;
  LabelSource source = LabelSource::machine;
  Label machine_label = kNoLabel;
  std::optional<Label> human_label;
  /// Review probability and indicator from the sampling plan.
  std::optional<double> pi;
  int delta = 0;
  std::optional<double> error_probability;

  bool operator==(const CorrectedEntry&) const = default;
};

struct CorrectedDataset {
  std::vector<CorrectedEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  std::vector<Label> final_labels() const {
    std::vector<Label> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.final_label);
    return out;
  }
  std::vector<Label> machine_labels() const {
    std::vector<Label> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.machine_label);
    return out;
  }

  bool operator==(const CorrectedDataset&) const = default;
};

}  // namespace act
