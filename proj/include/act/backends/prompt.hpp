#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "act/backends/criticism.hpp"
#include "act/core/jsonl.hpp"
#include "act/core/types.hpp"
#include "act/error.hpp"

#ifndef ACT_PROMPT_DIR
#define ACT_PROMPT_DIR "assets/prompts"
#endif

namespace act {

/// Template file stem for each prompt strategy.
inline std::string prompt_key(AnnotationStrategy s) {
  return s == AnnotationStrategy::naive ? "annotate_naive" : "annotate_cot";
}

inline std::string prompt_key(CriticStrategy s) {
  switch (s) {
    case CriticStrategy::naive: return "critic_naive";
    case CriticStrategy::cot: return "critic_cot";
    case CriticStrategy::mc: return "critic_mc";
    case CriticStrategy::devil: return "critic_devil";
    case CriticStrategy::naive_logit: return "critic_naive_logit";
    // PPL scoring reuses the CoT yes/no prompt; only the scoring differs.
    case CriticStrategy::cot_logit:
    case CriticStrategy::cot_ppl: return "critic_cot_logit";
  }
  return "";
}

inline const std::set<std::string>& known_placeholders() {
  static const std::set<std::string> names = {"image_data", "text_data",   "question",
                                              "label_list_with_index",     "first_label",
                                              "label_index",               "CoT_A"};
  return names;
}

/// Placeholders a template must contain exactly once.
inline std::set<std::string> required_placeholders(TaskKind task, const std::string& key) {
  std::set<std::string> req;
  if (task == TaskKind::image_cls || task == TaskKind::vqa) req.insert("image_data");
  if (task == TaskKind::text_cls) req.insert("text_data");
  if (task == TaskKind::vqa) req.insert("question");
  req.insert("label_list_with_index");
  if (key.starts_with("annotate_")) {
    req.insert("first_label");
  } else if (key == "critic_devil") {
    req.insert("CoT_A");
  } else {
    req.insert("label_index");
  }
  return req;
}

/// Counts `{name}` occurrences in a template body.
inline std::map<std::string, int> count_placeholders(const std::string& text) {
  std::map<std::string, int> counts;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string::npos) {
    const auto close = text.find('}', pos + 1);
    if (close == std::string::npos) break;
    const std::string name = text.substr(pos + 1, close - pos - 1);
    if (!name.empty() && name.find_first_of(" {\n") == std::string::npos) ++counts[name];
    pos = close + 1;
  }
  return counts;
}

struct PromptTemplate {
  TaskKind task = TaskKind::text_cls;
  std::string key;
  std::string text;

  void validate() const {
    const auto counts = count_placeholders(text);
    for (const auto& [name, n] : counts)
      if (!known_placeholders().contains(name))
        throw ValidationError("template " + to_string(task) + "/" + key +
                              ": unknown placeholder {" + name + "}");
    for (const auto& name : required_placeholders(task, key)) {
      auto it = counts.find(name);
      const int n = it == counts.end() ? 0 : it->second;
      if (n != 1)
        throw ValidationError("template " + to_string(task) + "/" + key + ": placeholder {" +
                              name + "} appears " + std::to_string(n) + " times, expected once");
    }
  }
};

/// A rendered prompt: text plus the image reference that replaces
/// {image_data}, if any.
struct RenderedPrompt {
  std::string text;
  std::optional<std::string> image_ref;
};

inline std::string label_list_with_index(const std::vector<std::string>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(i) + ": " + labels[i];
  }
  return out;
}

inline RenderedPrompt render(const PromptTemplate& tpl, const Item& item,
                             std::optional<Label> label = std::nullopt,
                             const std::optional<std::string>& annotator_cot = std::nullopt) {
  std::map<std::string, std::string> values;
  values["label_list_with_index"] = label_list_with_index(item.label_space);
  values["first_label"] = item.label_space.front();
  values["text_data"] = item.content.text;
  values["question"] = item.content.question;
  values["image_data"] = "";
  if (label) values["label_index"] = std::to_string(*label);
  if (annotator_cot) values["CoT_A"] = *annotator_cot;

  RenderedPrompt out;
  const std::string& t = tpl.text;
  std::size_t pos = 0;
  while (pos < t.size()) {
    const auto open = t.find('{', pos);
    if (open == std::string::npos) {
      out.text.append(t, pos);
      break;
    }
    const auto close = t.find('}', open + 1);
    if (close == std::string::npos) {
      out.text.append(t, pos);
      break;
    }
    out.text.append(t, pos, open - pos);
    const std::string name = t.substr(open + 1, close - open - 1);
    auto it = values.find(name);
    if (it == values.end()) {
      if (known_placeholders().contains(name))
        throw PreconditionError("template " + tpl.key + " needs {" + name +
                                "} but no value was supplied");
      out.text.append(t, open, close - open + 1);
    } else {
      out.text += it->second;
    }
    pos = close + 1;
  }
  // The image slot becomes a separate message part; drop the blank line.
  while (!out.text.empty() && (out.text.front() == '\n' || out.text.front() == ' '))
    out.text.erase(out.text.begin());
  while (!out.text.empty() && (out.text.back() == '\n' || out.text.back() == ' '))
    out.text.pop_back();
  if (!item.content.image_path.empty() && tpl.text.find("{image_data}") != std::string::npos)
    out.image_ref = item.content.image_path;
  return out;
}

/// Templates keyed by (task kind, strategy key), loaded from
/// `<root>/<task_kind>/<key>.txt`.
class PromptLibrary {
 public:
  PromptLibrary() = default;

  static PromptLibrary load(const std::filesystem::path& root = ACT_PROMPT_DIR) {
    PromptLibrary lib;
    if (!std::filesystem::is_directory(root))
      throw NotFoundError("prompt directory " + root.string() + " does not exist");
    for (TaskKind task : {TaskKind::image_cls, TaskKind::text_cls, TaskKind::vqa}) {
      const auto dir = root / to_string(task);
      if (!std::filesystem::is_directory(dir)) continue;
      for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".txt") continue;
        PromptTemplate tpl{task, entry.path().stem().string(), jsonl::read_file(entry.path())};
        tpl.validate();
        lib.add(std::move(tpl));
      }
    }
    return lib;
  }

  void add(PromptTemplate tpl) {
    tpl.validate();
    auto key = std::make_pair(tpl.task, tpl.key);
    templates_[key] = std::move(tpl);
  }

  const PromptTemplate& get(TaskKind task, const std::string& key) const {
    auto it = templates_.find({task, key});
    if (it == templates_.end())
      throw NotFoundError("no prompt template for " + to_string(task) + "/" + key);
    return it->second;
  }

  bool contains(TaskKind task, const std::string& key) const {
    return templates_.contains({task, key});
  }

  std::size_t size() const noexcept { return templates_.size(); }

 private:
  std::map<std::pair<TaskKind, std::string>, PromptTemplate> templates_;
};

}  // namespace act
