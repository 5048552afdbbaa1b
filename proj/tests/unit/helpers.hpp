#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "act/act.hpp"

namespace testutil {

namespace fs = std::filesystem;

/// Text items 0..n-1 with k classes and truth i % k unless given.
inline act::Dataset text_dataset(int n, int k, std::function<act::Label(int)> truth = {}) {
  std::vector<std::string> labels;
  for (int c = 0; c < k; ++c) labels.push_back("class" + std::to_string(c));
  std::vector<act::Item> items;
  for (int i = 0; i < n; ++i) {
    act::Item it;
    it.id = i;
    it.content = act::Content::from_text("item " + std::to_string(i));
    it.label_space = labels;
    it.hidden_truth = truth ? truth(i) : i % k;
    items.push_back(std::move(it));
  }
  return act::Dataset(std::move(items));
}

/// Fresh empty directory under the system temp dir.
inline fs::path temp_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path p = fs::temp_directory_path() /
                     ("act_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

/// Backend whose replies come from a function.
class ScriptedBackend final : public act::ChatBackend {
 public:
  explicit ScriptedBackend(std::function<act::ChatResponse(const act::ChatRequest&)> fn, bool whitebox = false)
      : fn_(std::move(fn)), whitebox_(whitebox) {}
  act::ChatResponse complete(const act::ChatRequest& r) override {
    ++calls;
    return fn_(r);
  }
  std::string id() const override { return "scripted"; }
  bool whitebox() const override { return whitebox_; }
  int calls = 0;

 private:
  std::function<act::ChatResponse(const act::ChatRequest&)> fn_;
  bool whitebox_;
};

inline act::ChatResponse text_reply(std::string s) { return act::ChatResponse{std::move(s), std::nullopt}; }

}  // namespace testutil
