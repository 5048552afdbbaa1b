#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "act/backends/chat.hpp"
#include "act/backends/criticism.hpp"
#include "act/backends/simulator.hpp"
#include "act/core/correction.hpp"
#include "act/core/jsonl.hpp"
#include "act/error.hpp"
#include "act/sampling/plan.hpp"
#include "act/trainer/softmax.hpp"

namespace act {

enum class ReviewMode { interactive, simulated_oracle, import_file };

NLOHMANN_JSON_SERIALIZE_ENUM(ReviewMode, {{ReviewMode::interactive, "interactive"},
                                          {ReviewMode::simulated_oracle, "simulated_oracle"},
                                          {ReviewMode::import_file, "import_file"}})

inline std::string to_string(ReviewMode m) { return json(m).get<std::string>(); }

inline ReviewMode review_mode_from_string(const std::string& s) {
  const auto v = json(s).get<ReviewMode>();
  if (to_string(v) != s) throw ParseError("unknown review mode '" + s + "'");
  return v;
}

struct PipelineConfig {
  std::string dataset;
  /// Runs live in <workspace>/<run_id>/.
  std::string workspace = "runs";
  /// Empty: derived from the config hash.
  std::string run_id;

  BackendConfig annotator{};
  AnnotationStrategy annotation_strategy = AnnotationStrategy::naive;
  BackendConfig critic{};
  CriticStrategy critic_strategy = CriticStrategy::naive;
  /// Used by "simulated" endpoints. Its seed defaults to `seed`.
  SimulatorConfig simulator{};
  std::optional<std::uint64_t> simulator_seed;

  SamplingRule rule = SamplingRule::threshold;
  /// Exactly one of budget / proportion.
  std::optional<int> budget;
  std::optional<double> proportion;
  double beta = 10.0;
  SamplingMode mode = SamplingMode::hard_cap;
  std::uint64_t seed = 42;

  ReviewMode review_mode = ReviewMode::simulated_oracle;
  std::string reviews_file;
  std::string reviewer = "oracle";

  bool budget_curve = true;

  bool train = false;
  LossSelection train_loss = LossSelection::corrected_mean;
  double lambda = 1.0;
  double l2 = 0.1;
  int epochs = 500;
  std::string embeddings;

  /// Concurrent backend calls within a stage.
  int parallelism = 4;

  SimulatorConfig effective_simulator() const {
    SimulatorConfig s = simulator;
    s.seed = simulator_seed.value_or(seed);
    return s;
  }

  int resolve_budget(std::size_t n) const {
    const int b = budget ? *budget : budget_from_proportion(*proportion, static_cast<int>(n));
    if (b < 0 || static_cast<std::size_t>(b) > n)
      throw ValidationError("budget " + std::to_string(b) + " exceeds dataset size " + std::to_string(n));
    return b;
  }

  void validate() const {
    if (dataset.empty()) throw ValidationError("config: dataset path is required");
    if (budget.has_value() == proportion.has_value())
      throw ValidationError("config: set exactly one of budget and proportion");
    if (budget && *budget < 0) throw ValidationError("config: budget must be >= 0");
    if (proportion && !(*proportion >= 0.0 && *proportion <= 1.0))
      throw ValidationError("config: proportion must lie in [0, 1]");
    if (!(beta > 0.0)) throw ValidationError("config: beta must be > 0");
    if (mode != SamplingMode::hard_cap)
      throw ValidationError("config: human review needs hard_cap sampling so the budget is never exceeded");
    annotator.validate();
    critic.validate();
    simulator.validate();
    if (is_whitebox(critic_strategy) && !critic.simulated() && !critic.logprobs)
      throw ValidationError("config: " + to_string(critic_strategy) +
                            " needs a criticizer with logprobs enabled");
    if (critic_strategy == CriticStrategy::cot_ppl && rule != SamplingRule::ppl_priority)
      throw ValidationError("config: cot_ppl criticism has no error probabilities; use rule ppl_priority");
    if (rule == SamplingRule::ppl_priority && critic_strategy != CriticStrategy::cot_ppl)
      throw ValidationError("config: ppl_priority needs the cot_ppl criticism strategy");
    if (critic_strategy == CriticStrategy::devil && annotation_strategy != AnnotationStrategy::cot)
      throw ValidationError("config: devil criticism needs cot annotation");
    if (review_mode == ReviewMode::import_file && reviews_file.empty())
      throw ValidationError("config: import_file review needs reviews_file");
    if (parallelism < 1) throw ValidationError("config: parallelism must be >= 1");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("config: lambda must lie in [0, 1]");
    if (!(l2 > 0.0)) throw ValidationError("config: l2 must be > 0");
    if (epochs < 0) throw ValidationError("config: epochs must be >= 0");
  }
};

inline void to_json(json& j, const BackendConfig& b) {
  j = json{{"endpoint", b.endpoint},       {"model", b.model},
           {"top_p", b.top_p},             {"temperature", b.temperature},
           {"top_k", b.top_k},             {"max_new_tokens", b.max_new_tokens},
           {"retries", b.retries},         {"timeout_seconds", b.timeout_seconds},
           {"logprobs", b.logprobs},       {"top_logprobs", b.top_logprobs},
           {"api_key_env", b.api_key_env}};
}

inline void from_json(const json& j, BackendConfig& b) {
  const BackendConfig d;
  b.endpoint = j.value("endpoint", d.endpoint);
  b.model = j.value("model", d.model);
  b.top_p = j.value("top_p", d.top_p);
  b.temperature = j.value("temperature", d.temperature);
  b.top_k = j.value("top_k", d.top_k);
  b.max_new_tokens = j.value("max_new_tokens", d.max_new_tokens);
  b.retries = j.value("retries", d.retries);
  b.timeout_seconds = j.value("timeout_seconds", d.timeout_seconds);
  b.logprobs = j.value("logprobs", d.logprobs);
  b.top_logprobs = j.value("top_logprobs", d.top_logprobs);
  b.api_key_env = j.value("api_key_env", d.api_key_env);
}

inline void to_json(json& j, const PipelineConfig& c) {
  const SimulatorConfig& s = c.simulator;
  j = json{{"schema_version", kSchemaVersion},
           {"dataset", c.dataset},
           {"workspace", c.workspace},
           {"run_id", c.run_id},
           {"annotator", c.annotator},
           {"annotation_strategy", c.annotation_strategy},
           {"critic", c.critic},
           {"critic_strategy", c.critic_strategy},
           {"simulator",
            {{"annotator_accuracy", s.annotator_accuracy},
             {"on_error", {s.on_error.a, s.on_error.b}},
             {"on_correct", {s.on_correct.a, s.on_correct.b}},
             {"perfect_criticizer", s.perfect_criticizer}}},
           {"rule", c.rule},
           {"beta", c.beta},
           {"mode", c.mode},
           {"seed", c.seed},
           {"review_mode", c.review_mode},
           {"reviews_file", c.reviews_file},
           {"reviewer", c.reviewer},
           {"budget_curve", c.budget_curve},
           {"train", c.train},
           {"train_loss", c.train_loss},
           {"lambda", c.lambda},
           {"l2", c.l2},
           {"epochs", c.epochs},
           {"embeddings", c.embeddings},
           {"parallelism", c.parallelism}};
  detail::put_optional(j, "budget", c.budget);
  detail::put_optional(j, "proportion", c.proportion);
  detail::put_optional(j, "simulator_seed", c.simulator_seed);
}

inline void from_json(const json& j, PipelineConfig& c) {
  detail::check_schema(j);
  const PipelineConfig d;
  c.dataset = j.at("dataset").get<std::string>();
  c.workspace = j.value("workspace", d.workspace);
  c.run_id = j.value("run_id", d.run_id);
  c.annotator = j.value("annotator", d.annotator);
  c.annotation_strategy = j.value("annotation_strategy", d.annotation_strategy);
  c.critic = j.value("critic", d.critic);
  c.critic_strategy = j.value("critic_strategy", d.critic_strategy);
  if (auto it = j.find("simulator"); it != j.end()) {
    c.simulator.annotator_accuracy = it->value("annotator_accuracy", d.simulator.annotator_accuracy);
    if (it->contains("on_error"))
      c.simulator.on_error = {it->at("on_error").at(0).get<double>(), it->at("on_error").at(1).get<double>()};
    if (it->contains("on_correct"))
      c.simulator.on_correct = {it->at("on_correct").at(0).get<double>(),
                                it->at("on_correct").at(1).get<double>()};
    c.simulator.perfect_criticizer = it->value("perfect_criticizer", false);
  }
  c.simulator_seed = detail::get_optional<std::uint64_t>(j, "simulator_seed");
  c.rule = j.value("rule", d.rule);
  c.budget = detail::get_optional<int>(j, "budget");
  c.proportion = detail::get_optional<double>(j, "proportion");
  c.beta = j.value("beta", d.beta);
  c.mode = j.value("mode", d.mode);
  c.seed = j.value("seed", d.seed);
  c.review_mode = j.value("review_mode", d.review_mode);
  c.reviews_file = j.value("reviews_file", d.reviews_file);
  c.reviewer = j.value("reviewer", d.reviewer);
  c.budget_curve = j.value("budget_curve", d.budget_curve);
  c.train = j.value("train", d.train);
  c.train_loss = j.value("train_loss", d.train_loss);
  c.lambda = j.value("lambda", d.lambda);
  c.l2 = j.value("l2", d.l2);
  c.epochs = j.value("epochs", d.epochs);
  c.embeddings = j.value("embeddings", d.embeddings);
  c.parallelism = j.value("parallelism", d.parallelism);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Hash of the settings that determine a run's results. Where the run is
/// stored, its name and the worker count are left out.
inline std::string config_hash(const PipelineConfig& c) {
  json j = c;
  j.erase("workspace");
  j.erase("run_id");
  j.erase("parallelism");
  // Training can be added to a finished run without starting over.
  j.erase("train");
  return hex16(fnv1a(j.dump()));
}

inline std::string resolve_run_id(const PipelineConfig& c) {
  return c.run_id.empty() ? "run-" + config_hash(c).substr(0, 12) : c.run_id;
}

}  // namespace act
