#pragma once

// Seeded oracle annotator and criticizer. Each item's draw depends only on
// (seed, item_id), so results do not depend on call order or parallelism.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "act/backends/chat.hpp"
#include "act/backends/criticism.hpp"
#include "act/core/types.hpp"
#include "act/error.hpp"
#include "act/rng.hpp"

namespace act {

struct BetaParams {
  double a = 1.0;
  double b = 1.0;

  bool operator==(const BetaParams&) const = default;
};

struct SimulatorConfig {
  double annotator_accuracy = 0.8;
  /// ε̂ distribution when the machine label is wrong.
  BetaParams on_error{9.0, 1.0};
  /// ε̂ distribution when the machine label is right.
  BetaParams on_correct{1.0, 9.0};
  /// Emit ε̂ = 1 for wrong labels and 0 for right ones, ignoring the Betas.
  bool perfect_criticizer = false;
  std::uint64_t seed = 42;

  static SimulatorConfig perfect(double accuracy, std::uint64_t seed) {
    SimulatorConfig c;
    c.annotator_accuracy = accuracy;
    c.perfect_criticizer = true;
    c.seed = seed;
    return c;
  }

  static SimulatorConfig uninformative(double accuracy, std::uint64_t seed) {
    SimulatorConfig c;
    c.annotator_accuracy = accuracy;
    c.on_error = {1.0, 1.0};
    c.on_correct = {1.0, 1.0};
    c.seed = seed;
    return c;
  }

  void validate() const {
    if (!(annotator_accuracy >= 0.0 && annotator_accuracy <= 1.0))
      throw ValidationError("annotator_accuracy must lie in [0, 1]");
    for (const BetaParams& p : {on_error, on_correct})
      if (!(p.a > 0.0 && p.b > 0.0)) throw ValidationError("Beta parameters must be > 0");
  }

  bool operator==(const SimulatorConfig&) const = default;
};

inline const Label& truth_of(const Item& item) {
  if (!item.hidden_truth)
    throw PreconditionError("simulation needs hidden_truth (item " + std::to_string(item.id) + ")");
  return *item.hidden_truth;
}

/// Seeded machine label: the truth with probability annotator_accuracy,
/// otherwise uniform over the other labels.
inline Label simulated_label(const Item& item, const SimulatorConfig& cfg) {
  const Label truth = truth_of(item);
  auto eng = rng::engine(cfg.seed, static_cast<std::uint64_t>(item.id), rng::Stream::annotate);
  const std::size_t k = item.label_space.size();
  if (rng::uniform01(eng) < cfg.annotator_accuracy || k < 2) return truth;
  const auto wrong = static_cast<Label>(rng::below(eng, k - 1));
  return wrong >= truth ? wrong + 1 : wrong;
}

/// Seeded error-probability draw for `label` on `item`.
inline double simulated_error_probability(const Item& item, Label label,
                                          const SimulatorConfig& cfg) {
  const bool wrong = label != truth_of(item);
  if (cfg.perfect_criticizer) return wrong ? 1.0 : 0.0;
  auto eng = rng::engine(cfg.seed, static_cast<std::uint64_t>(item.id), rng::Stream::criticize);
  const BetaParams& p = wrong ? cfg.on_error : cfg.on_correct;
  return rng::beta(eng, p.a, p.b);
}

inline std::vector<AnnotationRecord> simulate_annotator(const Dataset& ds,
                                                        const SimulatorConfig& cfg,
                                                        AnnotationStrategy strategy =
                                                            AnnotationStrategy::naive) {
  cfg.validate();
  std::vector<AnnotationRecord> out;
  out.reserve(ds.size());
  for (const Item& item : ds) {
    AnnotationRecord r;
    r.item_id = item.id;
    r.machine_label = simulated_label(item, cfg);
    r.strategy = strategy;
    r.backend_id = "simulated";
    if (strategy == AnnotationStrategy::cot)
      r.reasoning = "the content matches " + item.label_space[static_cast<std::size_t>(r.machine_label)];
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<CriticismRecord> simulate_criticizer(const std::vector<AnnotationRecord>& annotations,
                                                        const Dataset& ds,
                                                        const SimulatorConfig& cfg) {
  cfg.validate();
  if (annotations.size() != ds.size())
    throw PreconditionError("annotation count does not match dataset size");
  std::vector<CriticismRecord> out;
  out.reserve(ds.size());
  for (const AnnotationRecord& a : annotations) {
    CriticismRecord c;
    c.item_id = a.item_id;
    c.strategy = CriticStrategy::naive;
    c.error_probability = simulated_error_probability(ds.at(a.item_id), a.machine_label, cfg);
    out.push_back(std::move(c));
  }
  return out;
}

namespace detail {

inline std::string full_precision(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Chat backend that answers from the simulator instead of a model, in the
/// same bracketed text formats a real model is asked for. Parsing its
/// responses reproduces simulate_annotator / simulate_criticizer exactly
/// for the naive and cot strategies.
class SimulatedChatBackend final : public ChatBackend {
 public:
  SimulatedChatBackend(const Dataset& ds, SimulatorConfig cfg, bool whitebox = true)
      : ds_(&ds), cfg_(cfg), whitebox_(whitebox) {
    cfg_.validate();
  }

  std::string id() const override { return "simulated"; }
  bool whitebox() const override { return whitebox_; }

  ChatResponse complete(const ChatRequest& req) override {
    if (req.want_logprobs && !whitebox_)
      throw CapabilityError("simulated backend created without log-probabilities");
    const Item& item = ds_->at(req.item_id);
    ChatResponse out;
    if (req.kind == CallKind::annotate) {
      const Label l = simulated_label(item, cfg_);
      const std::string value = "[" + std::to_string(l) + "]";
      out.text = req.annotation_strategy == AnnotationStrategy::cot
                     ? "[the content matches " + item.label_space[static_cast<std::size_t>(l)] + "]" + value
                     : value;
      return out;
    }

    const double draw = simulated_error_probability(item, req.label, cfg_);
    const std::string reasoning = "[the label " + std::to_string(req.label) + " was checked against the content]";
    switch (req.critic_strategy) {
      case CriticStrategy::naive:
        out.text = "[" + detail::full_precision(draw) + "]";
        break;
      case CriticStrategy::cot:
      case CriticStrategy::devil:
        out.text = reasoning + "[" + detail::full_precision(draw) + "]";
        break;
      case CriticStrategy::mc:
        out.text = reasoning + "[" + std::to_string(1 + static_cast<int>(std::lround(4.0 * draw))) + "]";
        break;
      case CriticStrategy::naive_logit:
      case CriticStrategy::cot_logit:
      case CriticStrategy::cot_ppl:
        out = yes_no_response(draw, req.critic_strategy != CriticStrategy::naive_logit);
        break;
    }
    return out;
  }

 private:
  // The answer token carries p_yes = draw and p_no = 1 - draw. Reasoning
  // tokens share one log-probability chosen so the perplexity is low when
  // the draw is decisive and high near 0.5.
  static ChatResponse yes_no_response(double draw, bool with_reasoning) {
    const bool yes = draw >= 0.5;
    std::vector<std::pair<std::string, double>> top;
    auto add = [&](const std::string& tok, double p) {
      if (p > 0.0) top.emplace_back(tok, std::log(p));
    };
    if (yes) {
      add("Yes", draw);
      add("No", 1.0 - draw);
    } else {
      add("No", 1.0 - draw);
      add("Yes", draw);
    }
    const std::string answer = yes ? "Yes" : "No";
    const double answer_lp = top.front().second;

    ChatResponse out;
    std::vector<TokenLogprob> tokens;
    if (with_reasoning) {
      const double ppl = 1.0 + 9.0 * (1.0 - std::abs(2.0 * draw - 1.0));
      const double lp = -std::log(ppl);
      tokens.push_back({"[", 0.0, {}});
      for (const char* w : {"the", " label", " was", " checked", " against", " content"})
        tokens.push_back({w, lp, {}});
      tokens.push_back({"][", 0.0, {}});
      tokens.push_back({answer, answer_lp, top});
      tokens.push_back({"]", 0.0, {}});
    } else {
      tokens.push_back({answer, answer_lp, top});
    }
    for (const auto& t : tokens) out.text += t.token;
    out.logprobs = std::move(tokens);
    return out;
  }

  const Dataset* ds_;
  SimulatorConfig cfg_;
  bool whitebox_;
};

}  // namespace act
