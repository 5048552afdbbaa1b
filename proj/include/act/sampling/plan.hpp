#pragma once

// Budget-aware transforms from estimated error probabilities to review
// probabilities, and the review-indicator draws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "act/backends/criticism.hpp"
#include "act/core/jsonl.hpp"
#include "act/error.hpp"
#include "act/rng.hpp"

namespace act {

enum class SamplingRule { normalization, exponential, threshold, ppl_priority };

NLOHMANN_JSON_SERIALIZE_ENUM(SamplingRule, {{SamplingRule::normalization, "normalization"},
                                            {SamplingRule::exponential, "exponential"},
                                            {SamplingRule::threshold, "threshold"},
                                            {SamplingRule::ppl_priority, "ppl_priority"}})

enum class SamplingMode { hard_cap, expectation };

NLOHMANN_JSON_SERIALIZE_ENUM(SamplingMode, {{SamplingMode::hard_cap, "hard_cap"},
                                            {SamplingMode::expectation, "expectation"}})

inline std::string to_string(SamplingRule r) { return json(r).get<std::string>(); }
inline std::string to_string(SamplingMode m) { return json(m).get<std::string>(); }

inline SamplingRule sampling_rule_from_string(const std::string& s) {
  const auto v = json(s).get<SamplingRule>();
  if (to_string(v) != s) throw ParseError("unknown sampling rule '" + s + "'");
  return v;
}

inline SamplingMode sampling_mode_from_string(const std::string& s) {
  const auto v = json(s).get<SamplingMode>();
  if (to_string(v) != s) throw ParseError("unknown sampling mode '" + s + "'");
  return v;
}

struct SamplingPlan {
  SamplingRule rule = SamplingRule::threshold;
  int budget = 0;
  double proportion = 0.0;
  std::vector<double> pi;
  std::vector<int> delta;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> tau;
  std::uint64_t seed = 0;
  SamplingMode mode = SamplingMode::hard_cap;
  /// Exponential only: even alpha = 1 left the expected count above the
  /// budget, so the draws were capped regardless of mode.
  bool saturated = false;

  int selected() const { return std::accumulate(delta.begin(), delta.end(), 0); }

  bool operator==(const SamplingPlan&) const = default;
};

namespace detail {

inline void check_budget(int budget, std::size_t n) {
  if (budget < 0 || static_cast<std::size_t>(budget) > n)
    throw PreconditionError("budget " + std::to_string(budget) + " outside 0.." + std::to_string(n));
}

inline void check_probabilities(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!(x >= 0.0 && x <= 1.0))
      throw PreconditionError(std::string(what) + " must lie in [0, 1]");
}

inline std::uint64_t tie_key(std::uint64_t seed, std::size_t i) {
  return rng::derive(seed, i, static_cast<std::uint64_t>(rng::Stream::tie_break));
}

/// Indices ordered by descending priority, ties by a seeded key. The key
/// ignores the budget, so selections for growing budgets are nested.
inline std::vector<std::size_t> rank_desc(std::span<const double> priority, std::uint64_t seed) {
  std::vector<std::size_t> idx(priority.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::uint64_t> keys(priority.size());
  for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = tie_key(seed, i);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (priority[a] != priority[b]) return priority[a] > priority[b];
    return keys[a] < keys[b];
  });
  return idx;
}

inline double logistic(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace detail

/// pi_i = min(1, B eps_i / sum eps); uniform B/N when every eps is zero.
inline std::vector<double> transform_normalization(std::span<const double> eps, int budget) {
  detail::check_probabilities(eps, "error probabilities");
  detail::check_budget(budget, eps.size());
  const double total = std::accumulate(eps.begin(), eps.end(), 0.0);
  std::vector<double> pi(eps.size());
  const double b = static_cast<double>(budget);
  for (std::size_t i = 0; i < eps.size(); ++i)
    pi[i] = total > 0.0 ? std::min(1.0, b * eps[i] / total) : b / static_cast<double>(eps.size());
  return pi;
}

struct ExponentialTransform {
  double alpha = 0.0;
  std::vector<double> pi;
  bool saturated = false;
};

inline std::vector<double> exponential_pi(std::span<const double> eps, double alpha, double beta) {
  std::vector<double> pi(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) pi[i] = detail::logistic(beta * (eps[i] - alpha));
  return pi;
}

/// Logistic weighting with the smallest alpha in [0, 1] whose expected
/// review count fits the budget, found by bisection.
inline ExponentialTransform transform_exponential(std::span<const double> eps, int budget, double beta) {
  detail::check_probabilities(eps, "error probabilities");
  detail::check_budget(budget, eps.size());
  if (!(beta > 0.0)) throw PreconditionError("beta must be > 0");
  const double b = static_cast<double>(budget);
  auto mass = [&](double alpha) {
    double s = 0.0;
    for (double e : eps) s += detail::logistic(beta * (e - alpha));
    return s;
  };
  ExponentialTransform out;
  if (mass(0.0) <= b) {
    out.alpha = 0.0;
  } else if (mass(1.0) > b) {
    out.alpha = 1.0;
    out.saturated = true;
  } else {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 100 && hi - lo > 0.0; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      (mass(mid) <= b ? hi : lo) = mid;
    }
    out.alpha = hi;
  }
  out.pi = exponential_pi(eps, out.alpha, beta);
  return out;
}

struct ThresholdTransform {
  std::optional<double> tau;
  std::vector<double> pi;
};

/// pi = 1 for the top-B error probabilities (seeded ties), 0 elsewhere;
/// tau is the smallest selected value.
inline ThresholdTransform transform_threshold(std::span<const double> eps, int budget, std::uint64_t seed) {
  detail::check_probabilities(eps, "error probabilities");
  detail::check_budget(budget, eps.size());
  ThresholdTransform out;
  out.pi.assign(eps.size(), 0.0);
  const auto order = detail::rank_desc(eps, seed);
  for (int k = 0; k < budget; ++k) out.pi[order[static_cast<std::size_t>(k)]] = 1.0;
  if (budget > 0) out.tau = eps[order[static_cast<std::size_t>(budget - 1)]];
  return out;
}

/// delta_i ~ Bernoulli(pi_i) from (seed, i). In hard_cap mode an overdraw is
/// cut back to the B drawn items with the highest priority (pi when no
/// priority is given).
inline std::vector<int> draw_indicators(std::span<const double> pi, int budget, std::uint64_t seed,
                                        SamplingMode mode, std::span<const double> priority = {}) {
  detail::check_probabilities(pi, "review probabilities");
  if (budget < 0) throw PreconditionError("budget must be >= 0");
  if (!priority.empty() && priority.size() != pi.size())
    throw PreconditionError("priority length does not match pi");
  std::vector<int> delta(pi.size(), 0);
  int drawn = 0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    // u lies in [0, 1), so pi of 0 or 1 decides the draw; skip seeding.
    if (pi[i] == 0.0 || pi[i] == 1.0) {
      delta[i] = pi[i] == 1.0;
    } else {
      auto eng = rng::engine(seed, i, rng::Stream::indicator);
      delta[i] = rng::uniform01(eng) < pi[i] ? 1 : 0;
    }
    drawn += delta[i];
  }
  if (mode == SamplingMode::hard_cap && drawn > budget) {
    const auto order = detail::rank_desc(priority.empty() ? pi : priority, seed);
    int kept = 0;
    for (std::size_t i : order) {
      if (!delta[i]) continue;
      if (kept < budget)
        ++kept;
      else
        delta[i] = 0;
    }
  }
  return delta;
}

/// Review order for perplexity-scored criticisms: Yes before No; within
/// Yes ascending perplexity, within No descending; ties by item id. The
/// first B items in that order get delta = 1. Records whose criticism never
/// parsed go ahead of everything, like an error probability of 1.
inline std::vector<int> ppl_priority_order(std::span<const CriticismRecord> records, int budget) {
  detail::check_budget(budget, records.size());
  for (const auto& r : records)
    if (r.strategy != CriticStrategy::cot_ppl || (r.parse_ok && (!r.decision || !r.perplexity)))
      throw PreconditionError("ppl priority needs cot_ppl records with decision and perplexity (item " +
                              std::to_string(r.item_id) + ")");
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = records[a];
    const auto& rb = records[b];
    if (ra.parse_ok != rb.parse_ok) return !ra.parse_ok;
    if (!ra.parse_ok) return ra.item_id < rb.item_id;
    const bool ya = *ra.decision == Decision::yes, yb = *rb.decision == Decision::yes;
    if (ya != yb) return ya;
    if (*ra.perplexity != *rb.perplexity)
      return ya ? *ra.perplexity < *rb.perplexity : *ra.perplexity > *rb.perplexity;
    return ra.item_id < rb.item_id;
  });
  std::vector<int> delta(records.size(), 0);
  for (int k = 0; k < budget; ++k) delta[idx[static_cast<std::size_t>(k)]] = 1;
  return delta;
}

struct SamplingOptions {
  SamplingRule rule = SamplingRule::threshold;
  int budget = 0;
  double beta = 10.0;
  SamplingMode mode = SamplingMode::hard_cap;
  std::uint64_t seed = 42;
};

/// Transform plus draws for the three probability-based rules.
inline SamplingPlan plan_sampling(std::span<const double> eps, const SamplingOptions& opt) {
  if (eps.empty()) throw PreconditionError("no error probabilities to sample from");
  SamplingPlan plan;
  plan.rule = opt.rule;
  plan.budget = opt.budget;
  plan.proportion = static_cast<double>(opt.budget) / static_cast<double>(eps.size());
  plan.seed = opt.seed;
  plan.mode = opt.mode;
  SamplingMode draw_mode = opt.mode;
  switch (opt.rule) {
    case SamplingRule::normalization:
      plan.pi = transform_normalization(eps, opt.budget);
      break;
    case SamplingRule::exponential: {
      auto t = transform_exponential(eps, opt.budget, opt.beta);
      plan.pi = std::move(t.pi);
      plan.alpha = t.alpha;
      plan.beta = opt.beta;
      plan.saturated = t.saturated;
      if (t.saturated) draw_mode = SamplingMode::hard_cap;
      break;
    }
    case SamplingRule::threshold: {
      auto t = transform_threshold(eps, opt.budget, opt.seed);
      plan.pi = std::move(t.pi);
      plan.tau = t.tau;
      break;
    }
    case SamplingRule::ppl_priority:
      throw PreconditionError("ppl_priority plans are built from cot_ppl criticism records");
  }
  plan.delta = draw_indicators(plan.pi, opt.budget, opt.seed, draw_mode, eps);
  return plan;
}

/// Plan from criticism records; handles ppl_priority, which has no error
/// probabilities.
inline SamplingPlan plan_sampling(std::span<const CriticismRecord> records, const SamplingOptions& opt) {
  if (opt.rule == SamplingRule::ppl_priority) {
    SamplingPlan plan;
    plan.rule = opt.rule;
    plan.budget = opt.budget;
    plan.proportion = records.empty() ? 0.0 : static_cast<double>(opt.budget) / static_cast<double>(records.size());
    plan.seed = opt.seed;
    plan.mode = opt.mode;
    plan.delta = ppl_priority_order(records, opt.budget);
    plan.pi.assign(plan.delta.begin(), plan.delta.end());
    return plan;
  }
  std::vector<double> eps;
  eps.reserve(records.size());
  for (const auto& r : records) {
    if (!r.error_probability)
      throw PreconditionError("criticism for item " + std::to_string(r.item_id) +
                              " has no error probability; use the ppl_priority rule");
    eps.push_back(*r.error_probability);
  }
  return plan_sampling(eps, opt);
}

inline void to_json(json& j, const SamplingPlan& p) {
  j = json{{"schema_version", kSchemaVersion},
           {"rule", p.rule},
           {"budget", p.budget},
           {"proportion", p.proportion},
           {"seed", p.seed},
           {"mode", p.mode},
           {"saturated", p.saturated},
           {"pi", p.pi},
           {"delta", p.delta}};
  detail::put_optional(j, "alpha", p.alpha);
  detail::put_optional(j, "beta", p.beta);
  detail::put_optional(j, "tau", p.tau);
}

inline void from_json(const json& j, SamplingPlan& p) {
  detail::check_schema(j);
  p.rule = j.at("rule").get<SamplingRule>();
  p.budget = j.at("budget").get<int>();
  p.proportion = j.at("proportion").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.mode = j.at("mode").get<SamplingMode>();
  p.saturated = j.value("saturated", false);
  p.pi = j.at("pi").get<std::vector<double>>();
  p.delta = j.at("delta").get<std::vector<int>>();
  p.alpha = detail::get_optional<double>(j, "alpha");
  p.beta = detail::get_optional<double>(j, "beta");
  p.tau = detail::get_optional<double>(j, "tau");
}

/// One row per item for sampling.jsonl.
inline std::vector<json> plan_rows(const SamplingPlan& plan, std::span<const CriticismRecord> criticisms) {
  std::vector<json> rows;
  rows.reserve(plan.pi.size());
  for (std::size_t i = 0; i < plan.pi.size(); ++i) {
    json row{{"schema_version", kSchemaVersion},
             {"item_id", i < criticisms.size() ? criticisms[i].item_id : static_cast<int>(i)},
             {"rule", plan.rule},
             {"budget", plan.budget},
             {"pi", plan.pi[i]},
             {"delta", plan.delta[i]}};
    if (i < criticisms.size()) detail::put_optional(row, "error_probability", criticisms[i].error_probability);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace act
