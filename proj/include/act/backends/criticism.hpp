#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "act/core/jsonl.hpp"
#include "act/error.hpp"

namespace act {

enum class CriticStrategy { naive, cot, mc, devil, naive_logit, cot_logit, cot_ppl };

NLOHMANN_JSON_SERIALIZE_ENUM(CriticStrategy, {{CriticStrategy::naive, "naive"},
                                              {CriticStrategy::cot, "cot"},
                                              {CriticStrategy::mc, "mc"},
                                              {CriticStrategy::devil, "devil"},
                                              {CriticStrategy::naive_logit, "naive_logit"},
                                              {CriticStrategy::cot_logit, "cot_logit"},
                                              {CriticStrategy::cot_ppl, "cot_ppl"}})

inline std::string to_string(CriticStrategy s) { return json(s).get<std::string>(); }

inline CriticStrategy critic_strategy_from_string(const std::string& s) {
  const json j = s;
  const auto v = j.get<CriticStrategy>();
  if (to_string(v) != s) throw ParseError("unknown criticism strategy '" + s + "'");
  return v;
}

inline bool is_whitebox(CriticStrategy s) {
  return s == CriticStrategy::naive_logit || s == CriticStrategy::cot_logit ||
         s == CriticStrategy::cot_ppl;
}

inline bool uses_reasoning(CriticStrategy s) {
  return s != CriticStrategy::naive && s != CriticStrategy::naive_logit;
}

enum class Decision { yes, no };

NLOHMANN_JSON_SERIALIZE_ENUM(Decision, {{Decision::yes, "yes"}, {Decision::no, "no"}})

struct CriticismRecord {
  int item_id = 0;
  CriticStrategy strategy = CriticStrategy::naive;
  std::optional<double> error_probability;
  std::optional<int> error_level;       // mc only
  std::optional<Decision> decision;     // white-box only
  std::optional<std::string> reasoning;
  std::optional<double> perplexity;     // cot_ppl only
  std::optional<double> logit_p_yes;    // *_logit only
  std::optional<double> logit_p_no;
  bool parse_ok = true;
  /// Parsed probability fell outside [0, 1] and was clamped.
  bool clamped = false;

  bool operator==(const CriticismRecord&) const = default;
};

/// Throws ValidationError unless exactly the fields the strategy mandates are
/// present and in range. Unparseable records (parse_ok == false) only need
/// the conservative error probability.
inline void validate(const CriticismRecord& r) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("criticism for item " + std::to_string(r.item_id) + " (" +
                          to_string(r.strategy) + "): " + what);
  };
  if (r.error_probability && !(*r.error_probability >= 0.0 && *r.error_probability <= 1.0))
    fail("error probability outside [0, 1]");
  if (r.perplexity && !(*r.perplexity > 0.0)) fail("perplexity must be positive");
  if (!r.parse_ok) {
    if (!r.error_probability) fail("unparseable record must carry an error probability");
    return;
  }
  const auto s = r.strategy;
  const bool want_eps = s != CriticStrategy::cot_ppl;
  const bool want_level = s == CriticStrategy::mc;
  const bool want_decision = is_whitebox(s);
  const bool want_ppl = s == CriticStrategy::cot_ppl;
  const bool want_logits = s == CriticStrategy::naive_logit || s == CriticStrategy::cot_logit;
  const bool want_reasoning = uses_reasoning(s);
  if (r.error_probability.has_value() != want_eps) fail("error_probability presence");
  if (r.error_level.has_value() != want_level) fail("error_level presence");
  if (r.decision.has_value() != want_decision) fail("decision presence");
  if (r.perplexity.has_value() != want_ppl) fail("perplexity presence");
  if (r.logit_p_yes.has_value() != want_logits || r.logit_p_no.has_value() != want_logits)
    fail("logit probability presence");
  if (r.reasoning.has_value() != want_reasoning) fail("reasoning presence");
  if (r.error_level && (*r.error_level < 1 || *r.error_level > 5)) fail("error level outside 1..5");
}

inline void to_json(json& j, const CriticismRecord& r) {
  j = json{{"schema_version", kSchemaVersion},
           {"item_id", r.item_id},
           {"strategy", r.strategy},
           {"parse_ok", r.parse_ok}};
  if (r.clamped) j["clamped"] = true;
  detail::put_optional(j, "error_probability", r.error_probability);
  detail::put_optional(j, "error_level", r.error_level);
  detail::put_optional(j, "decision", r.decision);
  detail::put_optional(j, "reasoning", r.reasoning);
  detail::put_optional(j, "perplexity", r.perplexity);
  detail::put_optional(j, "logit_p_yes", r.logit_p_yes);
  detail::put_optional(j, "logit_p_no", r.logit_p_no);
}

inline void from_json(const json& j, CriticismRecord& r) {
  detail::check_schema(j);
  r.item_id = detail::item_id_of(j);
  r.strategy = j.at("strategy").get<CriticStrategy>();
  r.parse_ok = j.value("parse_ok", true);
  r.clamped = j.value("clamped", false);
  r.error_probability = detail::get_optional<double>(j, "error_probability");
  r.error_level = detail::get_optional<int>(j, "error_level");
  r.decision = detail::get_optional<Decision>(j, "decision");
  r.reasoning = detail::get_optional<std::string>(j, "reasoning");
  r.perplexity = detail::get_optional<double>(j, "perplexity");
  r.logit_p_yes = detail::get_optional<double>(j, "logit_p_yes");
  r.logit_p_no = detail::get_optional<double>(j, "logit_p_no");
}

}  // namespace act
