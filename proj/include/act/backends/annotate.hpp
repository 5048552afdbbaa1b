#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "act/backends/chat.hpp"
#include "act/backends/criticism.hpp"
#include "act/backends/parse.hpp"
#include "act/backends/prompt.hpp"
#include "act/core/types.hpp"
#include "act/error.hpp"
#include "act/parallel.hpp"

namespace act {

/// Error level 1..5 to probability, linear: (level - 1) / 4.
inline double map_error_level(int level) {
  if (level < 1 || level > 5)
    throw PreconditionError("error level " + std::to_string(level) + " outside 1..5");
  return (level - 1) / 4.0;
}

inline double logit_error_probability(double p_yes, double p_no) {
  if (!(p_yes >= 0.0 && p_no >= 0.0)) throw PreconditionError("logit probabilities must be >= 0");
  if (p_yes + p_no <= 0.0) throw PreconditionError("degenerate logits: p_yes = p_no = 0");
  return p_yes / (p_yes + p_no);
}

/// exp(-mean log-probability).
inline double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw PreconditionError("perplexity of an empty token sequence");
  const double sum = std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

struct YesNoMass {
  double p_yes = 0.0;
  double p_no = 0.0;
  Decision decision = Decision::no;
};

namespace detail {

inline std::optional<Decision> token_yes_no(const std::string& tok) {
  std::string w;
  for (char c : tok)
    if (std::isalpha(static_cast<unsigned char>(c))) w += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (w == "yes") return Decision::yes;
  if (w == "no") return Decision::no;
  return std::nullopt;
}

}  // namespace detail

/// Probability mass on yes/no variants at the last generated yes/no token.
inline YesNoMass yes_no_mass(const std::vector<TokenLogprob>& tokens) {
  for (auto it = tokens.rbegin(); it != tokens.rend(); ++it) {
    auto d = detail::token_yes_no(it->token);
    if (!d) continue;
    YesNoMass m;
    m.decision = *d;
    auto alts = it->top;
    if (alts.empty()) alts.emplace_back(it->token, it->logprob);
    for (const auto& [tok, lp] : alts) {
      auto v = detail::token_yes_no(tok);
      if (v == Decision::yes) m.p_yes += std::exp(lp);
      if (v == Decision::no) m.p_no += std::exp(lp);
    }
    return m;
  }
  throw ParseError("no Yes/No token among the generated tokens");
}

/// Perplexity of the reasoning: tokens lying inside the bracket pair that
/// precedes the final one, or every token before the final pair when the
/// response has no reasoning pair.
inline double reasoning_perplexity(const std::vector<TokenLogprob>& tokens) {
  std::string text;
  std::vector<std::size_t> starts;
  for (const auto& t : tokens) {
    starts.push_back(text.size());
    text += t.token;
  }
  const auto pairs = detail::top_level_pairs(text);
  if (pairs.empty()) throw ParseError("no bracket pair in generated tokens");
  std::size_t lo = 0;
  std::size_t hi = pairs.back().begin - 1;  // position of the final '['
  if (pairs.size() >= 2) {
    lo = pairs[pairs.size() - 2].begin;
    hi = pairs[pairs.size() - 2].end;
  }
  std::vector<double> lps;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const std::size_t b = starts[k];
    const std::size_t e = b + tokens[k].token.size();
    if (b >= lo && e <= hi && e > b) lps.push_back(tokens[k].logprob);
  }
  if (lps.empty()) throw ParseError("no reasoning tokens to score");
  return perplexity(lps);
}

inline AnnotationRecord annotate(const Item& item, AnnotationStrategy strategy, ChatBackend& backend,
                                 const PromptLibrary& prompts) {
  const auto& tpl = prompts.get(item.content.task_kind(), prompt_key(strategy));
  const RenderedPrompt rp = render(tpl, item);
  ChatRequest req;
  req.prompt = rp.text;
  req.image_ref = rp.image_ref;
  req.kind = CallKind::annotate;
  req.item_id = item.id;
  req.annotation_strategy = strategy;

  AnnotationRecord rec;
  rec.item_id = item.id;
  rec.strategy = strategy;
  rec.backend_id = backend.id();
  for (int attempt = 0; attempt < backend.parse_attempts(); ++attempt) {
    const ChatResponse res = backend.complete(req);
    try {
      const Parsed p = parse_bracketed(res.text, Expect::label, item.label_space.size());
      rec.machine_label = p.as_int();
      if (strategy == AnnotationStrategy::cot) rec.reasoning = p.reasoning.value_or("");
      rec.parse_ok = true;
      return rec;
    } catch (const ParseError&) {
    }
  }
  rec.machine_label = kNoLabel;
  rec.parse_ok = false;
  return rec;
}

namespace detail {

inline ChatRequest criticism_request(const Item& item, const AnnotationRecord& ann,
                                     CriticStrategy strategy, const PromptLibrary& prompts) {
  const auto& tpl = prompts.get(item.content.task_kind(), prompt_key(strategy));
  std::optional<std::string> cot;
  if (strategy == CriticStrategy::devil) cot = ann.reasoning;
  const RenderedPrompt rp = render(tpl, item, ann.machine_label, cot);
  ChatRequest req;
  req.prompt = rp.text;
  req.image_ref = rp.image_ref;
  req.kind = CallKind::criticize;
  req.item_id = item.id;
  req.critic_strategy = strategy;
  req.label = ann.machine_label;
  req.want_logprobs = is_whitebox(strategy);
  return req;
}

/// Conservative record for a criticism that never parsed: route to a human.
inline CriticismRecord unparsed(int item_id, CriticStrategy strategy) {
  CriticismRecord r;
  r.item_id = item_id;
  r.strategy = strategy;
  r.error_probability = 1.0;
  r.parse_ok = false;
  return r;
}

}  // namespace detail

inline CriticismRecord criticize_blackbox(const Item& item, const AnnotationRecord& ann,
                                          CriticStrategy strategy, ChatBackend& backend,
                                          const PromptLibrary& prompts) {
  if (is_whitebox(strategy))
    throw PreconditionError(to_string(strategy) + " is a white-box strategy");
  if (strategy == CriticStrategy::devil && !ann.reasoning)
    throw PreconditionError("devil criticism needs the annotator's reasoning (item " +
                            std::to_string(item.id) + ")");
  if (!ann.parse_ok) return detail::unparsed(item.id, strategy);

  const ChatRequest req = detail::criticism_request(item, ann, strategy, prompts);
  const Expect expect = strategy == CriticStrategy::mc ? Expect::error_level : Expect::error_prob;
  for (int attempt = 0; attempt < backend.parse_attempts(); ++attempt) {
    const ChatResponse res = backend.complete(req);
    try {
      const Parsed p = parse_bracketed(res.text, expect);
      CriticismRecord r;
      r.item_id = item.id;
      r.strategy = strategy;
      if (strategy == CriticStrategy::mc) {
        r.error_level = p.as_int();
        r.error_probability = map_error_level(*r.error_level);
      } else {
        r.error_probability = p.value;
        r.clamped = p.clamped;
      }
      if (uses_reasoning(strategy)) r.reasoning = p.reasoning.value_or("");
      return r;
    } catch (const ParseError&) {
    }
  }
  return detail::unparsed(item.id, strategy);
}

inline CriticismRecord criticize_whitebox(const Item& item, const AnnotationRecord& ann,
                                          CriticStrategy strategy, ChatBackend& backend,
                                          const PromptLibrary& prompts) {
  if (!is_whitebox(strategy))
    throw PreconditionError(to_string(strategy) + " is a black-box strategy");
  if (!backend.whitebox())
    throw CapabilityError("backend " + backend.id() + " does not expose token probabilities");
  if (!ann.parse_ok) return detail::unparsed(item.id, strategy);

  const ChatRequest req = detail::criticism_request(item, ann, strategy, prompts);
  for (int attempt = 0; attempt < backend.parse_attempts(); ++attempt) {
    const ChatResponse res = backend.complete(req);
    if (!res.logprobs)
      throw CapabilityError("backend " + backend.id() + " returned no token probabilities");
    try {
      CriticismRecord r;
      r.item_id = item.id;
      r.strategy = strategy;
      if (strategy == CriticStrategy::naive_logit) {
        const YesNoMass m = yes_no_mass(*res.logprobs);
        r.decision = m.decision;
        r.logit_p_yes = m.p_yes;
        r.logit_p_no = m.p_no;
        r.error_probability = logit_error_probability(m.p_yes, m.p_no);
        return r;
      }
      const Parsed p = parse_bracketed(res.text, Expect::yes_no);
      r.reasoning = p.reasoning.value_or("");
      if (strategy == CriticStrategy::cot_logit) {
        const YesNoMass m = yes_no_mass(*res.logprobs);
        r.decision = m.decision;
        r.logit_p_yes = m.p_yes;
        r.logit_p_no = m.p_no;
        r.error_probability = logit_error_probability(m.p_yes, m.p_no);
      } else {
        r.decision = p.decision;
        r.perplexity = reasoning_perplexity(*res.logprobs);
      }
      return r;
    } catch (const ParseError&) {
    } catch (const PreconditionError&) {  // degenerate yes/no mass
    }
  }
  return detail::unparsed(item.id, strategy);
}

inline CriticismRecord criticize(const Item& item, const AnnotationRecord& ann,
                                 CriticStrategy strategy, ChatBackend& backend,
                                 const PromptLibrary& prompts) {
  return is_whitebox(strategy) ? criticize_whitebox(item, ann, strategy, backend, prompts)
                               : criticize_blackbox(item, ann, strategy, backend, prompts);
}

inline std::vector<AnnotationRecord> annotate_all(const Dataset& ds, AnnotationStrategy strategy,
                                                  ChatBackend& backend, const PromptLibrary& prompts,
                                                  int parallelism = 1) {
  std::vector<AnnotationRecord> out(ds.size());
  parallel_for(ds.size(), parallelism,
               [&](std::size_t i) { out[i] = annotate(ds[i], strategy, backend, prompts); });
  return out;
}

inline std::vector<CriticismRecord> criticize_all(const Dataset& ds,
                                                  const std::vector<AnnotationRecord>& annotations,
                                                  CriticStrategy strategy, ChatBackend& backend,
                                                  const PromptLibrary& prompts, int parallelism = 1) {
  if (annotations.size() != ds.size())
    throw PreconditionError("annotation count does not match dataset size");
  std::vector<CriticismRecord> out(ds.size());
  parallel_for(ds.size(), parallelism, [&](std::size_t i) {
    out[i] = criticize(ds[i], annotations[i], strategy, backend, prompts);
  });
  return out;
}

}  // namespace act
