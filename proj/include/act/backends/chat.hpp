#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "act/backends/criticism.hpp"
#include "act/core/types.hpp"
#include "act/error.hpp"

namespace act {

struct BackendConfig {
  /// Chat-completion URL, or "simulated" for the seeded oracle.
  std::string endpoint = "simulated";
  std::string model;
  double top_p = 0.9;
  double temperature = 0.7;
  int top_k = 50;
  int max_new_tokens = 500;
  /// Attempts per request, shared by transport and parse failures.
  int retries = 3;
  double timeout_seconds = 60.0;
  /// Ask for per-token log-probabilities (required by white-box strategies).
  bool logprobs = false;
  int top_logprobs = 5;
  /// Environment variable holding a bearer token; empty means none is sent.
  std::string api_key_env;

  bool simulated() const { return endpoint == "simulated"; }

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("top_p must lie in (0, 1]");
    if (!(temperature >= 0.0)) throw ValidationError("temperature must be >= 0");
    if (top_k < 0) throw ValidationError("top_k must be >= 0");
    if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");
    if (retries < 1) throw ValidationError("retries must be >= 1");
    if (!(timeout_seconds > 0.0)) throw ValidationError("timeout must be positive");
    if (top_logprobs < 0 || top_logprobs > 20)
      throw ValidationError("top_logprobs must lie in 0..20");
    if (endpoint.empty()) throw ValidationError("backend endpoint is empty");
  }
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  /// Alternatives at this position, most likely first (includes the token).
  std::vector<std::pair<std::string, double>> top;
};

enum class CallKind { annotate, criticize };

struct ChatRequest {
  std::string prompt;
  std::optional<std::string> image_ref;
  bool want_logprobs = false;

  // What the prompt asks for. Real endpoints ignore this; the simulated
  // backend uses it in place of reading the prompt.
  CallKind kind = CallKind::annotate;
  int item_id = 0;
  AnnotationStrategy annotation_strategy = AnnotationStrategy::naive;
  CriticStrategy critic_strategy = CriticStrategy::naive;
  Label label = kNoLabel;  // label under criticism
};

struct ChatResponse {
  std::string text;
  std::optional<std::vector<TokenLogprob>> logprobs;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  /// One completion. Implementations retry transport failures themselves and
  /// throw BackendError once attempts are exhausted.
  virtual ChatResponse complete(const ChatRequest& request) = 0;

  virtual std::string id() const = 0;

  /// Whether responses carry token log-probabilities.
  virtual bool whitebox() const = 0;

  /// Attempts the caller should make when a response fails to parse.
  virtual int parse_attempts() const { return 3; }
};

}  // namespace act
