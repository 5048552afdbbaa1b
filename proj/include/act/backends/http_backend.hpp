#pragma once

// Chat-completion client for OpenAI-compatible endpoints.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>
#include <thread>

#include "act/detail/httplib.hpp"
#include <nlohmann/json.hpp>

#include "act/backends/chat.hpp"
#include "act/error.hpp"

namespace act {

namespace detail {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw ValidationError("endpoint '" + url + "' is not an http(s) URL");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline std::string image_url(const std::string& ref) {
  if (ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:"))
    return ref;
  std::ifstream in(ref, std::ios::binary);
  if (!in) throw NotFoundError("cannot read image " + ref);
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::string mime = "image/png";
  if (ref.ends_with(".jpg") || ref.ends_with(".jpeg")) mime = "image/jpeg";
  return "data:" + mime + ";base64," + httplib::detail::base64_encode(bytes);
}

}  // namespace detail

class HttpBackend final : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig config) : config_(std::move(config)) {
    config_.validate();
    url_ = detail::split_url(config_.endpoint);
  }

  std::string id() const override { return config_.model.empty() ? config_.endpoint : config_.model; }
  bool whitebox() const override { return config_.logprobs; }
  int parse_attempts() const override { return config_.retries; }

  json request_body(const ChatRequest& req) const {
    json content = json::array();
    if (req.image_ref)
      content.push_back({{"type", "image_url"},
                         {"image_url", {{"url", detail::image_url(*req.image_ref)}}}});
    content.push_back({{"type", "text"}, {"text", req.prompt}});
    json body = {{"model", config_.model},
                 {"messages", json::array({{{"role", "user"}, {"content", content}}})},
                 {"top_p", config_.top_p},
                 {"temperature", config_.temperature},
                 {"top_k", config_.top_k},
                 {"max_tokens", config_.max_new_tokens}};
    if (req.want_logprobs) {
      body["logprobs"] = true;
      body["top_logprobs"] = config_.top_logprobs;
    }
    return body;
  }

  static ChatResponse parse_response(const std::string& raw) {
    json j;
    try {
      j = json::parse(raw);
    } catch (const json::exception& e) {
      throw BackendError(std::string("endpoint returned invalid JSON: ") + e.what());
    }
    try {
      const json& choice = j.at("choices").at(0);
      ChatResponse out;
      const json& msg = choice.at("message").at("content");
      out.text = msg.is_string() ? msg.get<std::string>() : std::string();
      if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
        std::vector<TokenLogprob> tokens;
        for (const json& t : lp->value("content", json::array())) {
          TokenLogprob tok;
          tok.token = t.at("token").get<std::string>();
          tok.logprob = t.at("logprob").get<double>();
          for (const json& alt : t.value("top_logprobs", json::array()))
            tok.top.emplace_back(alt.at("token").get<std::string>(), alt.at("logprob").get<double>());
          tokens.push_back(std::move(tok));
        }
        out.logprobs = std::move(tokens);
      }
      return out;
    } catch (const json::exception& e) {
      throw BackendError(std::string("unexpected response layout: ") + e.what());
    }
  }

  ChatResponse complete(const ChatRequest& req) override {
    if (req.want_logprobs && !config_.logprobs)
      throw CapabilityError("backend " + id() + " is not configured for log-probabilities");
    const std::string body = request_body(req).dump();
    httplib::Headers headers;
    if (!config_.api_key_env.empty())
      if (const char* key = std::getenv(config_.api_key_env.c_str()))
        headers.emplace("Authorization", std::string("Bearer ") + key);

    std::string last_error;
    for (int attempt = 0; attempt < config_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(100 << attempt));
      httplib::Client cli(url_.origin);
      const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
      cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      auto res = cli.Post(url_.path, headers, body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500 || res->status == 429) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw BackendError("endpoint rejected request: HTTP " + std::to_string(res->status) + " " +
                           res->body.substr(0, 200));
      return parse_response(res->body);
    }
    throw BackendError("endpoint " + config_.endpoint + " failed after " +
                       std::to_string(config_.retries) + " attempts: " + last_error);
  }

 private:
  BackendConfig config_;
  detail::SplitUrl url_;
};

}  // namespace act
