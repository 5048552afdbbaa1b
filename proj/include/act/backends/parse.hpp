#pragma once

// Parsing of the bracketed response format "[reasoning][value]". The value is
// always taken from the last top-level bracket pair so chatty prefixes and
// bracketed asides inside the reasoning do not confuse extraction.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "act/backends/criticism.hpp"
#include "act/error.hpp"

namespace act {

enum class Expect { label, error_prob, error_level, yes_no };

struct Parsed {
  double value = 0.0;
  std::optional<Decision> decision;
  std::optional<std::string> reasoning;
  bool clamped = false;

  int as_int() const { return static_cast<int>(value); }
};

namespace detail {

struct Span {
  std::size_t begin;  // first char inside the brackets
  std::size_t end;    // one past the last char inside
};

inline std::vector<Span> top_level_pairs(std::string_view text) {
  std::vector<Span> pairs;
  int depth = 0;
  std::size_t open = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '[') {
      if (depth == 0) open = i + 1;
      ++depth;
    } else if (text[i] == ']' && depth > 0) {
      if (--depth == 0) pairs.push_back({open, i});
    }
  }
  return pairs;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Integer at the start of `s`, optionally followed by ":" and a name
/// ("9" or "9: truck").
inline std::optional<long> leading_int(std::string_view s) {
  s = trim(s);
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr == s.data()) return std::nullopt;
  std::string_view rest = trim(std::string_view(ptr, static_cast<std::size_t>(s.data() + s.size() - ptr)));
  if (!rest.empty() && rest.front() != ':') return std::nullopt;
  return v;
}

inline std::optional<double> full_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  const std::string buf(s);
  char* endp = nullptr;
  const double v = std::strtod(buf.c_str(), &endp);
  if (endp != buf.c_str() + buf.size() || std::isnan(v)) return std::nullopt;
  return v;
}

inline std::optional<Decision> yes_no(std::string_view s) {
  std::string w = lower(trim(s));
  while (!w.empty() && (w.back() == '.' || w.back() == '!')) w.pop_back();
  if (w == "yes") return Decision::yes;
  if (w == "no") return Decision::no;
  return std::nullopt;
}

}  // namespace detail

/// Extracts the expected value from a bracketed response. Throws ParseError
/// when no bracket pair exists, the value is not of the expected kind, or a
/// label/level lies out of range. Error probabilities outside [0, 1] are
/// clamped and flagged instead of rejected.
inline Parsed parse_bracketed(std::string_view response, Expect expect,
                              std::size_t label_space_size = 0) {
  const auto pairs = detail::top_level_pairs(response);
  if (pairs.empty()) throw ParseError("no bracket pair in response");
  const auto& last = pairs.back();
  const std::string_view body = response.substr(last.begin, last.end - last.begin);

  Parsed out;
  if (pairs.size() >= 2) {
    const auto& prev = pairs[pairs.size() - 2];
    out.reasoning = std::string(detail::trim(response.substr(prev.begin, prev.end - prev.begin)));
  }

  switch (expect) {
    case Expect::label: {
      auto v = detail::leading_int(body);
      if (!v) throw ParseError("expected a label index, got '" + std::string(body) + "'");
      if (*v < 0 || static_cast<std::size_t>(*v) >= label_space_size)
        throw ParseError("label index " + std::to_string(*v) + " outside label space of size " +
                         std::to_string(label_space_size));
      out.value = static_cast<double>(*v);
      break;
    }
    case Expect::error_level: {
      auto v = detail::leading_int(body);
      if (!v) throw ParseError("expected an error level, got '" + std::string(body) + "'");
      if (*v < 1 || *v > 5) throw ParseError("error level " + std::to_string(*v) + " outside 1..5");
      out.value = static_cast<double>(*v);
      break;
    }
    case Expect::error_prob: {
      auto v = detail::full_double(body);
      if (!v) throw ParseError("expected an error probability, got '" + std::string(body) + "'");
      out.value = std::clamp(*v, 0.0, 1.0);
      out.clamped = out.value != *v;
      break;
    }
    case Expect::yes_no: {
      auto d = detail::yes_no(body);
      if (!d) throw ParseError("expected Yes or No, got '" + std::string(body) + "'");
      out.decision = d;
      out.value = *d == Decision::yes ? 1.0 : 0.0;
      break;
    }
  }
  return out;
}

/// Bare Yes/No answer without brackets (white-box naive prompt).
inline Decision parse_yes_no(std::string_view response) {
  if (!detail::top_level_pairs(response).empty())
    return *parse_bracketed(response, Expect::yes_no).decision;
  if (auto d = detail::yes_no(response)) return *d;
  throw ParseError("expected Yes or No, got '" + std::string(response) + "'");
}

}  // namespace act
