#pragma once

// Final-answer extraction, answer verification, and validator-score parsing.
// All functions are pure. Repeated patterns resolve last-wins.

#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cbu/error.hpp"

namespace cbu {

struct ParsedAnswer {
  std::string raw_span;
  std::string canonical;
  bool found = false;
};

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Strips 3-digit grouping separators: ",", "{,}" and "\,".
// Returns nullopt unless the whole string is a correctly grouped digit run.
inline std::optional<std::string> ungroup_digits(std::string_view s) {
  std::string digits;
  std::size_t group = 0;
  bool seen_separator = false;
  std::size_t i = 0;
  while (i < s.size()) {
    if (is_digit(s[i])) {
      digits.push_back(s[i]);
      ++group;
      ++i;
      continue;
    }
    std::size_t sep = 0;
    if (s[i] == ',') sep = 1;
    else if (s.compare(i, 3, "{,}") == 0) sep = 3;
    else if (s.compare(i, 2, "\\,") == 0) sep = 2;
    if (sep == 0) return std::nullopt;
    if (seen_separator ? group != 3 : (group == 0 || group > 3)) return std::nullopt;
    seen_separator = true;
    group = 0;
    i += sep;
  }
  if (digits.empty() || (seen_separator && group != 3)) return std::nullopt;
  return digits;
}

}  // namespace detail

/// Canonical form used for answer comparison. Integers (optionally signed,
/// optionally with thousands separators) lose separators, leading zeros and a
/// redundant sign; anything else is only whitespace-trimmed.
inline std::string normalize_answer(std::string_view raw) {
  auto s = detail::trim(raw);
  if (s.empty()) return {};
  bool negative = false;
  std::string_view body = s;
  if (body.front() == '+' || body.front() == '-') {
    negative = body.front() == '-';
    body.remove_prefix(1);
    body = detail::trim(body);
  }
  auto digits = detail::ungroup_digits(body);
  if (!digits) return std::string(s);
  auto first = digits->find_first_not_of('0');
  std::string magnitude = first == std::string::npos ? "0" : digits->substr(first);
  if (magnitude == "0") negative = false;
  return negative ? "-" + magnitude : magnitude;
}

/// Contents of the last brace-balanced \boxed{...} in the completion.
inline ParsedAnswer extract_boxed(std::string_view text) {
  // Pair every unescaped '{' with its closing '}' in one pass.
  std::vector<std::size_t> close_of(text.size(), std::string_view::npos);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < text.size(); ++i) {
    bool escaped = i > 0 && text[i - 1] == '\\';
    if (text[i] == '{' && !escaped) {
      stack.push_back(i);
    } else if (text[i] == '}' && !escaped && !stack.empty()) {
      close_of[stack.back()] = i;
      stack.pop_back();
    }
  }

  static constexpr std::string_view tag = "\\boxed";
  ParsedAnswer best;
  std::size_t pos = 0;
  while ((pos = text.find(tag, pos)) != std::string_view::npos) {
    std::size_t open = pos + tag.size();
    while (open < text.size() && detail::is_space(text[open])) ++open;
    pos += tag.size();
    if (open >= text.size() || text[open] != '{') continue;
    std::size_t close = close_of[open];
    if (close == std::string_view::npos) continue;
    best.raw_span = std::string(text.substr(open + 1, close - open - 1));
    best.found = true;
  }
  if (best.found) best.canonical = normalize_answer(best.raw_span);
  return best;
}

/// Binary verifier: 1 iff an answer was found and matches gold after normalization.
inline int verify_answer(const ParsedAnswer& parsed, std::string_view gold) {
  if (detail::trim(gold).empty()) throw Error(ErrorKind::argument, "gold answer is empty");
  if (!parsed.found) return 0;
  return normalize_answer(parsed.raw_span) == normalize_answer(gold) ? 1 : 0;
}

inline int verify_completion(std::string_view completion, std::string_view gold) {
  return verify_answer(extract_boxed(completion), gold);
}

// ---------------------------------------------------------------------------
// Judge scores

enum class JudgeScheme { ten_point, proofgrader, uq_binary, genrm };

inline std::string_view to_string(JudgeScheme s) {
  switch (s) {
    case JudgeScheme::ten_point: return "ten_point";
    case JudgeScheme::proofgrader: return "proofgrader";
    case JudgeScheme::uq_binary: return "uq_binary";
    case JudgeScheme::genrm: return "genrm";
  }
  return "ten_point";
}

inline JudgeScheme parse_judge_scheme(std::string_view s) {
  if (s == "ten_point") return JudgeScheme::ten_point;
  if (s == "proofgrader") return JudgeScheme::proofgrader;
  if (s == "uq_binary") return JudgeScheme::uq_binary;
  if (s == "genrm") return JudgeScheme::genrm;
  throw Error(ErrorKind::config, "unknown judge scheme '" + std::string(s) + "'");
}

struct ScoreScale {
  double lower;
  double upper;
};

/// Score bounds per scheme; the genrm adapter is unbounded.
inline std::optional<ScoreScale> scheme_scale(JudgeScheme s) {
  switch (s) {
    case JudgeScheme::ten_point: return ScoreScale{1, 10};
    case JudgeScheme::proofgrader: return ScoreScale{0, 7};
    case JudgeScheme::uq_binary: return ScoreScale{0, 1};
    case JudgeScheme::genrm: return std::nullopt;
  }
  return std::nullopt;
}

struct JudgeVerdict {
  JudgeScheme scheme;
  double value;
  std::optional<ScoreScale> scale;
};

namespace detail {

struct NumberMatch {
  std::size_t end;
  std::string text;
  bool integral;
};

// Reads [+-]?digits(.digits)? starting at pos.
inline std::optional<NumberMatch> read_number(std::string_view s, std::size_t pos) {
  std::size_t i = pos;
  std::string out;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) out.push_back(s[i++]);
  std::size_t start = i;
  while (i < s.size() && is_digit(s[i])) out.push_back(s[i++]);
  if (i == start) return std::nullopt;
  bool integral = true;
  if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
    integral = false;
    out.push_back(s[i++]);
    while (i < s.size() && is_digit(s[i])) out.push_back(s[i++]);
  }
  return NumberMatch{i, out, integral};
}

inline std::size_t skip(std::string_view s, std::size_t i, std::string_view chars) {
  while (i < s.size() && chars.find(s[i]) != std::string_view::npos) ++i;
  return i;
}

// Last "Score: <number>", tolerating markdown emphasis around the label.
inline std::optional<NumberMatch> last_ten_point(std::string_view s) {
  std::optional<NumberMatch> last;
  std::size_t pos = 0;
  while ((pos = s.find("Score", pos)) != std::string_view::npos) {
    std::size_t i = skip(s, pos + 5, "* \t");
    pos += 5;
    if (i >= s.size() || s[i] != ':') continue;
    i = skip(s, i + 1, "* \t");
    if (auto n = read_number(s, i)) last = n;
  }
  return last;
}

inline std::optional<NumberMatch> last_score_tag(std::string_view s) {
  std::optional<NumberMatch> last;
  std::size_t pos = 0;
  while ((pos = s.find("<score>", pos)) != std::string_view::npos) {
    pos += 7;
    std::size_t i = skip(s, pos, " \t\r\n");
    auto n = read_number(s, i);
    if (!n) continue;
    std::size_t j = skip(s, n->end, " \t\r\n");
    if (s.compare(j, 8, "</score>") == 0) last = n;
  }
  return last;
}

inline std::optional<char> last_accepted(std::string_view s) {
  std::optional<char> last;
  std::size_t pos = 0;
  while ((pos = s.find("Accepted:", pos)) != std::string_view::npos) {
    pos += 9;
    std::size_t i = skip(s, pos, " \t*");
    if (i + 5 <= s.size() && s.compare(i, 2, "[[") == 0 && s.compare(i + 3, 2, "]]") == 0 &&
        (s[i + 2] == 'Y' || s[i + 2] == 'N')) {
      last = s[i + 2];
    }
  }
  return last;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Last "score"/"reward" label followed by ':' or '=' and a number.
inline std::optional<NumberMatch> last_scalar(std::string_view s) {
  std::string low = lower(s);
  std::optional<NumberMatch> last;
  for (std::string_view label : {std::string_view("score"), std::string_view("reward")}) {
    std::size_t pos = 0;
    while ((pos = low.find(label, pos)) != std::string::npos) {
      std::size_t i = skip(s, pos + label.size(), "* \t");
      pos += label.size();
      if (i >= s.size() || (s[i] != ':' && s[i] != '=')) continue;
      i = skip(s, i + 1, "* \t");
      if (auto n = read_number(s, i); n && (!last || n->end > last->end)) last = n;
    }
  }
  return last;
}

}  // namespace detail

/// Parses a validator completion. Throws Error(parse) when no score pattern is
/// present and Error(range) when the last pattern is outside the scheme's scale.
inline JudgeVerdict parse_judge_score(std::string_view completion, JudgeScheme scheme) {
  auto scale = scheme_scale(scheme);
  auto check_integral = [&](const detail::NumberMatch& m) {
    if (!m.integral) throw Error(ErrorKind::range, "score '" + m.text + "' is not an integer");
    double v = std::stod(m.text);
    if (v < scale->lower || v > scale->upper) {
      throw Error(ErrorKind::range, "score " + m.text + " outside [" + std::to_string(int(scale->lower)) + ", " +
                                        std::to_string(int(scale->upper)) + "]");
    }
    return v;
  };

  switch (scheme) {
    case JudgeScheme::ten_point: {
      auto m = detail::last_ten_point(completion);
      if (!m) throw Error(ErrorKind::parse, "no 'Score: <n>' pattern");
      return {scheme, check_integral(*m), scale};
    }
    case JudgeScheme::proofgrader: {
      auto m = detail::last_score_tag(completion);
      if (!m) throw Error(ErrorKind::parse, "no <score>n</score> tag");
      return {scheme, check_integral(*m), scale};
    }
    case JudgeScheme::uq_binary: {
      auto c = detail::last_accepted(completion);
      if (!c) throw Error(ErrorKind::parse, "no 'Accepted: [[Y]]' / '[[N]]' pattern");
      return {scheme, *c == 'Y' ? 1.0 : 0.0, scale};
    }
    case JudgeScheme::genrm: {
      auto m = detail::last_scalar(completion);
      if (!m) throw Error(ErrorKind::parse, "no scalar score/reward pattern");
      return {scheme, std::stod(m->text), scale};
    }
  }
  throw Error(ErrorKind::parse, "unknown scheme");
}

// ---------------------------------------------------------------------------
// Error-taxonomy audit

inline constexpr int audit_documented_categories = 4;
inline constexpr int audit_max_category_id = 6;

struct AuditEvidence {
  std::string quote;
  std::string claim;
  std::string why_problematic;
  std::string what_needed;
  std::optional<bool> verbatim;  // set when the audited solution was supplied
};

struct AuditCategory {
  int id = 0;
  std::string name;
  std::vector<AuditEvidence> evidence;
  bool outside_taxonomy = false;  // ids 5-6 are accepted but undocumented
};

struct AuditResult {
  std::vector<AuditCategory> categories;
  std::size_t evidence_violations = 0;
};

namespace detail {

inline std::string_view strip_code_fence(std::string_view s) {
  s = trim(s);
  if (s.substr(0, 3) != "```") return s;
  auto first_nl = s.find('\n');
  auto last_fence = s.rfind("```");
  if (first_nl == std::string_view::npos || last_fence <= first_nl) return s;
  return trim(s.substr(first_nl + 1, last_fence - first_nl - 1));
}

inline std::string optional_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) throw Error(ErrorKind::parse, std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace detail

/// Parses the strict-JSON audit payload. When `solution` is given, each quote
/// is checked for being a verbatim substring; failures are flagged on the
/// evidence item and counted, never dropped.
inline AuditResult parse_error_audit(std::string_view completion,
                                     std::optional<std::string_view> solution = std::nullopt) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(detail::strip_code_fence(completion));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, std::string("audit payload is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("categories") || !doc["categories"].is_array()) {
    throw Error(ErrorKind::parse, "audit payload must be an object with a 'categories' array");
  }

  AuditResult result;
  for (const auto& cj : doc["categories"]) {
    if (!cj.is_object()) throw Error(ErrorKind::parse, "category entry must be an object");
    auto id_it = cj.find("id");
    if (id_it == cj.end() || !id_it->is_number_integer()) {
      throw Error(ErrorKind::parse, "category 'id' must be an integer");
    }
    AuditCategory cat;
    cat.id = id_it->get<int>();
    if (cat.id < 1 || cat.id > audit_max_category_id) {
      throw Error(ErrorKind::parse, "category id " + std::to_string(cat.id) + " outside 1-6");
    }
    cat.outside_taxonomy = cat.id > audit_documented_categories;
    cat.name = detail::optional_string(cj, "name");
    if (auto ev = cj.find("evidence"); ev != cj.end()) {
      if (!ev->is_array()) throw Error(ErrorKind::parse, "'evidence' must be an array");
      for (const auto& ej : *ev) {
        if (!ej.is_object()) throw Error(ErrorKind::parse, "evidence entry must be an object");
        AuditEvidence item;
        item.quote = detail::optional_string(ej, "quote");
        if (auto an = ej.find("analysis"); an != ej.end() && an->is_object()) {
          item.claim = detail::optional_string(*an, "claim");
          item.why_problematic = detail::optional_string(*an, "why_problematic");
          item.what_needed = detail::optional_string(*an, "what_needed");
        }
        if (solution) {
          item.verbatim = !item.quote.empty() && solution->find(item.quote) != std::string_view::npos;
          if (!*item.verbatim) ++result.evidence_violations;
        }
        cat.evidence.push_back(std::move(item));
      }
    }
    result.categories.push_back(std::move(cat));
  }
  return result;
}

}  // namespace cbu
