#pragma once

// Prompt templates with whitelisted double-brace placeholders. Everything in
// a template body that is not an exact `{{name}}` marker for a whitelisted
// name is emitted byte-for-byte, so LaTeX braces survive untouched.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cbu/builtin_templates.hpp"
#include "cbu/digest.hpp"
#include "cbu/error.hpp"

namespace cbu {

enum class TemplateId { cbu, judge_default, judge_proofgrader, judge_uq, variant_gen, error_audit, solve };

inline constexpr std::array<TemplateId, 7> all_template_ids = {
    TemplateId::cbu,        TemplateId::judge_default, TemplateId::judge_proofgrader, TemplateId::judge_uq,
    TemplateId::variant_gen, TemplateId::error_audit,  TemplateId::solve};

inline std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::cbu: return "cbu";
    case TemplateId::judge_default: return "judge_default";
    case TemplateId::judge_proofgrader: return "judge_proofgrader";
    case TemplateId::judge_uq: return "judge_uq";
    case TemplateId::variant_gen: return "variant_gen";
    case TemplateId::error_audit: return "error_audit";
    case TemplateId::solve: return "solve";
  }
  return "cbu";
}

inline TemplateId parse_template_id(std::string_view s) {
  for (auto id : all_template_ids) {
    if (to_string(id) == s) return id;
  }
  throw Error(ErrorKind::config, "unknown template id '" + std::string(s) + "'");
}

namespace placeholder {
inline constexpr std::string_view original_question = "original_question";
inline constexpr std::string_view candidate_solution = "candidate_solution";
inline constexpr std::string_view variant_question = "variant_question";
inline constexpr std::string_view question = "question";

inline constexpr std::array<std::string_view, 4> whitelist = {original_question, candidate_solution,
                                                               variant_question, question};
inline bool is_known(std::string_view name) {
  return std::find(whitelist.begin(), whitelist.end(), name) != whitelist.end();
}
}  // namespace placeholder

struct Template {
  TemplateId id;
  std::string body;
};

using Bindings = std::map<std::string, std::string, std::less<>>;

inline Template builtin_template(TemplateId id) {
  switch (id) {
    case TemplateId::cbu: return {id, std::string(builtin::cbu)};
    case TemplateId::judge_default: return {id, std::string(builtin::judge_default)};
    case TemplateId::judge_proofgrader: return {id, std::string(builtin::judge_proofgrader)};
    case TemplateId::judge_uq: return {id, std::string(builtin::judge_uq)};
    case TemplateId::variant_gen: return {id, std::string(builtin::variant_gen)};
    case TemplateId::error_audit: return {id, std::string(builtin::error_audit)};
    case TemplateId::solve: return {id, std::string(builtin::solve)};
  }
  throw Error(ErrorKind::config, "unknown template id");
}

namespace detail {

// One placeholder occurrence inside a body: [pos, pos+len) covers "{{name}}".
struct Marker {
  std::size_t pos;
  std::size_t len;
  std::string_view name;
};

inline std::vector<Marker> scan_markers(std::string_view body) {
  std::vector<Marker> out;
  std::size_t i = 0;
  while ((i = body.find("{{", i)) != std::string_view::npos) {
    bool matched = false;
    for (auto name : placeholder::whitelist) {
      if (body.compare(i + 2, name.size(), name) == 0 && body.compare(i + 2 + name.size(), 2, "}}") == 0) {
        out.push_back({i, name.size() + 4, name});
        i += name.size() + 4;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }
  return out;
}

}  // namespace detail

/// Placeholder names used by the template, in first-occurrence order.
inline std::vector<std::string> placeholders(const Template& t) {
  std::vector<std::string> names;
  for (const auto& m : detail::scan_markers(t.body)) {
    if (std::find(names.begin(), names.end(), m.name) == names.end()) names.emplace_back(m.name);
  }
  return names;
}

inline std::string render(const Template& t, const Bindings& bindings) {
  auto markers = detail::scan_markers(t.body);
  auto names = placeholders(t);
  for (const auto& [name, value] : bindings) {
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw Error(ErrorKind::render, "binding '" + name + "' is not a placeholder of template '" +
                                         std::string(to_string(t.id)) + "'");
    }
  }
  for (const auto& name : names) {
    auto it = bindings.find(name);
    if (it == bindings.end()) {
      throw Error(ErrorKind::render, "missing binding for placeholder '" + name + "'");
    }
    if (t.id == TemplateId::cbu && it->second.empty()) {
      throw Error(ErrorKind::render, "empty binding for placeholder '" + name + "'");
    }
  }

  std::string out;
  std::size_t cursor = 0;
  for (const auto& m : markers) {
    out.append(t.body, cursor, m.pos - cursor);
    out.append(bindings.find(m.name)->second);
    cursor = m.pos + m.len;
  }
  out.append(t.body, cursor, std::string::npos);
  return out;
}

inline std::string template_digest(const Template& t) {
  return Sha256().add_field(to_string(t.id)).add_field(t.body).hex();
}

/// Sentinel values used to produce golden renderings, e.g. "<<ORIGINAL_QUESTION>>".
inline Bindings sentinel_bindings(const Template& t) {
  Bindings b;
  for (const auto& name : placeholders(t)) {
    std::string upper = name;
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
    b[name] = "<<" + upper + ">>";
  }
  return b;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// True iff the sentinel rendering equals the stored golden file byte-for-byte.
inline bool golden_check(const Template& t, const std::filesystem::path& golden) {
  if (!std::filesystem::exists(golden)) {
    throw Error(ErrorKind::config, "golden file '" + golden.string() + "' not found");
  }
  return render(t, sentinel_bindings(t)) == read_file_bytes(golden);
}

inline Template load_template(TemplateId id, const std::filesystem::path& path) {
  return {id, read_file_bytes(path)};
}

}  // namespace cbu
