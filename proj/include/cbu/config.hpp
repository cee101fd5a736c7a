#pragma once

// Plain-text `key = value` configuration. Lines starting with '#' are
// comments. Backends are declared as `backend.<id>.<field>`.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cbu/error.hpp"
#include "cbu/gateway.hpp"
#include "cbu/http_backend.hpp"
#include "cbu/run_store.hpp"
#include "cbu/verdict.hpp"

namespace cbu {

class ConfigMap {
 public:
  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  bool has(std::string_view key) const { return values_.find(key) != values_.end(); }

  std::optional<std::string> get(std::string_view key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_or(std::string_view key, std::string fallback) const {
    auto v = get(key);
    return v ? *v : std::move(fallback);
  }

  template <class T>
  std::optional<T> get_number(std::string_view key) const {
    auto v = get(key);
    if (!v) return std::nullopt;
    T out{};
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size()) {
      throw Error(ErrorKind::config, "config key '" + std::string(key) + "' expects a number, got '" + *v + "'");
    }
    return out;
  }

  std::optional<bool> get_bool(std::string_view key) const {
    auto v = get(key);
    if (!v) return std::nullopt;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw Error(ErrorKind::config, "config key '" + std::string(key) + "' expects a boolean, got '" + *v + "'");
  }

  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

inline ConfigMap parse_config(std::string_view text, std::string_view origin = "config") {
  ConfigMap cfg;
  std::size_t pos = 0, line = 0;
  while (pos <= text.size()) {
    ++line;
    auto nl = text.find('\n', pos);
    std::string_view row = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    row = detail::trim(row);
    if (row.empty() || row.front() == '#') continue;
    auto eq = row.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::config, std::string(origin) + ":" + std::to_string(line) + ": expected key = value");
    }
    auto key = detail::trim(row.substr(0, eq));
    auto value = detail::trim(row.substr(eq + 1));
    if (key.empty()) throw Error(ErrorKind::config, std::string(origin) + ":" + std::to_string(line) + ": empty key");
    if (cfg.has(key)) {
      throw Error(ErrorKind::config, std::string(origin) + ":" + std::to_string(line) + ": duplicate key '" +
                                         std::string(key) + "'");
    }
    cfg.set(std::string(key), std::string(value));
  }
  return cfg;
}

inline ConfigMap load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::config, "config file '" + path.string() + "' not found");
  return parse_config(read_text(path), path.string());
}

struct BackendSpec {
  std::string id;
  std::string kind;  // "mock" or "http"
  BackendConfig http;
  std::filesystem::path mock_script;
  Sampling sampling;
  int max_in_flight = 8;
};

/// Collects every `backend.<id>.*` block. Temperature is required so that
/// no run silently inherits a sampling default.
inline std::map<std::string, BackendSpec> backend_specs(const ConfigMap& cfg,
                                                        const std::filesystem::path& base_dir = {}) {
  std::set<std::string> ids;
  for (const auto& [key, _] : cfg.values()) {
    if (key.rfind("backend.", 0) != 0) continue;
    auto dot = key.find('.', 8);
    if (dot == std::string::npos) throw Error(ErrorKind::config, "malformed backend key '" + key + "'");
    ids.insert(key.substr(8, dot - 8));
  }
  std::map<std::string, BackendSpec> out;
  for (const auto& id : ids) {
    auto k = [&](std::string_view field) { return "backend." + id + "." + std::string(field); };
    BackendSpec spec;
    spec.id = id;
    spec.kind = cfg.get_or(k("kind"), "");
    if (spec.kind != "mock" && spec.kind != "http") {
      throw Error(ErrorKind::config, "backend '" + id + "' needs kind = mock or http");
    }
    auto temp = cfg.get_number<double>(k("temperature"));
    if (!temp) throw Error(ErrorKind::config, "backend '" + id + "' needs an explicit temperature");
    spec.sampling.temperature = *temp;
    if (auto v = cfg.get_number<int>(k("max_new_tokens"))) spec.sampling.max_new_tokens = *v;
    if (auto v = cfg.get_number<int>(k("max_in_flight"))) spec.max_in_flight = *v;
    if (spec.max_in_flight < 1) throw Error(ErrorKind::config, "backend '" + id + "' max_in_flight must be >= 1");
    if (spec.kind == "http") {
      spec.http.endpoint = cfg.get_or(k("endpoint"), "");
      spec.http.model_name = cfg.get_or(k("model_name"), "");
      spec.http.max_in_flight = spec.max_in_flight;
      if (auto v = cfg.get_number<int>(k("retry.max_attempts"))) spec.http.retry.max_attempts = *v;
      if (auto v = cfg.get_number<int>(k("retry.backoff_base_ms"))) spec.http.retry.backoff_base_ms = *v;
      if (auto v = cfg.get_number<int>(k("timeout_ms"))) spec.http.timeout_ms = *v;
      validate(spec.http);
    } else {
      auto script = cfg.get(k("script"));
      if (!script) throw Error(ErrorKind::config, "mock backend '" + id + "' needs a script path");
      spec.mock_script = std::filesystem::path(*script);
      if (spec.mock_script.is_relative() && !base_dir.empty()) spec.mock_script = base_dir / spec.mock_script;
      if (!std::filesystem::exists(spec.mock_script)) {
        throw Error(ErrorKind::config, "mock script '" + spec.mock_script.string() + "' not found");
      }
    }
    out.emplace(id, std::move(spec));
  }
  return out;
}

inline std::shared_ptr<Backend> make_backend(const BackendSpec& spec) {
  if (spec.kind == "http") return std::make_shared<HttpBackend>(spec.http);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(spec.mock_script));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::config, "mock script '" + spec.mock_script.string() + "' is not JSON: " + e.what());
  }
  return std::make_shared<MockBackend>(mock_script_from_json(j));
}

}  // namespace cbu
