#pragma once

// On-disk run artifacts: JSONL datasets, the content-addressed rollout cache,
// run manifests and evaluation reports.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cbu/error.hpp"
#include "cbu/gateway.hpp"
#include "cbu/metrics.hpp"
#include "cbu/model.hpp"

namespace cbu {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSONL

struct JsonlRecord {
  ordered_json value;
  std::size_t line = 0;
  std::size_t offset = 0;  // byte offset of the line start
};

/// Parses every non-blank line. A malformed line raises `kind` naming its
/// line number and byte offset.
inline std::vector<JsonlRecord> parse_jsonl(std::string_view text, ErrorKind kind, std::string_view origin) {
  std::vector<JsonlRecord> out;
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    ++line;
    auto nl = text.find('\n', pos);
    bool terminated = nl != std::string_view::npos;
    std::string_view row = text.substr(pos, terminated ? nl - pos : std::string_view::npos);
    std::size_t start = pos;
    pos = terminated ? nl + 1 : text.size();
    if (row.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto where = [&] {
      return std::string(origin) + ":" + std::to_string(line) + " (byte offset " + std::to_string(start) + ")";
    };
    if (!terminated) throw Error(kind, "truncated record at " + where());
    try {
      out.push_back({ordered_json::parse(row), line, start});
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(kind, "corrupt record at " + where() + ": " + e.what());
    }
  }
  return out;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<JsonlRecord> read_jsonl(const fs::path& path, ErrorKind kind = ErrorKind::data) {
  return parse_jsonl(read_text(path), kind, path.string());
}

/// Writes to a sibling temp file and renames it into place.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::io, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::io, "cannot rename into '" + path.string() + "': " + ec.message());
}

inline std::string jsonl_line(const ordered_json& j) { return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict) + "\n"; }

template <class T>
void write_jsonl(const fs::path& path, const std::vector<T>& items) {
  std::string text;
  for (const auto& item : items) text += jsonl_line(to_json(item));
  write_file_atomic(path, text);
}

/// Append-only writer; one instance owns the file and serializes appends.
class JsonlAppender {
 public:
  explicit JsonlAppender(const fs::path& path) : path_(path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for append");
  }

  void append(const ordered_json& j) {
    std::string line = jsonl_line(j);
    std::lock_guard lock(mutex_);
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw Error(ErrorKind::io, "append failed for '" + path_.string() + "'");
  }

 private:
  fs::path path_;
  std::ofstream out_;
  std::mutex mutex_;
};

template <class T, class Decode>
std::vector<T> load_jsonl(const fs::path& path, Decode decode) {
  std::vector<T> out;
  for (const auto& rec : read_jsonl(path)) {
    try {
      out.push_back(decode(rec.value));
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(rec.line) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Problem> load_problems(const fs::path& p) { return load_jsonl<Problem>(p, problem_from_json); }
inline std::vector<Candidate> load_candidates(const fs::path& p) {
  return load_jsonl<Candidate>(p, candidate_from_json);
}
inline std::vector<ScoreRecord> load_scores(const fs::path& p) { return load_jsonl<ScoreRecord>(p, score_from_json); }
inline std::vector<Rollout> load_rollouts(const fs::path& p) { return load_jsonl<Rollout>(p, rollout_from_json); }

// ---------------------------------------------------------------------------
// Rollout cache

/// Content-addressed cache backed by an append-only JSONL file. Each record
/// keeps the full prompt so digest collisions are detected on read.
class FileRolloutCache final : public RolloutCache {
 public:
  explicit FileRolloutCache(const fs::path& path) : path_(path) {
    if (fs::exists(path)) {
      for (const auto& rec : read_jsonl(path, ErrorKind::integrity)) {
        Rollout r;
        try {
          r = rollout_from_json(rec.value);
        } catch (const Error& e) {
          throw Error(ErrorKind::integrity, "corrupt cache record at byte offset " + std::to_string(rec.offset) +
                                                " of '" + path.string() + "': " + e.what());
        }
        if (!r.prompt) {
          throw Error(ErrorKind::integrity,
                      "cache record at byte offset " + std::to_string(rec.offset) + " lacks the prompt");
        }
        insert(r);
      }
    }
    appender_.emplace(path);
  }

  /// Idempotent; a different completion under an existing key is an error.
  void put_rollout(const CacheKey& key, const Rollout& rollout) {
    if (!rollout.prompt) throw Error(ErrorKind::argument, "cached rollout needs its prompt");
    check_key(key, rollout);
    std::lock_guard lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      verify_same(it->second, rollout);
      return;
    }
    appender_->append(to_json(rollout));
    entries_.emplace(key, rollout);
  }

  std::optional<Rollout> get_rollout(const CacheKey& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::string> lookup(const CacheKey& key, std::string_view prompt) override {
    auto r = get_rollout(key);
    if (!r) return std::nullopt;
    if (*r->prompt != prompt) {
      throw Error(ErrorKind::integrity, "prompt hash collision for " + key.prompt_hash);
    }
    return r->completion;
  }

  void store(const CacheKey& key, std::string_view prompt, std::string_view completion) override {
    Rollout r;
    r.backend_id = key.backend_id;
    r.prompt_hash = key.prompt_hash;
    r.sampling_digest = key.sampling_digest;
    r.index = key.index;
    r.prompt = std::string(prompt);
    r.completion = std::string(completion);
    put_rollout(key, r);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  static CacheKey key_of(const Rollout& r) { return {r.backend_id, r.prompt_hash, r.sampling_digest, r.index}; }

  static void check_key(const CacheKey& key, const Rollout& r) {
    if (key.backend_id.empty() || key.prompt_hash.empty() || key.sampling_digest.empty()) {
      throw Error(ErrorKind::argument, "cache key fields must be non-empty");
    }
    if (key_of(r) != key) throw Error(ErrorKind::argument, "rollout does not match its cache key");
  }

  static void verify_same(const Rollout& have, const Rollout& put) {
    if (have.completion != put.completion) {
      throw Error(ErrorKind::integrity, "conflicting completion for cached key " + have.prompt_hash + "#" +
                                            std::to_string(have.index));
    }
    if (*have.prompt != *put.prompt) throw Error(ErrorKind::integrity, "prompt hash collision for " + have.prompt_hash);
  }

  void insert(const Rollout& r) {
    auto [it, inserted] = entries_.emplace(key_of(r), r);
    if (!inserted) verify_same(it->second, r);
  }

  fs::path path_;
  mutable std::mutex mutex_;
  std::map<CacheKey, Rollout> entries_;
  std::optional<JsonlAppender> appender_;
};

// ---------------------------------------------------------------------------
// Manifests

struct TemplateRecord {
  std::string id;
  std::string digest;
  bool modified = false;  // differs from the built-in text
};

struct BackendRecord {
  std::string id;
  std::string kind;  // "mock" or "http"
  std::string endpoint;
  std::string model_name;
  double temperature = 0.0;
  int max_new_tokens = 0;
  int max_in_flight = 0;
};

struct RunManifest {
  std::string run_id;
  std::string created_at;  // UTC, ISO 8601
  std::string subcommand;
  std::vector<BackendRecord> backends;
  std::vector<TemplateRecord> templates;
  std::optional<int> rollouts;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> flags;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, std::int64_t> counters;  // gateway instrumentation
};

inline ordered_json to_json(const RunManifest& m) {
  ordered_json j;
  j["run_id"] = m.run_id;
  j["created_at"] = m.created_at;
  j["subcommand"] = m.subcommand;
  j["backends"] = ordered_json::array();
  for (const auto& b : m.backends) {
    j["backends"].push_back({{"id", b.id},
                             {"kind", b.kind},
                             {"endpoint", b.endpoint},
                             {"model_name", b.model_name},
                             {"temperature", b.temperature},
                             {"max_new_tokens", b.max_new_tokens},
                             {"max_in_flight", b.max_in_flight}});
  }
  j["templates"] = ordered_json::array();
  for (const auto& t : m.templates) {
    j["templates"].push_back({{"id", t.id}, {"digest", t.digest}, {"modified", t.modified}});
  }
  j["T"] = m.rollouts ? ordered_json(*m.rollouts) : ordered_json(nullptr);
  j["seeds"] = ordered_json::object();
  for (const auto& [k, v] : m.seeds) j["seeds"][k] = v;
  j["flags"] = ordered_json::object();
  for (const auto& [k, v] : m.flags) j["flags"][k] = v;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["counters"] = ordered_json::object();
  for (const auto& [k, v] : m.counters) j["counters"][k] = v;
  return j;
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Writes `<dir>/<run_id>.json`. Manifests are immutable: an existing file
/// is never replaced.
inline fs::path write_manifest(const fs::path& dir, const RunManifest& m) {
  if (m.run_id.empty()) throw Error(ErrorKind::argument, "manifest needs a run id");
  fs::create_directories(dir);
  fs::path path = dir / (m.run_id + ".json");
  std::FILE* f = std::fopen(path.c_str(), "wx");
  if (!f) {
    if (fs::exists(path)) throw Error(ErrorKind::io, "manifest '" + path.string() + "' already exists");
    throw Error(ErrorKind::io, "cannot create manifest '" + path.string() + "'");
  }
  std::string text = to_json(m).dump(2) + "\n";
  bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
  ok = std::fclose(f) == 0 && ok;
  if (!ok) throw Error(ErrorKind::io, "write failed for manifest '" + path.string() + "'");
  return path;
}

/// Picks `<prefix>-<n>` with the smallest n not yet used in `dir`.
inline std::string next_run_id(const fs::path& dir, const std::string& prefix) {
  for (int n = 1;; ++n) {
    std::string id = prefix + "-" + std::to_string(n);
    if (!fs::exists(dir / (id + ".json"))) return id;
  }
}

// ---------------------------------------------------------------------------
// Evaluation reports

struct MethodReport {
  std::string method;
  AggregateMetrics aggregate;
  std::map<std::string, MetricSet> per_question;
};

struct EvaluationReport {
  std::map<std::string, std::string> settings;
  std::vector<MethodReport> methods;
  ordered_json sections = ordered_json::object();  // additional named tables
};

inline constexpr int report_schema_version = 1;

inline ordered_json metric_json(const MetricValue<double>& v) {
  if (v.defined()) return {{"value", *v.value}};
  return {{"value", nullptr}, {"reason", v.reason}};
}

inline ordered_json to_json(const EvaluationReport& r) {
  ordered_json j;
  j["schema_version"] = report_schema_version;
  j["settings"] = ordered_json::object();
  for (const auto& [k, v] : r.settings) j["settings"][k] = v;
  j["methods"] = ordered_json::array();
  for (const auto& m : r.methods) {
    ordered_json mj;
    mj["method"] = m.method;
    ordered_json agg = ordered_json::object();
    for (std::size_t i = 0; i < metric_names.size(); ++i) {
      ordered_json e = metric_json(metric_at(m.aggregate.values, i));
      const auto& c = m.aggregate.counts[i];
      e["questions_used"] = c.questions_used;
      e["questions_undefined"] = c.questions_undefined;
      e["groups_used"] = c.groups_used;
      agg[std::string(metric_names[i])] = std::move(e);
    }
    mj["aggregate"] = std::move(agg);
    ordered_json per = ordered_json::object();
    for (const auto& [qid, set] : m.per_question) {
      ordered_json q = ordered_json::object();
      for (std::size_t i = 0; i < metric_names.size(); ++i) q[std::string(metric_names[i])] = metric_json(metric_at(set, i));
      per[qid] = std::move(q);
    }
    mj["questions"] = std::move(per);
    j["methods"].push_back(std::move(mj));
  }
  j["sections"] = r.sections.is_null() ? ordered_json::object() : r.sections;
  return j;
}

inline std::string report_text(const EvaluationReport& r) { return to_json(r).dump(2) + "\n"; }

inline void export_report(const EvaluationReport& r, const fs::path& path) { write_file_atomic(path, report_text(r)); }

}  // namespace cbu
