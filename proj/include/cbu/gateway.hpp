#pragma once

// Uniform interface over text-generation backends. The Gateway owns one
// in-flight limiter per backend, consults an optional rollout cache, and runs
// batches on a worker pool while keeping results positionally aligned.

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cbu/digest.hpp"
#include "cbu/error.hpp"

namespace cbu {

inline constexpr int default_max_new_tokens = 16384;

struct Sampling {
  double temperature = 0.0;
  int max_new_tokens = default_max_new_tokens;
  std::optional<std::uint64_t> seed;
};

struct GenerationRequest {
  std::string backend_id;
  std::string template_id;
  std::string prompt;
  Sampling sampling;
  std::int64_t index = 0;
};

inline void check_request(const GenerationRequest& r) {
  if (r.prompt.empty()) throw Error(ErrorKind::argument, "prompt is empty");
  if (r.sampling.max_new_tokens < 1) throw Error(ErrorKind::argument, "max_new_tokens must be >= 1");
  if (r.sampling.temperature < 0) throw Error(ErrorKind::argument, "temperature must be >= 0");
  if (r.index < 0) throw Error(ErrorKind::argument, "rollout index must be >= 0");
}

namespace detail {
inline std::string format_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}
}  // namespace detail

inline std::string sampling_digest(const Sampling& s) {
  Sha256 h;
  h.add_field(detail::format_double(s.temperature)).add_field(std::to_string(s.max_new_tokens));
  h.add_field(s.seed ? std::to_string(*s.seed) : std::string("none"));
  return h.hex();
}

/// Digest over template id, rendered prompt and sampling parameters.
inline std::string prompt_hash(const GenerationRequest& r) {
  return Sha256().add_field(r.template_id).add_field(r.prompt).add_field(sampling_digest(r.sampling)).hex();
}

struct CacheKey {
  std::string backend_id;
  std::string prompt_hash;
  std::string sampling_digest;
  std::int64_t index = 0;

  auto operator<=>(const CacheKey&) const = default;
};

inline CacheKey cache_key(const GenerationRequest& r) {
  return {r.backend_id, prompt_hash(r), sampling_digest(r.sampling), r.index};
}

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string generate(const GenerationRequest& request) = 0;
};

// Cache hook implemented by the run store.
class RolloutCache {
 public:
  virtual ~RolloutCache() = default;
  virtual std::optional<std::string> lookup(const CacheKey& key, std::string_view prompt) = 0;
  virtual void store(const CacheKey& key, std::string_view prompt, std::string_view completion) = 0;
};

// ---------------------------------------------------------------------------
// Scripted mock

struct MockRule {
  std::function<bool(std::string_view)> matcher;
  double success_prob = 0.0;
  std::string correct_completion;
  std::string wrong_completion;
  bool catch_all = false;

  static MockRule contains(std::string needle, double p, std::string correct, std::string wrong) {
    return {[needle = std::move(needle)](std::string_view prompt) {
              return prompt.find(needle) != std::string_view::npos;
            },
            p, std::move(correct), std::move(wrong), false};
  }

  static MockRule any(double p, std::string correct, std::string wrong) {
    return {[](std::string_view) { return true; }, p, std::move(correct), std::move(wrong), true};
  }
};

struct MockScript {
  std::vector<MockRule> rules;
  std::uint64_t seed = 0;
};

inline void validate_mock_script(const MockScript& script) {
  if (script.rules.empty() || !script.rules.back().catch_all) {
    throw Error(ErrorKind::config, "mock script must end with a catch-all rule");
  }
  for (const auto& r : script.rules) {
    if (!(r.success_prob >= 0.0 && r.success_prob <= 1.0)) {
      throw Error(ErrorKind::config, "mock success_prob must lie in [0,1]");
    }
  }
}

/// Mock script from JSON:
///   {"seed": 7, "rules": [{"contains": "...", "success_prob": 0.85,
///     "correct": "...", "wrong": "..."}, ..., {"any": true, ...}]}
/// A rule may use "regex" instead of "contains".
inline MockScript mock_script_from_json(const nlohmann::json& j) {
  MockScript script;
  script.seed = j.value("seed", std::uint64_t{0});
  if (!j.contains("rules") || !j["rules"].is_array()) throw Error(ErrorKind::config, "mock script needs 'rules'");
  for (const auto& rj : j["rules"]) {
    double p = rj.value("success_prob", 0.0);
    std::string correct = rj.value("correct", std::string());
    std::string wrong = rj.value("wrong", std::string());
    if (rj.value("any", false)) {
      script.rules.push_back(MockRule::any(p, correct, wrong));
    } else if (rj.contains("contains")) {
      script.rules.push_back(MockRule::contains(rj["contains"].get<std::string>(), p, correct, wrong));
    } else if (rj.contains("regex")) {
      auto re = std::make_shared<std::regex>(rj["regex"].get<std::string>());
      script.rules.push_back({[re](std::string_view prompt) {
                                return std::regex_search(prompt.begin(), prompt.end(), *re);
                              },
                              p, correct, wrong, false});
    } else {
      throw Error(ErrorKind::config, "mock rule needs one of 'any', 'contains', 'regex'");
    }
  }
  validate_mock_script(script);
  return script;
}

/// Uniform draw in [0,1) that depends only on (seed, prompt hash, index).
inline double mock_uniform(std::uint64_t seed, std::string_view prompt_hash_hex, std::int64_t index) {
  std::uint64_t h = digest_prefix64(prompt_hash_hex);
  auto idx = static_cast<std::uint64_t>(index);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h),    static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(idx),  static_cast<std::uint32_t>(idx >> 32)};
  std::mt19937_64 rng(seq);
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockScript script) : script_(std::move(script)) { validate_mock_script(script_); }

  std::string generate(const GenerationRequest& request) override {
    check_request(request);
    for (const auto& rule : script_.rules) {
      if (!rule.matcher(request.prompt)) continue;
      double u = mock_uniform(script_.seed, prompt_hash(request), request.index);
      return u < rule.success_prob ? rule.correct_completion : rule.wrong_completion;
    }
    throw Error(ErrorKind::config, "no mock rule matched the prompt");
  }

 private:
  MockScript script_;
};

// ---------------------------------------------------------------------------
// Gateway

struct BatchResult {
  std::optional<std::string> completion;
  std::optional<ErrorKind> error_kind;
  std::string error_message;
  bool from_cache = false;

  bool ok() const { return completion.has_value(); }
};

class Gateway {
 public:
  void add_backend(const std::string& id, std::shared_ptr<Backend> backend, int max_in_flight) {
    if (max_in_flight < 1) throw Error(ErrorKind::config, "max_in_flight must be >= 1");
    auto slot = std::make_unique<Slot>();
    slot->backend = std::move(backend);
    slot->limit = max_in_flight;
    std::lock_guard lock(registry_mutex_);
    slots_[id] = std::move(slot);
  }

  void set_cache(std::shared_ptr<RolloutCache> cache) { cache_ = std::move(cache); }

  bool has_backend(const std::string& id) const {
    std::lock_guard lock(registry_mutex_);
    return slots_.count(id) > 0;
  }

  /// One completion; throws Error on failure.
  std::string generate(const GenerationRequest& request) {
    bool from_cache = false;
    return generate_impl(request, from_cache);
  }

  std::string generate_impl(const GenerationRequest& request, bool& from_cache) {
    check_request(request);
    Slot& slot = slot_for(request.backend_id);
    std::optional<CacheKey> key;
    if (cache_) {
      key = cache_key(request);
      if (auto hit = cache_->lookup(*key, request.prompt)) {
        cache_hits_.fetch_add(1);
        from_cache = true;
        return *hit;
      }
    }
    std::string completion;
    {
      InFlightGuard guard(slot);
      backend_calls_.fetch_add(1);
      completion = slot.backend->generate(request);
    }
    if (cache_) cache_->store(*key, request.prompt, completion);
    return completion;
  }

  /// Results are aligned with `requests`; per-item failures are reported in
  /// place without aborting the rest of the batch.
  std::vector<BatchResult> generate_batch(std::span<const GenerationRequest> requests) {
    std::vector<BatchResult> results(requests.size());
    if (requests.empty()) return results;

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < requests.size(); i = next.fetch_add(1)) {
        run_one(requests[i], results[i]);
      }
    };
    std::size_t workers = std::min(requests.size(), worker_budget());
    std::vector<std::jthread> pool;
    pool.reserve(workers > 0 ? workers - 1 : 0);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    return results;
  }

  std::int64_t backend_calls() const { return backend_calls_.load(); }
  std::int64_t cache_hits() const { return cache_hits_.load(); }
  std::int64_t failures() const { return failures_.load(); }

  /// First batch failure seen, if any.
  std::optional<std::pair<ErrorKind, std::string>> first_failure() const {
    std::lock_guard lock(failure_mutex_);
    return first_failure_;
  }

  /// Highest number of simultaneous in-flight calls seen on a backend.
  int peak_in_flight(const std::string& id) const {
    std::lock_guard lock(registry_mutex_);
    auto it = slots_.find(id);
    if (it == slots_.end()) return 0;
    std::lock_guard slot_lock(it->second->mutex);
    return it->second->peak;
  }

 private:
  struct Slot {
    std::shared_ptr<Backend> backend;
    int limit = 1;
    int in_flight = 0;
    int peak = 0;
    std::mutex mutex;
    std::condition_variable cv;
  };

  class InFlightGuard {
   public:
    explicit InFlightGuard(Slot& slot) : slot_(slot) {
      std::unique_lock lock(slot_.mutex);
      slot_.cv.wait(lock, [&] { return slot_.in_flight < slot_.limit; });
      ++slot_.in_flight;
      slot_.peak = std::max(slot_.peak, slot_.in_flight);
    }
    ~InFlightGuard() {
      {
        std::lock_guard lock(slot_.mutex);
        --slot_.in_flight;
      }
      slot_.cv.notify_one();
    }
    InFlightGuard(const InFlightGuard&) = delete;
    InFlightGuard& operator=(const InFlightGuard&) = delete;

   private:
    Slot& slot_;
  };

  Slot& slot_for(const std::string& id) {
    std::lock_guard lock(registry_mutex_);
    auto it = slots_.find(id);
    if (it == slots_.end()) throw Error(ErrorKind::config, "backend '" + id + "' is not configured");
    return *it->second;
  }

  std::size_t worker_budget() const {
    std::lock_guard lock(registry_mutex_);
    std::size_t total = 0;
    for (const auto& [_, slot] : slots_) total += static_cast<std::size_t>(slot->limit);
    return std::clamp<std::size_t>(total, 1, 256);
  }

  void run_one(const GenerationRequest& request, BatchResult& out) {
    try {
      out.completion = generate_impl(request, out.from_cache);
    } catch (const Error& e) {
      out.error_kind = e.kind();
      out.error_message = e.what();
    } catch (const std::exception& e) {
      out.error_kind = ErrorKind::backend;
      out.error_message = e.what();
    }
    if (out.error_kind) {
      failures_.fetch_add(1);
      std::lock_guard lock(failure_mutex_);
      if (!first_failure_) first_failure_.emplace(*out.error_kind, out.error_message);
    }
  }

  mutable std::mutex registry_mutex_;
  std::map<std::string, std::unique_ptr<Slot>> slots_;
  std::shared_ptr<RolloutCache> cache_;
  std::atomic<std::int64_t> backend_calls_{0};
  std::atomic<std::int64_t> cache_hits_{0};
  std::atomic<std::int64_t> failures_{0};
  mutable std::mutex failure_mutex_;
  std::optional<std::pair<ErrorKind, std::string>> first_failure_;
};

}  // namespace cbu
