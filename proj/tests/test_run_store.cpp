#include <fstream>

#include <gtest/gtest.h>

#include "cbu/run_store.hpp"

using namespace cbu;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::path(CBU_TEST_TMP) / "run_store" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::pipeline;
}

CacheKey key(std::int64_t index = 0) { return {"mock", "abc123", "s1", index}; }

Rollout rollout(const CacheKey& k, std::string completion, std::string prompt = "the prompt") {
  Rollout r;
  r.backend_id = k.backend_id;
  r.prompt_hash = k.prompt_hash;
  r.sampling_digest = k.sampling_digest;
  r.index = k.index;
  r.prompt = std::move(prompt);
  r.completion = std::move(completion);
  return r;
}

}  // namespace

TEST(Jsonl, ParsesAndSkipsBlankLines) {
  auto recs = parse_jsonl("{\"a\":1}\n\n{\"a\":2}\n", ErrorKind::data, "mem");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1].line, 3u);
  EXPECT_EQ(recs[1].offset, 9u);
}

TEST(Jsonl, CorruptLineNamesLineAndOffset) {
  try {
    parse_jsonl("{\"a\":1}\n{oops}\n", ErrorKind::data, "file.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
    std::string msg = e.what();
    EXPECT_NE(msg.find("file.jsonl:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 8"), std::string::npos) << msg;
  }
  EXPECT_EQ(kind_of([] { parse_jsonl("{\"a\":1}\n{\"a\":", ErrorKind::integrity, "x"); }), ErrorKind::integrity);
}

TEST(Jsonl, AtomicWriteAndRead) {
  auto dir = scratch("atomic");
  auto path = dir / "nested" / "data.jsonl";
  std::vector<Problem> ps = {{"p1", "g", "s", "1", {}, {}}, {"p2", "g", "t", "2", {}, {}}};
  write_jsonl(path, ps);
  auto back = load_problems(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].id, "p2");
  for (const auto& e : fs::directory_iterator(path.parent_path())) {
    EXPECT_EQ(e.path().filename(), "data.jsonl");
  }
  EXPECT_EQ(kind_of([&] { load_problems(dir / "missing.jsonl"); }), ErrorKind::io);
}

TEST(Cache, PutGetRoundTripAndReload) {
  auto dir = scratch("cache");
  auto path = dir / "rollouts.jsonl";
  {
    FileRolloutCache cache(path);
    cache.put_rollout(key(0), rollout(key(0), "A"));
    cache.put_rollout(key(1), rollout(key(1), "B"));
    EXPECT_EQ(cache.get_rollout(key(1))->completion, "B");
    EXPECT_FALSE(cache.get_rollout(key(2)));
  }
  FileRolloutCache reopened(path);
  EXPECT_EQ(reopened.size(), 2u);
  EXPECT_EQ(reopened.lookup(key(0), "the prompt"), "A");
}

TEST(Cache, PutIsIdempotent) {
  auto path = scratch("idem") / "c.jsonl";
  FileRolloutCache cache(path);
  cache.put_rollout(key(), rollout(key(), "A"));
  cache.put_rollout(key(), rollout(key(), "A"));
  EXPECT_EQ(cache.size(), 1u);
  EXPECT_EQ(read_jsonl(path).size(), 1u);
}

TEST(Cache, ConflictingCompletionIsIntegrityError) {
  FileRolloutCache cache(scratch("conflict") / "c.jsonl");
  cache.put_rollout(key(), rollout(key(), "A"));
  EXPECT_EQ(kind_of([&] { cache.put_rollout(key(), rollout(key(), "B")); }), ErrorKind::integrity);
}

TEST(Cache, PromptCollisionIsIntegrityError) {
  FileRolloutCache cache(scratch("collide") / "c.jsonl");
  cache.put_rollout(key(), rollout(key(), "A"));
  EXPECT_EQ(kind_of([&] { cache.lookup(key(), "another prompt"); }), ErrorKind::integrity);
}

TEST(Cache, CorruptFileReportsByteOffset) {
  auto path = scratch("corrupt") / "c.jsonl";
  std::string good = jsonl_line(to_json(rollout(key(), "A")));
  {
    std::ofstream out(path, std::ios::binary);
    out << good << "{not json}\n";
  }
  try {
    FileRolloutCache cache(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::integrity);
    EXPECT_NE(std::string(e.what()).find("byte offset " + std::to_string(good.size())), std::string::npos)
        << e.what();
  }
}

TEST(Cache, KeyMismatchIsRejected) {
  FileRolloutCache cache(scratch("mismatch") / "c.jsonl");
  EXPECT_EQ(kind_of([&] { cache.put_rollout(key(1), rollout(key(0), "A")); }), ErrorKind::argument);
}

TEST(Manifest, RefusesToOverwrite) {
  auto dir = scratch("manifest");
  RunManifest m;
  m.run_id = next_run_id(dir, "metrics");
  EXPECT_EQ(m.run_id, "metrics-1");
  m.created_at = utc_timestamp();
  m.subcommand = "metrics";
  m.rollouts = 16;
  m.templates.push_back({"cbu", "deadbeef", false});
  auto path = write_manifest(dir, m);
  EXPECT_TRUE(fs::exists(path));
  EXPECT_EQ(next_run_id(dir, "metrics"), "metrics-2");
  EXPECT_EQ(kind_of([&] { write_manifest(dir, m); }), ErrorKind::io);
  auto j = ordered_json::parse(read_text(path));
  EXPECT_EQ(j["T"], 16);
  EXPECT_EQ(j["templates"][0]["digest"], "deadbeef");
  EXPECT_EQ(m.created_at.size(), 20u);
}

namespace {

EvaluationReport sample_report() {
  MetricSet set;
  for (std::size_t i = 0; i < metric_names.size(); ++i) metric_at(set, i) = MetricValue<double>::of(0.25 * double(i));
  set.auc = MetricValue<double>::undefined("no wrong candidates");
  EvaluationReport r;
  r.settings = {{"tie_mode", "expected"}, {"T", "16"}};
  MethodReport m;
  m.method = "cbu";
  m.per_question = {{"p1", set}};
  m.aggregate = aggregate(m.per_question, {{"g", {"p1"}}});
  r.methods.push_back(m);
  return r;
}

}  // namespace

TEST(Report, UndefinedMetricIsNullWithReason) {
  auto j = to_json(sample_report());
  const auto& auc = j["methods"][0]["aggregate"]["auc"];
  EXPECT_TRUE(auc["value"].is_null());
  EXPECT_EQ(auc["reason"], "no wrong candidates");
  EXPECT_EQ(auc["questions_undefined"], 1);
  EXPECT_DOUBLE_EQ(j["methods"][0]["aggregate"]["recall_at_5"]["value"].get<double>(), 0.25);
  EXPECT_EQ(j["schema_version"], report_schema_version);
}

TEST(Report, ByteIdenticalAcrossRuns) {
  auto dir = scratch("report");
  export_report(sample_report(), dir / "a.json");
  export_report(sample_report(), dir / "b.json");
  EXPECT_EQ(read_text(dir / "a.json"), read_text(dir / "b.json"));
}

TEST(Report, EmptySkeleton) {
  auto j = to_json(EvaluationReport{});
  EXPECT_TRUE(j["methods"].empty());
  EXPECT_TRUE(j["sections"].is_object());
  EXPECT_TRUE(j["settings"].is_object());
}
