#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cli.hpp"

using namespace cbu;
namespace fs = std::filesystem;

namespace {

const fs::path source_dir = CBU_SOURCE_DIR;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::vector<const char*> argv = {"cbu"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Fresh workspace holding the demo dataset, mock script and a config.
fs::path workspace(const std::string& name, const std::string& extra_config = "") {
  fs::path dir = fs::path(CBU_TEST_TMP) / "cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir / "data");
  fs::copy(source_dir / "demo" / "data", dir / "data", fs::copy_options::recursive);
  fs::copy_file(source_dir / "demo" / "mock.json", dir / "mock.json");
  std::ofstream conf(dir / "run.conf");
  conf << "dataset = data\nout = out\nbackend = mock\nT = 4\nseed = 3\n"
       << "backend.mock.kind = mock\nbackend.mock.script = mock.json\nbackend.mock.temperature = 1.0\n"
       << "backend.mock.max_in_flight = 4\n"
       << extra_config;
  return dir;
}

std::string slurp(const fs::path& p) { return read_text(p); }

}  // namespace

TEST(Cli, HelpMatchesGolden) {
  auto r = invoke({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, slurp(source_dir / "tests" / "golden" / "help.txt"));
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  auto ws = workspace("usage");
  auto conf = (ws / "run.conf").string();
  EXPECT_EQ(invoke({"--config", conf, "--tie-mode", "random", "metrics"}).code, 2);
  EXPECT_EQ(invoke({"--config", conf, "--T", "0", "score-cbu"}).code, 2);
  EXPECT_EQ(invoke({"--config", (ws / "absent.conf").string(), "ingest"}).code, 2);
  EXPECT_EQ(invoke({"--config", conf, "--backend", "nope", "score-cbu"}).code, 2);
}

TEST(Cli, UnreachableBackendExitsThree) {
  auto ws = workspace("backend",
                      "backend.down.kind = http\nbackend.down.endpoint = http://127.0.0.1:1/v1/chat/completions\n"
                      "backend.down.model_name = m\nbackend.down.temperature = 0\nbackend.down.retry.max_attempts = 1\n"
                      "backend.down.retry.backoff_base_ms = 0\nbackend.down.timeout_ms = 1000\n");
  auto r = invoke({"--config", (ws / "run.conf").string(), "--backend", "down", "--T", "1", "score-cbu"});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, BadDataExitsFour) {
  auto ws = workspace("data");
  {
    std::ofstream bad(ws / "data" / "candidates.jsonl", std::ios::app);
    bad << "{broken\n";
  }
  auto r = invoke({"--config", (ws / "run.conf").string(), "ingest"});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_NE(r.err.find("byte offset"), std::string::npos);
}

TEST(Cli, ScoringIsDeterministicAndCached) {
  auto ws = workspace("determinism");
  auto conf = (ws / "run.conf").string();
  ASSERT_EQ(invoke({"--config", conf, "score-cbu"}).code, 0);
  auto first = slurp(ws / "out" / "scores.jsonl");

  // Warm rerun: same bytes, zero backend calls.
  ASSERT_EQ(invoke({"--config", conf, "score-cbu"}).code, 0);
  EXPECT_EQ(slurp(ws / "out" / "scores.jsonl"), first);
  auto manifest = ordered_json::parse(slurp(ws / "out" / "manifests" / "score-cbu-2.json"));
  EXPECT_EQ(manifest["counters"]["backend_calls"], 0);
  EXPECT_GT(manifest["counters"]["cache_hits"].get<int>(), 0);
  EXPECT_EQ(manifest["T"], 4);

  // Cold run in a second workspace reproduces the bytes.
  auto ws2 = workspace("determinism2");
  ASSERT_EQ(invoke({"--config", (ws2 / "run.conf").string(), "score-cbu"}).code, 0);
  EXPECT_EQ(slurp(ws2 / "out" / "scores.jsonl"), first);
}

TEST(Cli, PipelineProducesReportTables) {
  auto ws = workspace("pipeline");
  auto conf = (ws / "run.conf").string();
  ASSERT_EQ(invoke({"--config", conf, "ingest"}).code, 0);
  ASSERT_EQ(invoke({"--config", conf, "score-cbu"}).code, 0);
  ASSERT_EQ(invoke({"--config", conf, "score-judge"}).code, 0);
  auto m = invoke({"--config", conf, "metrics"});
  ASSERT_EQ(m.code, 0) << m.err;

  auto report = ordered_json::parse(slurp(ws / "out" / "report.json"));
  ASSERT_EQ(report["methods"].size(), 2u);
  for (const auto& method : report["methods"]) {
    EXPECT_EQ(method["aggregate"].size(), 5u);
    for (auto name : metric_names) EXPECT_TRUE(method["aggregate"].contains(std::string(name)));
  }

  auto b = invoke({"--config", conf, "--resamples", "20", "bootstrap"});
  ASSERT_EQ(b.code, 0) << b.err;
  auto boot = ordered_json::parse(slurp(ws / "out" / "bootstrap.json"));
  ASSERT_FALSE(boot["curves"].empty());
  for (const auto& curve : boot["curves"]) EXPECT_EQ(curve["points"].size(), 5u);

  auto r = invoke({"--config", conf, "report"});
  EXPECT_EQ(r.code, 0) << r.err;
  report = ordered_json::parse(slurp(ws / "out" / "report.json"));
  EXPECT_TRUE(report["sections"].contains("bootstrap"));
}

TEST(Cli, SettingsPrecedence) {
  auto ws = workspace("precedence", "tie_mode = pessimistic\n");
  cli::Flags f;
  f.config = (ws / "run.conf").string();
  f.rollouts = 9;
  auto s = cli::resolve(f);
  EXPECT_EQ(s.rollouts, 9);
  EXPECT_EQ(s.metric.tie_mode, TieMode::pessimistic);
  EXPECT_EQ(s.dataset, ws / "data");
  EXPECT_EQ(*s.seed, 3u);
  EXPECT_EQ(cli::parse_budgets("4,8,16"), (std::vector<int>{4, 8, 16}));
  EXPECT_THROW(cli::parse_budgets("8,x"), Error);
  f.budgets = std::vector<int>{8, 4};
  EXPECT_THROW(cli::resolve(f), Error);
}
