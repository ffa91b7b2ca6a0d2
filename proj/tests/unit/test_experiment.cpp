#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "fedbilevel/experiment.hpp"

using namespace fedbilevel;
using nlohmann::json;

namespace {

json base_config() {
  return json::parse(R"({
    "seed": 4,
    "problem": {"kind": "overparam-ls", "n": 12, "m": 5, "clients": 3},
    "method": {"name": "fedavg"},
    "schedule": {"rule": "fedavg-sc", "R": 10, "K": 2, "enforce_caps": false},
    "output": {"name": "t"}
  })");
}

std::vector<RunArtifact> run(const json& j, std::optional<std::size_t> workers = std::nullopt) {
  return run_experiment(parse_config(j.dump()), RunOptions{workers});
}

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::string config_error_field(const json& j) {
  try {
    run(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

}  // namespace

TEST(Experiment, OneRowPerRound) {
  const auto runs = run(base_config());
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_EQ(line_count(runs[0].csv), 11u);
  EXPECT_EQ(runs[0].csv.rfind(metrics_csv_header(), 0), 0u);
  const json m = json::parse(runs[0].manifest);
  EXPECT_EQ(m["rows"], 10);
  EXPECT_TRUE(m.contains("config_hash"));
}

TEST(Experiment, RerunIsByteIdentical) {
  json j = base_config();
  j["method"]["stochastic"] = true;
  const auto a = run(j);
  const auto b = run(j);
  EXPECT_EQ(a[0].csv, b[0].csv);
  EXPECT_EQ(a[0].manifest, b[0].manifest);
}

TEST(Experiment, WorkerCountDoesNotChangeOutput) {
  json j = base_config();
  j["method"] = {{"name", "scaffold"}, {"stochastic", true}};
  j["schedule"]["rule"] = "scaffold-sc";
  EXPECT_EQ(run(j, 1)[0].csv, run(j, 4)[0].csv);
}

TEST(Experiment, EtaSweepProducesFourRuns) {
  json j = base_config();
  j["sweep"] = {{"eta", {1e-4, 1e-2, 1.0, "rule"}}};
  const auto runs = run(j);
  ASSERT_EQ(runs.size(), 4u);
  EXPECT_EQ(runs[0].name, "t_eta-1e-04");
  EXPECT_EQ(runs[3].name, "t_eta-rule");
  std::set<std::string> hashes;
  for (const auto& r : runs) hashes.insert(json::parse(r.manifest)["config_hash"].get<std::string>());
  EXPECT_EQ(hashes.size(), 4u);

  const auto dir = std::filesystem::temp_directory_path() / "fedbilevel_sweep";
  std::filesystem::remove_all(dir);
  j["output"]["dir"] = dir.string();
  const auto cfg = parse_config(j.dump());
  const auto paths = write_artifacts(cfg, run_experiment(cfg));
  EXPECT_EQ(paths.size(), 8u);
  for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p)) << p;
  std::filesystem::remove_all(dir);
}

TEST(Experiment, SchemaErrorsNameTheField) {
  json j = base_config();
  j["schedule"]["R"] = 0;
  EXPECT_EQ(config_error_field(j), "schedule.R");

  j = base_config();
  j["schedule"]["R"] = "ten";
  EXPECT_EQ(config_error_field(j), "schedule.R");

  j = base_config();
  j["method"]["bogus"] = 1;
  EXPECT_EQ(config_error_field(j), "method.bogus");

  j = base_config();
  j["problem"]["m"] = 20;
  EXPECT_EQ(config_error_field(j), "problem.m");

  j = base_config();
  j["problem"]["outer"] = {{"kind", "moreau-lsp"}, {"mu", 0.5}, {"epsilon", 0.1}};
  EXPECT_EQ(config_error_field(j), "problem.outer.mu");

  EXPECT_THROW(parse_config("{not json"), ConfigError);
}

TEST(Experiment, StronglyConvexRuleWithoutMuFNamesRule) {
  json j = base_config();
  j["problem"]["outer"] = {{"kind", "zero"}};
  try {
    run(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "schedule.rule");
    EXPECT_NE(std::string(e.what()).find("fedavg-sc"), std::string::npos) << e.what();
  }
}

TEST(Experiment, LargeEtaReportsCaseIIIInapplicable) {
  const json j = json::parse(R"({
    "seed": 1,
    "problem": {"kind": "weak-sharp-l2"},
    "method": {"name": "fedavg"},
    "schedule": {"rule": "manual", "R": 5, "eta": 100, "gamma_local": 0.001,
                 "enforce_caps": false},
    "bounds": {"M": 1}
  })");
  const json m = json::parse(run(j)[0].manifest);
  ASSERT_TRUE(m["bounds"].is_object());
  EXPECT_FALSE(m["bounds"]["case_iii_applicable"].get<bool>());
  bool noted = false;
  for (const auto& n : m["bounds"]["notes"])
    noted |= n.get<std::string>().find("Case iii inapplicable") != std::string::npos;
  EXPECT_TRUE(noted);
  EXPECT_NE(validate_experiment(parse_config(j.dump())).find("Case iii inapplicable"),
            std::string::npos);
}

TEST(Experiment, ClampIsReported) {
  json j = base_config();
  j["schedule"]["enforce_caps"] = true;
  const json m = json::parse(run(j)[0].manifest);
  EXPECT_TRUE(m["clamps"]["clamped"].get<bool>());
  EXPECT_FALSE(m["clamps"]["caps"].empty());
}

TEST(Experiment, HashTracksParameters) {
  const json a = json::parse(run(base_config())[0].manifest);
  json j = base_config();
  j["output"]["name"] = "other";
  EXPECT_EQ(json::parse(run(j)[0].manifest)["config_hash"], a["config_hash"]);
  j["schedule"]["K"] = 3;
  EXPECT_NE(json::parse(run(j)[0].manifest)["config_hash"], a["config_hash"]);
}

TEST(Experiment, DefaultsAreMadeExplicit) {
  const json c = json::parse(parse_config(base_config().dump()).canonical);
  EXPECT_EQ(c["method"]["control_variate"], "ii");
  EXPECT_EQ(c["schedule"]["p"], 2.0);
  EXPECT_EQ(c["metrics"]["wallclock"], false);
}

TEST(Experiment, DivergenceIsSignalled) {
  json j = base_config();
  j["schedule"] = {{"rule", "manual"}, {"R", 200}, {"eta", 1.0}, {"gamma_local", 50.0},
                   {"enforce_caps", false}};
  EXPECT_THROW(run(j), DivergenceError);
}

TEST(Experiment, TwoLoopCsv) {
  const json j = json::parse(R"({
    "problem": {"kind": "overparam-ls", "n": 8, "m": 3, "clients": 2,
                "outer": {"kind": "moreau-lsp"}},
    "method": {"name": "two-loop"},
    "schedule": {"K": 2},
    "two_loop": {"T": 6}
  })");
  const auto runs = run(j);
  EXPECT_EQ(runs[0].csv.rfind(two_loop_csv_header(), 0), 0u);
  EXPECT_EQ(line_count(runs[0].csv), 7u);
  EXPECT_EQ(json::parse(runs[0].manifest)["total_inner_rounds"], 21);
}

TEST(Experiment, TwoLoopRejectsRoundCount) {
  json j = json::parse(R"({
    "problem": {"kind": "overparam-ls", "n": 8, "m": 3},
    "method": {"name": "two-loop"},
    "schedule": {"R": 5},
    "two_loop": {"T": 6}
  })");
  EXPECT_EQ(config_error_field(j), "schedule.R");
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}
