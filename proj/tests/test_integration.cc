/*
 * Licensed to the Apache Software Foundation (ASF) under one
 * or more contributor license agreements.  See the NOTICE file
 * distributed with this work for additional information
 * regarding copyright ownership.  The ASF licenses this file
 * to you under the Apache License, Version 2.0 (the
 * "License"); you may not use this file except in compliance
 * with the License.  You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing,
 * software distributed under the License is distributed on an
 * "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
 * KIND, either express or implied.  See the License for the
 * specific language governing permissions and limitations
 * under the License.
 */

// Cross-module runs: the command line tool, scenarios at reduced budgets,
// simulated versus socket tuning, and the calibration fixed point.
#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tuneplex/calibration.h"
#include "tuneplex/harness.h"
#include "tuneplex/live.h"

namespace tuneplex {
namespace {

using ojson = nlohmann::ordered_json;

struct CliResult {
  int status = -1;
  std::string out;
};

CliResult Cli(const std::string& args) {
  const std::string cmd = std::string(TUNEPLEX_CLI) + " --config " TUNEPLEX_SOURCE_DIR "/config " +
                          args + " 2>&1";
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string TempDir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() /
           ("tuneplex_it_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string Slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SystemConfig Frozen() { return SystemConfig::Load(TUNEPLEX_SOURCE_DIR "/config"); }

// ---------------------------------------------------------------------------
// Command line

TEST(Cli, ExportedSpecLoadsBackIdentically) {
  const std::string dir = TempDir("export");
  for (const auto& name : BuiltinModelNames()) {
    const CliResult r = Cli("export-model-spec " + name);
    ASSERT_EQ(r.status, 0) << r.out;
    const std::string path = dir + "/" + name + ".json";
    std::ofstream(path) << r.out;
    EXPECT_EQ(LoadModelSpec(path), LoadModelSpec(name));
  }
  std::filesystem::remove_all(dir);
}

TEST(Cli, RunWritesJsonAndCsv) {
  const std::string dir = TempDir("run");
  CliResult r = Cli("run sharing_modes --out " + dir);
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find(dir + "/sharing_modes.json"), std::string::npos);
  EXPECT_NE(r.out.find("isolated_bit_identical = true"), std::string::npos);
  const ScenarioReport rep = ScenarioReport::FromJson(ojson::parse(Slurp(dir + "/sharing_modes.json")));
  EXPECT_EQ(rep.Value("isolated_bit_identical"), 1.0);

  r = Cli("run sharing_modes --format csv --out " + dir);
  ASSERT_EQ(r.status, 0) << r.out;
  const std::string csv = Slurp(dir + "/sharing_modes_sharing_modes.csv");
  EXPECT_EQ(csv, TableToCsv(rep.Table("sharing_modes")));
  std::filesystem::remove_all(dir);
}

TEST(Cli, RejectsBadInput) {
  EXPECT_NE(Cli("run no_such_scenario").status, 0);
  EXPECT_NE(Cli("").status, 0);
  CliResult r = Cli("run tsi_scaling --percent 0 --out /tmp");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("invalid_argument"), std::string::npos) << r.out;
  r = Cli("run sharing_modes --format xml --out /tmp");
  EXPECT_EQ(r.status, 1);
  r = Cli("run tsi_scaling --model /nonexistent.json --out /tmp");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(Cli("run longlived_vs_fork --mode sometimes").status, 0);
}

TEST(Cli, ModelFromFileRunsLikeTheBuiltin) {
  const std::string dir = TempDir("file");
  const std::string path = dir + "/custom.json";
  std::ofstream(path) << Cli("export-model-spec resnet18-like").out;
  const CliResult a = Cli("run tsi_scaling --runners 2 --budget 64 --out " + dir + "/a --model " + path);
  const CliResult b =
      Cli("run tsi_scaling --runners 2 --budget 64 --out " + dir + "/b --model resnet18-like");
  ASSERT_EQ(a.status, 0) << a.out;
  ASSERT_EQ(b.status, 0) << b.out;
  const auto ra = ScenarioReport::FromJson(ojson::parse(Slurp(dir + "/a/tsi_scaling.json")));
  const auto rb = ScenarioReport::FromJson(ojson::parse(Slurp(dir + "/b/tsi_scaling.json")));
  EXPECT_EQ(ra.values, rb.values);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Scenarios at reduced budgets

TEST(Scenarios, ShardingBeatsSingleClientAndIsMonotone) {
  ScenarioParams p;
  p.kind = ScenarioKind::kTciSharding;
  p.models = {"mobilenet-like"};
  p.clients = 4;
  p.budget = 128;
  const ScenarioReport r = RunScenario(p, Frozen());
  const double r2 = r.Value("mobilenet-like/reduction_2");
  const double r4 = r.Value("mobilenet-like/reduction_4");
  EXPECT_GT(r2, 0.3);
  EXPECT_GT(r4, r2);
  EXPECT_LT(r4, 0.75 + 1e-9);
}

TEST(Scenarios, ThroughputGridGrowsWithRunners) {
  ScenarioParams p;
  p.kind = ScenarioKind::kThroughputGrid;
  p.runners = 4;
  p.budget = 64;
  const ScenarioReport r = RunScenario(p, Frozen());
  EXPECT_EQ(r.Value("ratio_1"), 1.0);
  EXPECT_GT(r.Value("ratio_2"), 1.5);
  EXPECT_GT(r.Value("ratio_4"), r.Value("ratio_2"));
}

TEST(Scenarios, ConcurrentModelsGainOverSequential) {
  ScenarioParams p;
  p.kind = ScenarioKind::kConcurrentModels;
  p.runners = 2;
  p.budget = 64;
  const ScenarioReport r = RunScenario(p, Frozen());
  EXPECT_GT(r.Value("gain_mean_2"), 1.0);
  EXPECT_GT(r.Value("gain_max_2"), 1.0);
  EXPECT_GT(r.Value("gain_mean_2"), r.Value("gain_mean_1"));
}

TEST(Scenarios, IdleBreakdownAccounting) {
  ScenarioParams p;
  p.kind = ScenarioKind::kIdleBreakdown;
  p.budget = 128;
  const ScenarioReport r = RunScenario(p, Frozen());
  for (const char* k : {"baseline/server_idle", "baseline/gpu_idle", "multiplexed/server_idle",
                        "multiplexed/gpu_idle"}) {
    EXPECT_GT(r.Value(k), 0.0) << k;
    EXPECT_LT(r.Value(k), 1.0) << k;
  }
  // A second job fills gaps on the shared runner.
  EXPECT_LT(r.Value("multiplexed/server_idle"), r.Value("baseline/server_idle"));
  EXPECT_GT(r.Value("multiplexed/inflation"), 0.0);
  EXPECT_GT(r.Value("baseline/context_share"), 0.5);
}

TEST(Scenarios, ReportsAreSeedDeterministicAndSeedSensitive) {
  ScenarioParams p;
  p.kind = ScenarioKind::kTsiScaling;
  p.models = {"mobilenet-like"};
  p.runners = 2;
  p.budget = 64;
  p.seed = 1;
  const SystemConfig c = Frozen();
  const std::string a = RunScenario(p, c).ToJson().dump();
  EXPECT_EQ(RunScenario(p, c).ToJson().dump(), a);
  p.seed = 2;
  EXPECT_NE(RunScenario(p, c).ToJson().dump(), a);
}

// ---------------------------------------------------------------------------
// Simulated and socket deployments agree on what they measure.

TEST(Deployments, LiveAndSimulatedTuningAgree) {
  const ModelSpec model = LoadModelSpec("resnet18-like");
  const int op_id = model.operators.front().id;
  const int budget = static_cast<int>(BuildSearchSpace(model.operators.front()).size());

  JobSpec js;
  js.model = "resnet18-like";
  js.operator_ids = {op_id};
  js.budget = budget;
  const auto sim = Simulate(Frozen(), {RunnerSpec{"tsi0", "v100", 50, RunnerMode::kLongLived}},
                            {js}, 0);

  LiveClusterOptions o;
  o.time_scale = 0;
  RunnerConfig rc;
  rc.partition_percent = 50;
  rc.mode = RunnerMode::kLongLived;
  o.runners = {rc};
  LiveCluster cluster(o);
  cluster.Start();
  TuningJob job;
  job.model = model;
  job.operator_ids = {op_id};
  job.budget_per_operator = budget;
  const LiveTuneResult live = LiveTune(cluster.tracker_endpoint(), job);

  ASSERT_EQ(live.log.size(), sim.jobs[0].log.size());
  std::map<Configuration, double> sim_ms;
  for (const auto& e : sim.jobs[0].log.entries()) sim_ms[e.configuration] = e.mean_ms;
  for (const auto& e : live.log.entries()) {
    ASSERT_TRUE(sim_ms.count(e.configuration));
    EXPECT_EQ(sim_ms.at(e.configuration), e.mean_ms);
  }
  const auto sim_best = std::min_element(
      sim_ms.begin(), sim_ms.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  EXPECT_EQ(live.best.at(op_id).mean_ms, sim_best->second);
}

// ---------------------------------------------------------------------------
// Calibration

// Re-solving from the frozen constants must land on the same constants.
TEST(Calibration, FrozenConstantsAreAFixedPoint) {
  const SystemConfig frozen = Frozen();
  CalibrationTargets t = CalibrationTargets::Load(TUNEPLEX_SOURCE_DIR "/config/targets.json");
  const double s = frozen.multiplex_stagger_ms;
  t.stagger_candidates_ms = {s - 5000, s, s + 5000};
  const CalibrationResult r = Calibrate(t, frozen);
  EXPECT_TRUE(r.ok()) << ojson(r.failures).dump();
  EXPECT_EQ(r.config.client_compute.strategy_ms_per_batch,
            frozen.client_compute.strategy_ms_per_batch);
  EXPECT_EQ(r.config.service_overhead_ms, frozen.service_overhead_ms);
  EXPECT_EQ(r.config.multiplex_stagger_ms, frozen.multiplex_stagger_ms);
  EXPECT_NEAR(r.achieved["seconds_per_config"].get<double>(), t.nominal_seconds_per_config, 1e-5);
}

TEST(Calibration, TargetsValidation) {
  EXPECT_THROW(CalibrationTargets::FromJson({{"runner_busy_share", 1.5}}), Error);
  EXPECT_THROW(CalibrationTargets::FromJson({{"nominal_seconds_per_config", 0}}), Error);
  EXPECT_THROW(CalibrationTargets::FromJson({{"model", 3}}), Error);
  EXPECT_THROW(CalibrationTargets::Load("/nonexistent/targets.json"), Error);
  const CalibrationTargets d = CalibrationTargets::FromJson(nlohmann::json::object());
  EXPECT_EQ(d.stagger_candidates_ms.size(), 31u);
  const CalibrationTargets back = CalibrationTargets::FromJson(nlohmann::json::parse(d.ToJson().dump()));
  EXPECT_EQ(back.ToJson().dump(), d.ToJson().dump());
}

}  // namespace
}  // namespace tuneplex
