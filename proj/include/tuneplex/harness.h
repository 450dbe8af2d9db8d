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

/*!
 * \file tuneplex/harness.h
 * \brief Virtual-time scenarios over the whole tuning stack and their reports.
 *
 * Every scenario is a pure function of (parameters, seed, SystemConfig). All
 * durations are simulated; reports never contain wall-clock readings.
 */
#ifndef TUNEPLEX_HARNESS_H_
#define TUNEPLEX_HARNESS_H_

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tuneplex/client.h"
#include "tuneplex/devicesim.h"
#include "tuneplex/metrics.h"
#include "tuneplex/search.h"
#include "tuneplex/wire.h"

namespace tuneplex {

/*! \brief The frozen constants every scenario runs with. */
struct SystemConfig {
  GpuParams gpu;
  ClientCompute client_compute{500, 40000};
  double service_overhead_ms = 0;
  int repeats = 3;
  int batch_size = 64;
  int budget_per_operator = 1000;
  ExplorerParams explorer;
  CostModelParams cost_model;
  /*! \brief Launch offset of the second job in the multiplexed idle_breakdown run. */
  double multiplex_stagger_ms = 0;

  void Validate() const;
  /*! \brief Reads device.json, calibration.json and search.json from dir. */
  static SystemConfig Load(const std::string& dir);
  void Save(const std::string& dir) const;
  nlohmann::ordered_json ToJson() const;
};

/*! \brief Config directory of the source tree, or ./config when built elsewhere. */
std::string DefaultConfigDir();

struct RunnerSpec {
  std::string endpoint;
  std::string device_key = "v100";
  int percent = 100;
  RunnerMode mode = RunnerMode::kForkPerRequest;
};

struct JobSpec {
  std::string model;
  /*! \brief Empty means every operator of the model. */
  std::vector<int> operator_ids;
  std::string device_key = "v100";
  std::string client_name;
  Nanos start_at = 0;
  std::optional<int> budget;
  std::optional<int> early_stop;
};

struct SimulationResult {
  std::vector<JobResult> jobs;
  /*! \brief Per job, completion minus its own start. */
  std::vector<Nanos> job_durations;
  Nanos elapsed = 0;
  Metrics metrics;
  PartitionLedger gpu_ledger;
  TrackerCounters tracker;
};

/*!
 * \brief Raised when a module error aborts a simulation; carries the trace so far.
 */
class ScenarioAborted : public Error {
 public:
  ScenarioAborted(const std::string& message, Trace partial)
      : Error(ErrorCode::kAborted, message), partial_(std::move(partial)) {}
  const Trace& partial_trace() const { return partial_; }

 private:
  Trace partial_;
};

/*! \brief Runs the given runners and jobs on one simulated device until all jobs finish. */
SimulationResult Simulate(const SystemConfig& cfg, const std::vector<RunnerSpec>& runners,
                          const std::vector<JobSpec>& jobs, std::uint64_t seed);

enum class ScenarioKind {
  kMatrix,
  kTsiScaling,
  kTciSharding,
  kThroughputGrid,
  kConcurrentModels,
  kIdleBreakdown,
  kSharingModes,
  kLongLivedVsFork,
};

const char* ScenarioName(ScenarioKind k);
ScenarioKind ParseScenario(const std::string& name);
std::vector<std::string> ScenarioNames();

/*! \brief Unset fields take per-scenario defaults. */
struct ScenarioParams {
  ScenarioKind kind = ScenarioKind::kMatrix;
  std::vector<std::string> models;
  std::optional<int> runners;
  std::optional<int> clients;
  std::vector<int> percents;
  std::optional<int> budget;
  std::optional<RunnerMode> mode;
  /*! \brief longlived_vs_fork only: requests in the runner-level comparison. */
  std::optional<int> requests;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct ReportTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<nlohmann::ordered_json>> rows;

  bool operator==(const ReportTable&) const = default;
};

struct ScenarioReport {
  std::string scenario;
  std::uint64_t seed = 0;
  nlohmann::ordered_json params;
  nlohmann::ordered_json environment;
  /*! \brief Named scalar results (e.g. "resnet18-like/reduction_4"). */
  nlohmann::ordered_json values = nlohmann::ordered_json::object();
  /*! \brief Named Metrics objects, one per simulated run. */
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  std::vector<ReportTable> tables;

  const ReportTable& Table(const std::string& name) const;
  double Value(const std::string& key) const;

  nlohmann::ordered_json ToJson() const;
  static ScenarioReport FromJson(const nlohmann::ordered_json& j);
  bool operator==(const ScenarioReport&) const = default;
};

ScenarioReport RunScenario(const ScenarioParams& params, const SystemConfig& cfg);

/*!
 * \brief Writes the report into directory dir: "<scenario>.json" for json, one
 * "<scenario>_<table>.csv" per table for csv. Returns the written paths.
 */
std::vector<std::string> EmitReport(const ScenarioReport& r, const std::string& format,
                                    const std::string& dir);

std::string TableToCsv(const ReportTable& t);

}  // namespace tuneplex

#endif  // TUNEPLEX_HARNESS_H_
