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
 * \file tuneplex/client.h
 * \brief Tuning client: per-operator search loop, sharding, logs and inference evaluation.
 *
 * Each batch runs propose, build, dispatch and strategy back to back. During
 * dispatch the client keeps at most one request in flight per runner registered
 * under its device key; requests beyond that wait for a result to come back.
 */
#ifndef TUNEPLEX_CLIENT_H_
#define TUNEPLEX_CLIENT_H_

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tuneplex/devicesim.h"
#include "tuneplex/event_loop.h"
#include "tuneplex/metrics.h"
#include "tuneplex/runner.h"
#include "tuneplex/search.h"
#include "tuneplex/tracker.h"
#include "tuneplex/workload.h"

namespace tuneplex {

struct ClientCompute {
  double build_ms_per_config = 0;
  double strategy_ms_per_batch = 0;
};

struct TuningJob {
  ModelSpec model;
  std::vector<int> operator_ids;
  int budget_per_operator = 1000;
  int batch_size = 64;
  /*! \brief Early-stop window in batches; empty disables early stopping. */
  std::optional<int> early_stop;
  ClientCompute client_compute;
  std::string device_key = "v100";
  std::string client_name = "client0";
  int repeats = 3;
  ExplorerParams explorer;
  CostModelParams cost_model;
  std::uint64_t seed = 0;
  Nanos start_at = 0;
  /*! \brief Give up when no runner is registered for this long. */
  Nanos no_runner_timeout = 600'000'000'000;

  void Validate() const;
};

struct TuningLogEntry {
  int operator_id = 0;
  Configuration configuration;
  double mean_ms = 0;
  int tuned_gpu_percent = 0;
  Nanos timestamp = 0;

  bool operator==(const TuningLogEntry&) const = default;
};

/*! \brief Append-only; at most one entry per (operator, configuration). */
class TuningLog {
 public:
  void Append(const TuningLogEntry& e);
  const std::vector<TuningLogEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::string ToJsonLines() const;
  static TuningLog FromJsonLines(const std::string& text);
  void Save(const std::string& path) const;
  static TuningLog Load(const std::string& path);

  bool operator==(const TuningLog& o) const { return entries_ == o.entries_; }

 private:
  std::vector<TuningLogEntry> entries_;
  std::map<std::pair<int, Configuration>, std::size_t> seen_;
};

struct TunedEntry {
  Configuration configuration;
  double mean_ms = 0;
  int tuned_gpu_percent = 0;

  bool operator==(const TunedEntry&) const = default;
};

struct TunedModel {
  std::string model;
  std::map<int, TunedEntry> best;

  nlohmann::ordered_json ToJson() const;
  static TunedModel FromJson(const nlohmann::json& j);
  std::string Dump() const;
  void Save(const std::string& path) const;
  static TunedModel Load(const std::string& path);

  bool operator==(const TunedModel&) const = default;
};

struct OperatorOutcome {
  int operator_id = 0;
  std::optional<TuningLogEntry> best;
  int measured = 0;
  int invalid = 0;
  int failed = 0;
  int batches = 0;
  bool exhausted = false;
  bool early_stopped = false;
  Nanos started = 0;
  Nanos finished = 0;
};

struct JobResult {
  std::string client;
  TuningLog log;
  std::vector<OperatorOutcome> operators;
  Nanos started = 0;
  Nanos finished = 0;
  std::optional<std::string> error;

  Nanos duration() const { return finished - started; }
};

using RunnerDirectory = std::function<SimRunner*(const std::string& endpoint)>;

/*!
 * \brief One client instance driven by the event loop.
 *
 * Per-operator search state is seeded from (job seed, operator id) only, so an
 * operator tunes identically whichever client or shard it lands in.
 */
class SimClient {
 public:
  SimClient(EventLoop* loop, TrackerCore* tracker, RunnerDirectory runners, Trace* trace,
            TuningJob job);
  ~SimClient();

  void Start(std::function<void(const JobResult&)> on_done = nullptr);
  bool done() const { return done_; }
  const JobResult& result() const { return result_; }
  const TuningJob& job() const { return job_; }
  std::string component() const { return "client:" + job_.client_name; }

 private:
  struct OperatorState;
  struct Pending;

  void BeginOperator();
  void BeginBatch();
  void Dispatch();
  void Pump();
  void OnLease(const Lease& lease, std::size_t slot);
  void OnResult(std::size_t slot, const Lease& lease, const ProfileResult& r, Nanos finish);
  void FinishBatch();
  void FinishOperator();
  void Fail(const std::string& why);

  EventLoop* loop_;
  TrackerCore* tracker_;
  RunnerDirectory runners_;
  Trace* trace_;
  TuningJob job_;
  std::function<void(const JobResult&)> on_done_;
  std::unique_ptr<OperatorState> op_;
  std::size_t op_pos_ = 0;
  std::uint64_t next_request_id_ = 1;
  JobResult result_;
  bool done_ = false;
  Nanos waiting_since_ = -1;
};

/*! \brief Contiguous split into k lists whose sizes differ by at most one. */
std::vector<std::vector<int>> ShardOperators(const ModelSpec& model, int k);

/*! \brief Per-operator argmin across logs; ties go to the lexicographically smaller config. */
TunedModel MergeLogs(const std::vector<TuningLog>& logs, const ModelSpec& model);

struct InferenceEstimate {
  double per_image_ms = 0;
  double total_s = 0;
};

InferenceEstimate EvaluateInference(const TunedModel& tm, const ModelSpec& model,
                                    const GpuParams& gpu, int gpu_percent, std::int64_t images);

/*! \brief Worst launchable configuration of every operator at 100%. */
TunedModel UntunedBaseline(const ModelSpec& model, const GpuParams& gpu);

/*! \brief Brute-force optimum over the launchable configurations of op at gpu_percent. */
Configuration OracleBest(const OperatorSpec& op, const GpuParams& gpu, int gpu_percent);

}  // namespace tuneplex

#endif  // TUNEPLEX_CLIENT_H_
