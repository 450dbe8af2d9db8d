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
 * \file tuneplex/runner.h
 * \brief Profiling server bound to one GPU partition, plus its supervisor.
 *
 * A request costs service_overhead_ms of server time, then (fork-per-request
 * only) a fresh GPU context, then `repeats` kernel launches. A runner handles one
 * request at a time.
 */
#ifndef TUNEPLEX_RUNNER_H_
#define TUNEPLEX_RUNNER_H_

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tuneplex/devicesim.h"
#include "tuneplex/event_loop.h"
#include "tuneplex/metrics.h"
#include "tuneplex/tracker.h"
#include "tuneplex/transport.h"
#include "tuneplex/wire.h"

namespace tuneplex {

struct RunnerConfig {
  std::string endpoint;
  std::string device_key = "v100";
  int partition_percent = 100;
  RunnerMode mode = RunnerMode::kForkPerRequest;
  int repeats = 3;
  double service_overhead_ms = 0;

  void Validate() const;
};

struct ServeOutcome {
  ProfileResult result;
  Nanos finish = 0;
};

class SimRunner {
 public:
  /*! \brief trace may be null; otherwise runner and GPU intervals are recorded. */
  SimRunner(RunnerConfig cfg, SimGpu* gpu, Trace* trace = nullptr);
  ~SimRunner();
  SimRunner(const SimRunner&) = delete;
  SimRunner& operator=(const SimRunner&) = delete;

  /*!
   * \brief Creates the partition; a long-lived runner also creates its context.
   * Returns the time at which the runner is ready.
   */
  Nanos Start(Nanos now);
  void Stop();

  /*! \brief Serves one request starting at `start` (not before the previous finish). */
  ServeOutcome Serve(const ProfileRequest& req, Nanos start);
  /*! \brief Frame-level form of Serve: PROFILE in, RESULT (or ERROR) out. */
  std::string ServeFrame(const std::string& frame, Nanos start, Nanos* finish);

  /*! \brief Test hook: the process dies; later requests fail with server_error. */
  void InjectCrash() { crashed_ = true; }
  bool crashed() const { return crashed_; }

  const RunnerConfig& config() const { return cfg_; }
  const Partition& partition() const { return partition_; }
  std::int64_t requests_served() const { return served_; }
  Nanos busy_until() const { return busy_until_; }
  std::string runner_component() const { return "runner:" + cfg_.endpoint; }
  std::string gpu_component() const { return "gpu:" + cfg_.endpoint; }

 private:
  std::optional<std::string> Validate(const ProfileRequest& req) const;
  void Record(const std::string& component, Nanos start, Nanos end, const char* kind);

  RunnerConfig cfg_;
  SimGpu* gpu_;
  Trace* trace_;
  Partition partition_;
  std::optional<GpuContext> context_;
  bool started_ = false;
  bool crashed_ = false;
  std::int64_t served_ = 0;
  Nanos busy_until_ = 0;
};

/*! \brief Frame handler that serves a runner on the wall clock (live mode). */
class RunnerService : public FrameHandler {
 public:
  explicit RunnerService(SimRunner* runner, double time_scale = 1e-3);
  std::string HandleFrame(const std::string& frame) override;

 private:
  SimRunner* runner_;
  double time_scale_;
  std::mutex mu_;
  Nanos clock_ = 0;
};

struct SupervisorParams {
  Nanos poll_interval = 1'000'000'000;
  int max_respawns = 5;
  Nanos storm_window = 60'000'000'000;
};

/*!
 * \brief Owns the runners of a scenario and replaces crashed ones.
 *
 * A crash deregisters the runner immediately. The next poll starts a runner with
 * an identical config and registers it again. More than max_respawns within
 * storm_window aborts with Error(kAborted).
 */
class Supervisor {
 public:
  Supervisor(TrackerCore* tracker, SimGpu* gpu, Trace* trace = nullptr,
             SupervisorParams params = {});

  SimRunner* Spawn(const RunnerConfig& cfg, Nanos now);
  SimRunner* Find(const std::string& endpoint) const;
  std::vector<SimRunner*> runners() const;

  void Crash(const std::string& endpoint);
  /*! \brief Replaces crashed runners; returns how many were respawned. */
  int Poll(Nanos now);
  /*! \brief Polls periodically on loop until StopPolling. */
  void StartPolling(EventLoop* loop);
  void StopPolling() { polling_ = false; }

  const std::vector<Nanos>& respawn_times() const { return respawns_; }
  const SupervisorParams& params() const { return params_; }

 private:
  void SchedulePoll(EventLoop* loop);

  TrackerCore* tracker_;
  SimGpu* gpu_;
  Trace* trace_;
  SupervisorParams params_;
  std::map<std::string, std::unique_ptr<SimRunner>> runners_;
  std::vector<std::unique_ptr<SimRunner>> retired_;
  std::vector<Nanos> respawns_;
  bool polling_ = false;
};

}  // namespace tuneplex

#endif  // TUNEPLEX_RUNNER_H_
