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
 * \file tuneplex/live.h
 * \brief Socket deployment: tracker and runners behind real TCP servers.
 *
 * Runner durations are slept at a reduced scale. Live mode exercises the wire
 * protocol under concurrency and is outside the determinism guarantees.
 */
#ifndef TUNEPLEX_LIVE_H_
#define TUNEPLEX_LIVE_H_

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tuneplex/client.h"
#include "tuneplex/devicesim.h"
#include "tuneplex/runner.h"
#include "tuneplex/tracker.h"
#include "tuneplex/transport.h"

namespace tuneplex {

struct LiveClusterOptions {
  GpuParams gpu;
  /*! \brief Endpoints are assigned at start; the endpoint field is ignored. */
  std::vector<RunnerConfig> runners;
  double time_scale = 1e-3;
  std::chrono::milliseconds lease_timeout{30000};
};

class LiveCluster {
 public:
  explicit LiveCluster(LiveClusterOptions opts);
  ~LiveCluster();
  LiveCluster(const LiveCluster&) = delete;
  LiveCluster& operator=(const LiveCluster&) = delete;

  /*! \brief Starts the tracker, then each runner, which registers over TCP. */
  void Start();
  void Stop();

  std::string tracker_endpoint() const;
  std::vector<std::string> runner_endpoints() const;
  TrackerCore& tracker() { return core_; }
  SimRunner* runner(const std::string& endpoint) const;

 private:
  struct RunnerSlot;

  LiveClusterOptions opts_;
  SimGpu gpu_;
  TrackerCore core_;
  std::unique_ptr<TrackerService> tracker_service_;
  std::unique_ptr<TcpServer> tracker_server_;
  std::vector<std::unique_ptr<RunnerSlot>> runners_;
  bool started_ = false;
};

struct LiveTuneResult {
  TuningLog log;
  std::map<int, TuningLogEntry> best;
  std::int64_t requests = 0;
  std::int64_t failed = 0;
};

/*!
 * \brief Tunes job over sockets. Batches are dispatched by one worker per runner
 * registered under the key; each request is LEASE, PROFILE, RELEASE.
 * Client compute costs are not charged.
 */
LiveTuneResult LiveTune(const std::string& tracker_endpoint, const TuningJob& job);

struct SoakStats {
  std::int64_t requests = 0;
  std::int64_t ok = 0;
  std::int64_t errors = 0;
  /*! \brief Results whose request_id differed from the request's. */
  std::int64_t mismatched = 0;
  /*! \brief Grants of an endpoint that was already leased to someone else. */
  std::int64_t double_leases = 0;
};

/*! \brief Hammers the cluster from `clients` threads with random PROFILE requests. */
SoakStats RunSoak(const std::string& tracker_endpoint, const std::string& device_key,
                  const ModelSpec& model, int clients, int requests_per_client, std::uint64_t seed);

}  // namespace tuneplex

#endif  // TUNEPLEX_LIVE_H_
