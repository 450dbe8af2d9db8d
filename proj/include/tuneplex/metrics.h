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
 * \file tuneplex/metrics.h
 * \brief Per-component busy timelines and the derived idle/throughput metrics.
 *
 * Components are clients, runners (server processes) and GPU partitions. A
 * component's intervals never overlap; busy plus idle equals elapsed exactly.
 */
#ifndef TUNEPLEX_METRICS_H_
#define TUNEPLEX_METRICS_H_

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "tuneplex/common.h"

namespace tuneplex {

enum class ComponentKind { kClient, kRunner, kGpu };
const char* ComponentKindName(ComponentKind k);

// Interval kinds.
inline constexpr const char* kBuild = "build";
inline constexpr const char* kStrategy = "strategy";
inline constexpr const char* kService = "service";
inline constexpr const char* kContext = "context";
inline constexpr const char* kProfiling = "profiling";

struct Interval {
  Nanos start = 0;
  Nanos end = 0;
  std::string kind;
};

struct ComponentTrace {
  ComponentKind kind = ComponentKind::kClient;
  /*! \brief SMs owned; weights GPU components in the device idle fraction. */
  int sm_alloc = 0;
  std::vector<Interval> intervals;
};

class Trace {
 public:
  void Declare(const std::string& component, ComponentKind kind, int sm_alloc = 0);
  /*! \brief Zero-length intervals are dropped. The component must be declared. */
  void Add(const std::string& component, Nanos start, Nanos end, const std::string& kind);
  const std::map<std::string, ComponentTrace>& components() const { return components_; }

 private:
  std::map<std::string, ComponentTrace> components_;
};

struct ComponentMetrics {
  ComponentKind kind = ComponentKind::kClient;
  int sm_alloc = 0;
  Nanos busy = 0;
  Nanos idle = 0;
  std::map<std::string, Nanos> by_kind;
};

struct Metrics {
  Nanos elapsed = 0;
  std::map<std::string, ComponentMetrics> components;
  double server_idle_fraction = 0;
  double client_idle_fraction = 0;
  /*! \brief SM-weighted: 1 - sum(sm_alloc * busy) / (sm_count * elapsed). */
  double gpu_idle_fraction = 0;
  double gpu_busy_context_share = 0;
  double gpu_busy_profiling_share = 0;
  std::vector<double> job_minutes;
  /*! \brief 1000 / mean(job minutes). */
  double throughput_per_1000min = 0;
  /*! \brief 1000 / max(job minutes), the conservative reading. */
  double throughput_per_1000min_max = 0;
};

/*!
 * \brief Exact bucket accounting over [0, elapsed].
 *
 * Throws Error(kInvalidState) when a component has overlapping intervals or an
 * interval outside the window; both indicate a simulator bug.
 */
Metrics ComputeMetrics(const Trace& trace, Nanos elapsed, int sm_count,
                       const std::vector<Nanos>& job_durations);

double ThroughputPer1000Min(const std::vector<double>& job_minutes);
double ThroughputPer1000MinMax(const std::vector<double>& job_minutes);

nlohmann::ordered_json MetricsToJson(const Metrics& m);

}  // namespace tuneplex

#endif  // TUNEPLEX_METRICS_H_
