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
#include "tuneplex/metrics.h"

#include <algorithm>
#include <numeric>

namespace tuneplex {

const char* ComponentKindName(ComponentKind k) {
  switch (k) {
    case ComponentKind::kClient:
      return "client";
    case ComponentKind::kRunner:
      return "runner";
    case ComponentKind::kGpu:
      return "gpu";
  }
  return "unknown";
}

void Trace::Declare(const std::string& component, ComponentKind kind, int sm_alloc) {
  auto [it, inserted] = components_.try_emplace(component);
  if (inserted) {
    it->second.kind = kind;
    it->second.sm_alloc = sm_alloc;
  } else if (it->second.kind != kind) {
    throw Error(ErrorCode::kInvalidState, "component " + component + " redeclared as another kind");
  }
}

void Trace::Add(const std::string& component, Nanos start, Nanos end, const std::string& kind) {
  if (end < start) throw Error(ErrorCode::kInvalidState, "interval ends before it starts");
  if (end == start) return;
  auto it = components_.find(component);
  if (it == components_.end()) {
    throw Error(ErrorCode::kInvalidState, "component " + component + " was not declared");
  }
  it->second.intervals.push_back(Interval{start, end, kind});
}

double ThroughputPer1000Min(const std::vector<double>& job_minutes) {
  if (job_minutes.empty()) return 0;
  const double mean =
      std::accumulate(job_minutes.begin(), job_minutes.end(), 0.0) / job_minutes.size();
  return mean > 0 ? 1000.0 / mean : 0;
}

double ThroughputPer1000MinMax(const std::vector<double>& job_minutes) {
  if (job_minutes.empty()) return 0;
  const double mx = *std::max_element(job_minutes.begin(), job_minutes.end());
  return mx > 0 ? 1000.0 / mx : 0;
}

Metrics ComputeMetrics(const Trace& trace, Nanos elapsed, int sm_count,
                       const std::vector<Nanos>& job_durations) {
  if (elapsed <= 0) throw Error(ErrorCode::kInvalidArgument, "elapsed time must be positive");
  Metrics m;
  m.elapsed = elapsed;
  Nanos runner_idle = 0;
  Nanos client_idle = 0;
  std::int64_t runners = 0;
  std::int64_t clients = 0;
  // Integer SM-weighted sum keeps the device fraction exact.
  __int128 gpu_busy_weighted = 0;
  Nanos gpu_context = 0;
  Nanos gpu_profiling = 0;
  for (const auto& [name, c] : trace.components()) {
    std::vector<Interval> iv = c.intervals;
    std::sort(iv.begin(), iv.end(),
              [](const Interval& a, const Interval& b) { return a.start < b.start; });
    ComponentMetrics cm;
    cm.kind = c.kind;
    cm.sm_alloc = c.sm_alloc;
    Nanos last_end = 0;
    for (const auto& i : iv) {
      if (i.start < last_end) {
        throw Error(ErrorCode::kInvalidState, "overlapping intervals on component " + name);
      }
      if (i.start < 0 || i.end > elapsed) {
        throw Error(ErrorCode::kInvalidState, "interval outside the run window on " + name);
      }
      cm.busy += i.end - i.start;
      cm.by_kind[i.kind] += i.end - i.start;
      last_end = i.end;
    }
    cm.idle = elapsed - cm.busy;
    switch (c.kind) {
      case ComponentKind::kRunner:
        runner_idle += cm.idle;
        ++runners;
        break;
      case ComponentKind::kClient:
        client_idle += cm.idle;
        ++clients;
        break;
      case ComponentKind::kGpu:
        gpu_busy_weighted += static_cast<__int128>(cm.busy) * c.sm_alloc;
        gpu_context += cm.by_kind.count(kContext) ? cm.by_kind.at(kContext) : 0;
        gpu_profiling += cm.by_kind.count(kProfiling) ? cm.by_kind.at(kProfiling) : 0;
        break;
    }
    m.components.emplace(name, std::move(cm));
  }
  const double e = static_cast<double>(elapsed);
  if (runners > 0) m.server_idle_fraction = static_cast<double>(runner_idle) / (e * runners);
  if (clients > 0) m.client_idle_fraction = static_cast<double>(client_idle) / (e * clients);
  m.gpu_idle_fraction =
      1.0 - static_cast<double>(gpu_busy_weighted) / (e * static_cast<double>(sm_count));
  const Nanos gpu_busy = gpu_context + gpu_profiling;
  if (gpu_busy > 0) {
    m.gpu_busy_context_share = static_cast<double>(gpu_context) / static_cast<double>(gpu_busy);
    m.gpu_busy_profiling_share = static_cast<double>(gpu_profiling) / static_cast<double>(gpu_busy);
  }
  for (Nanos d : job_durations) m.job_minutes.push_back(NanosToMinutes(d));
  m.throughput_per_1000min = ThroughputPer1000Min(m.job_minutes);
  m.throughput_per_1000min_max = ThroughputPer1000MinMax(m.job_minutes);
  return m;
}

nlohmann::ordered_json MetricsToJson(const Metrics& m) {
  nlohmann::ordered_json j;
  j["elapsed_ns"] = m.elapsed;
  j["elapsed_min"] = NanosToMinutes(m.elapsed);
  j["server_idle_fraction"] = m.server_idle_fraction;
  j["client_idle_fraction"] = m.client_idle_fraction;
  j["gpu_idle_fraction"] = m.gpu_idle_fraction;
  j["gpu_busy_split"] = {{"context", m.gpu_busy_context_share},
                         {"profiling", m.gpu_busy_profiling_share}};
  j["job_minutes"] = m.job_minutes;
  j["throughput_per_1000min"] = m.throughput_per_1000min;
  j["throughput_per_1000min_max"] = m.throughput_per_1000min_max;
  nlohmann::ordered_json comps = nlohmann::ordered_json::object();
  for (const auto& [name, c] : m.components) {
    nlohmann::ordered_json o;
    o["kind"] = ComponentKindName(c.kind);
    if (c.kind == ComponentKind::kGpu) o["sm_alloc"] = c.sm_alloc;
    o["busy_ns"] = c.busy;
    o["idle_ns"] = c.idle;
    nlohmann::ordered_json kinds = nlohmann::ordered_json::object();
    for (const auto& [k, v] : c.by_kind) kinds[k] = v;
    o["by_kind_ns"] = kinds;
    comps[name] = o;
  }
  j["components"] = comps;
  return j;
}

}  // namespace tuneplex
