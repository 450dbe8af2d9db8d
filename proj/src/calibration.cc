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
#include "tuneplex/calibration.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace tuneplex {

using ojson = nlohmann::ordered_json;

CalibrationTargets CalibrationTargets::FromJson(const nlohmann::json& j) {
  CalibrationTargets t;
  try {
    t.model = j.value("model", t.model);
    t.build_ms_per_config = j.value("build_ms_per_config", t.build_ms_per_config);
    t.nominal_seconds_per_config = j.value("nominal_seconds_per_config", t.nominal_seconds_per_config);
    t.runner_busy_share = j.value("runner_busy_share", t.runner_busy_share);
    t.seconds_per_config = j.value("seconds_per_config", t.seconds_per_config);
    t.seconds_per_config_tolerance =
        j.value("seconds_per_config_tolerance", t.seconds_per_config_tolerance);
    t.server_idle_min = j.value("server_idle_min", t.server_idle_min);
    t.server_idle_max = j.value("server_idle_max", t.server_idle_max);
    t.gpu_idle_min = j.value("gpu_idle_min", t.gpu_idle_min);
    t.gpu_idle_max = j.value("gpu_idle_max", t.gpu_idle_max);
    t.context_share_min = j.value("context_share_min", t.context_share_min);
    t.multiplex_server_idle_max = j.value("multiplex_server_idle_max", t.multiplex_server_idle_max);
    t.multiplex_inflation_min = j.value("multiplex_inflation_min", t.multiplex_inflation_min);
    t.multiplex_inflation_max = j.value("multiplex_inflation_max", t.multiplex_inflation_max);
    if (j.contains("stagger_candidates_ms")) {
      t.stagger_candidates_ms = j["stagger_candidates_ms"].get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed targets: ") + e.what());
  }
  if (!(t.nominal_seconds_per_config > 0) || !(t.runner_busy_share > 0) ||
      t.runner_busy_share >= 1 || t.build_ms_per_config < 0) {
    throw Error(ErrorCode::kInvalidArgument, "targets out of range");
  }
  if (t.stagger_candidates_ms.empty()) {
    for (int s = 0; s <= 150; s += 5) t.stagger_candidates_ms.push_back(s * 1000.0);
  }
  return t;
}

CalibrationTargets CalibrationTargets::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path);
  try {
    return FromJson(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "malformed " + path + ": " + e.what());
  }
}

nlohmann::ordered_json CalibrationTargets::ToJson() const {
  ojson j;
  j["model"] = model;
  j["build_ms_per_config"] = build_ms_per_config;
  j["nominal_seconds_per_config"] = nominal_seconds_per_config;
  j["runner_busy_share"] = runner_busy_share;
  j["seconds_per_config"] = seconds_per_config;
  j["seconds_per_config_tolerance"] = seconds_per_config_tolerance;
  j["server_idle_min"] = server_idle_min;
  j["server_idle_max"] = server_idle_max;
  j["gpu_idle_min"] = gpu_idle_min;
  j["gpu_idle_max"] = gpu_idle_max;
  j["context_share_min"] = context_share_min;
  j["multiplex_server_idle_max"] = multiplex_server_idle_max;
  j["multiplex_inflation_min"] = multiplex_inflation_min;
  j["multiplex_inflation_max"] = multiplex_inflation_max;
  j["stagger_candidates_ms"] = stagger_candidates_ms;
  return j;
}

namespace {

struct Baseline {
  double seconds_per_config = 0;
  double runner_busy_per_config = 0;
  double configs = 0;
  double batches = 0;
  double minutes = 0;
  Metrics metrics;
};

JobSpec Job(const std::string& model, const std::string& client, Nanos start = 0) {
  JobSpec j;
  j.model = model;
  j.client_name = client;
  j.start_at = start;
  return j;
}

Baseline RunBaseline(const SystemConfig& cfg, const std::string& model, std::uint64_t seed) {
  const auto r = Simulate(cfg, {RunnerSpec{"tsi0"}}, {Job(model, "tci0")}, seed);
  Baseline b;
  for (const auto& op : r.jobs[0].operators) {
    b.configs += op.measured;
    b.batches += op.batches;
  }
  const double secs = NanosToMs(r.job_durations[0]) / 1000.0;
  b.seconds_per_config = secs / b.configs;
  b.runner_busy_per_config =
      (1.0 - r.metrics.server_idle_fraction) * NanosToMs(r.elapsed) / 1000.0 / b.configs;
  b.minutes = NanosToMinutes(r.job_durations[0]);
  b.metrics = r.metrics;
  return b;
}

// Dividing by the inverse step keeps decimal constants exactly printable.
double RoundTo(double v, double step) { return std::round(v / step) / (1.0 / step); }

}  // namespace

CalibrationResult Calibrate(const CalibrationTargets& t, SystemConfig cfg, std::uint64_t seed) {
  cfg.client_compute.build_ms_per_config = t.build_ms_per_config;
  const double target_t = t.nominal_seconds_per_config;
  const double target_r = t.runner_busy_share * target_t;

  Baseline b = RunBaseline(cfg, t.model, seed);
  for (int iter = 0; iter < 8; ++iter) {
    const double ds = target_r - b.runner_busy_per_config;
    const double s = std::max(0.0, cfg.service_overhead_ms / 1000.0 + ds);
    const double applied = s - cfg.service_overhead_ms / 1000.0;
    const double da = (target_t - (b.seconds_per_config + applied)) * b.configs / b.batches;
    const double a = std::max(0.0, cfg.client_compute.strategy_ms_per_batch / 1000.0 + da);
    cfg.service_overhead_ms = RoundTo(s * 1000.0, 0.001);
    cfg.client_compute.strategy_ms_per_batch = RoundTo(a * 1000.0, 0.001);
    b = RunBaseline(cfg, t.model, seed);
    if (std::abs(b.seconds_per_config - target_t) < 1e-5 &&
        std::abs(b.runner_busy_per_config - target_r) < 1e-5) {
      break;
    }
  }

  CalibrationResult out;
  ojson scan = ojson::array();
  double best_score = -INFINITY;
  double best_stagger = 0;
  auto probe = [&](double stagger) {
    const auto r = Simulate(cfg, {RunnerSpec{"tsi0"}},
                            {Job(t.model, "tci0"), Job(t.model, "tci1", MsToNanos(stagger))},
                            seed);
    const auto& jm = r.metrics.job_minutes;
    const double infl = std::accumulate(jm.begin(), jm.end(), 0.0) / jm.size() / b.minutes - 1.0;
    const double idle = r.metrics.server_idle_fraction;
    const double score = std::min({t.multiplex_server_idle_max - idle,
                                   infl - t.multiplex_inflation_min,
                                   t.multiplex_inflation_max - infl});
    scan.push_back({{"stagger_ms", stagger}, {"server_idle", idle}, {"inflation", infl}});
    if (score > best_score) {
      best_score = score;
      best_stagger = stagger;
    }
  };
  std::vector<double> coarse = t.stagger_candidates_ms;
  std::sort(coarse.begin(), coarse.end());
  for (double s : coarse) probe(s);
  // Refine between the neighbours of the best coarse point.
  const auto it = std::find(coarse.begin(), coarse.end(), best_stagger);
  const double lo_s = it == coarse.begin() ? best_stagger : *(it - 1);
  const double hi_s = it + 1 == coarse.end() ? best_stagger : *(it + 1);
  for (int i = 1; i < 20; ++i) {
    const double s = RoundTo(lo_s + (hi_s - lo_s) * i / 20.0, 1.0);
    if (s != best_stagger) probe(s);
  }
  cfg.multiplex_stagger_ms = best_stagger;
  if (best_score < 0) {
    out.failures.push_back("no launch offset satisfies the multiplexing targets");
  }

  const auto& m = b.metrics;
  const double lo = t.seconds_per_config * (1 - t.seconds_per_config_tolerance);
  const double hi = t.seconds_per_config * (1 + t.seconds_per_config_tolerance);
  if (b.seconds_per_config < lo || b.seconds_per_config > hi) {
    out.failures.push_back("seconds per config outside tolerance");
  }
  if (m.server_idle_fraction < t.server_idle_min || m.server_idle_fraction > t.server_idle_max) {
    out.failures.push_back("server idle outside target band");
  }
  if (m.gpu_idle_fraction < t.gpu_idle_min || m.gpu_idle_fraction > t.gpu_idle_max) {
    out.failures.push_back("gpu idle outside target band");
  }
  if (m.gpu_busy_context_share < t.context_share_min) {
    out.failures.push_back("context share below target");
  }

  out.config = cfg;
  out.achieved["seconds_per_config"] = b.seconds_per_config;
  out.achieved["baseline_minutes"] = b.minutes;
  out.achieved["server_idle"] = m.server_idle_fraction;
  out.achieved["gpu_idle"] = m.gpu_idle_fraction;
  out.achieved["context_share"] = m.gpu_busy_context_share;
  out.achieved["multiplex_stagger_ms"] = best_stagger;
  out.achieved["multiplex_margin"] = best_score;
  out.achieved["stagger_scan"] = scan;
  return out;
}

}  // namespace tuneplex
