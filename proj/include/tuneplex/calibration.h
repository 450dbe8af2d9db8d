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
 * \file tuneplex/calibration.h
 * \brief Solves the client and runner cost constants against timing targets.
 *
 * Build cost per configuration is an input. Service overhead and strategy cost
 * are solved by fixed-point iteration on the single-client, single-runner
 * baseline so that it hits the nominal seconds per configuration and the target
 * runner busy share. The multiplexed launch offset is then chosen by scanning.
 */
#ifndef TUNEPLEX_CALIBRATION_H_
#define TUNEPLEX_CALIBRATION_H_

#include <string>
#include <vector>

#include "json.hpp"
#include "tuneplex/harness.h"

namespace tuneplex {

struct CalibrationTargets {
  std::string model = "resnet18-like";
  double build_ms_per_config = 500;
  double nominal_seconds_per_config = 2.325;
  /*! \brief Runner busy time over elapsed time for the baseline. */
  double runner_busy_share = 0.4985;

  double seconds_per_config = 2.3;
  double seconds_per_config_tolerance = 0.10;
  double server_idle_min = 0.50;
  double server_idle_max = 0.60;
  double gpu_idle_min = 0.80;
  double gpu_idle_max = 0.90;
  double context_share_min = 0.95;

  double multiplex_server_idle_max = 0.15;
  double multiplex_inflation_min = 0.15;
  double multiplex_inflation_max = 0.30;
  std::vector<double> stagger_candidates_ms;

  static CalibrationTargets FromJson(const nlohmann::json& j);
  static CalibrationTargets Load(const std::string& path);
  nlohmann::ordered_json ToJson() const;
};

struct CalibrationResult {
  SystemConfig config;
  nlohmann::ordered_json achieved;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

CalibrationResult Calibrate(const CalibrationTargets& targets, SystemConfig base,
                            std::uint64_t seed = 0);

}  // namespace tuneplex

#endif  // TUNEPLEX_CALIBRATION_H_
