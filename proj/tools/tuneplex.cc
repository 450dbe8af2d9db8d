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
 * \file tools/tuneplex.cc
 * \brief Command line front end: run scenarios, calibrate, export model specs.
 */
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "tuneplex/calibration.h"
#include "tuneplex/harness.h"
#include "tuneplex/workload.h"

using namespace tuneplex;

int main(int argc, char** argv) {
  CLI::App app{"tuneplex: GPU-multiplexed autotuning simulator"};
  app.require_subcommand(1);
  std::string config_dir = DefaultConfigDir();
  app.add_option("--config", config_dir, "Directory holding device/calibration/search json");

  auto* run = app.add_subcommand("run", "Run one scenario in virtual time");
  std::string scenario;
  std::vector<std::string> models;
  int runners = 0;
  int clients = 0;
  std::vector<int> percents;
  std::uint64_t seed = 0;
  int budget = 0;
  int requests = 0;
  std::string mode;
  std::string out_dir = "reports";
  std::string format = "json";
  run->add_option("scenario", scenario, "Scenario name")
      ->required()
      ->check(CLI::IsMember(ScenarioNames()));
  run->add_option("--model", models, "Model name or spec file (repeatable, comma separated)")
      ->delimiter(',');
  run->add_option("--runners", runners, "Runner count (upper bound of the scaling sweep)");
  run->add_option("--clients", clients, "Client count (upper bound of the sharding sweep)");
  run->add_option("--percent", percents, "GPU percents, comma separated")->delimiter(',');
  run->add_option("--seed", seed, "Scenario seed");
  run->add_option("--budget", budget, "Configurations per operator");
  run->add_option("--requests", requests, "Requests in the runner-level comparison");
  run->add_option("--mode", mode, "Runner mode")
      ->check(CLI::IsMember({"fork_per_request", "long_lived"}));
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--format", format, "json or csv");

  auto* calibrate = app.add_subcommand("calibrate", "Solve and freeze the cost constants");
  std::string targets_path;
  bool dry_run = false;
  calibrate->add_option("--targets", targets_path, "Targets json")->required();
  calibrate->add_flag("--dry-run", dry_run, "Print the result without writing config files");

  auto* export_spec = app.add_subcommand("export-model-spec", "Print a builtin model spec");
  std::string export_name;
  export_spec->add_option("name", export_name, "Model name")
      ->required()
      ->check(CLI::IsMember(BuiltinModelNames()));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ScenarioParams p;
      p.kind = ParseScenario(scenario);
      p.models = models;
      if (runners > 0) p.runners = runners;
      if (clients > 0) p.clients = clients;
      p.percents = percents;
      if (budget > 0) p.budget = budget;
      if (requests > 0) p.requests = requests;
      if (!mode.empty()) p.mode = ParseRunnerMode(mode);
      p.seed = seed;
      const SystemConfig cfg = SystemConfig::Load(config_dir);
      const ScenarioReport report = RunScenario(p, cfg);
      for (const auto& path : EmitReport(report, format, out_dir)) std::cout << path << "\n";
      for (const auto& [key, value] : report.values.items()) {
        std::cout << "  " << key << " = " << value.dump() << "\n";
      }
    } else if (*calibrate) {
      const CalibrationTargets targets = CalibrationTargets::Load(targets_path);
      SystemConfig base;
      if (std::filesystem::exists(config_dir + "/device.json") &&
          std::filesystem::exists(config_dir + "/calibration.json") &&
          std::filesystem::exists(config_dir + "/search.json")) {
        base = SystemConfig::Load(config_dir);
      }
      const CalibrationResult r = Calibrate(targets, base);
      nlohmann::ordered_json j;
      j["config"] = r.config.ToJson();
      j["achieved"] = r.achieved;
      j["failures"] = r.failures;
      std::cout << j.dump(2) << "\n";
      if (!dry_run) {
        r.config.Save(config_dir);
        std::ofstream out(config_dir + "/calibration_report.json");
        out << j.dump(2) << "\n";
      }
      return r.ok() ? 0 : 2;
    } else if (*export_spec) {
      std::cout << ModelSpecToJson(LoadModelSpec(export_name)).dump(2) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error (" << ErrorCodeName(e.code()) << "): " << e.what() << "\n";
    return 1;
  }
  return 0;
}
