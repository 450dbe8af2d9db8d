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
#include "tuneplex/harness.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include "tuneplex/event_loop.h"
#include "tuneplex/runner.h"
#include "tuneplex/tracker.h"

namespace tuneplex {

using ojson = nlohmann::ordered_json;

namespace {

constexpr double kTemporalQuantumMs = 0.05;
const std::vector<int> kDefaultPercents = {10, 25, 50, 75, 100};

nlohmann::json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "malformed " + path + ": " + e.what());
  }
}

void WriteFile(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

double Minutes(Nanos ns) { return NanosToMinutes(ns); }

std::string Key(const std::string& model, const std::string& name) { return model + "/" + name; }

}  // namespace

// ---------------------------------------------------------------------------
// SystemConfig

void SystemConfig::Validate() const {
  gpu.Validate();
  for (double v : {client_compute.build_ms_per_config, client_compute.strategy_ms_per_batch,
                   service_overhead_ms, multiplex_stagger_ms}) {
    if (!std::isfinite(v) || v < 0) {
      throw Error(ErrorCode::kInvalidArgument, "calibration constants must be finite and >= 0");
    }
  }
  if (repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (budget_per_operator < batch_size) {
    throw Error(ErrorCode::kInvalidArgument, "budget_per_operator must be >= batch_size");
  }
  if (explorer.chains < 1 || explorer.steps_per_batch < 0 || !(explorer.temperature > 0) ||
      !(explorer.decay > 0) || explorer.decay > 1) {
    throw Error(ErrorCode::kInvalidArgument, "invalid explorer parameters");
  }
  if (cost_model.n_trees < 1 || cost_model.max_depth < 1 || !(cost_model.learning_rate > 0) ||
      cost_model.min_samples_leaf < 1) {
    throw Error(ErrorCode::kInvalidArgument, "invalid cost model parameters");
  }
}

SystemConfig SystemConfig::Load(const std::string& dir) {
  SystemConfig c;
  c.gpu = GpuParamsFromJson(ReadJsonFile(dir + "/device.json"));
  const auto cal = ReadJsonFile(dir + "/calibration.json");
  const auto search = ReadJsonFile(dir + "/search.json");
  try {
    c.client_compute.build_ms_per_config = cal.at("build_ms_per_config").get<double>();
    c.client_compute.strategy_ms_per_batch = cal.at("strategy_ms_per_batch").get<double>();
    c.service_overhead_ms = cal.at("service_overhead_ms").get<double>();
    c.multiplex_stagger_ms = cal.value("multiplex_stagger_ms", 0.0);
    c.repeats = search.value("repeats", c.repeats);
    c.batch_size = search.value("batch_size", c.batch_size);
    c.budget_per_operator = search.value("budget_per_operator", c.budget_per_operator);
    if (search.contains("explorer")) {
      const auto& e = search["explorer"];
      c.explorer.temperature = e.value("temperature", c.explorer.temperature);
      c.explorer.decay = e.value("decay", c.explorer.decay);
      c.explorer.steps_per_batch = e.value("steps_per_batch", c.explorer.steps_per_batch);
      c.explorer.chains = e.value("chains", c.explorer.chains);
    }
    if (search.contains("cost_model")) {
      const auto& m = search["cost_model"];
      c.cost_model.n_trees = m.value("n_trees", c.cost_model.n_trees);
      c.cost_model.max_depth = m.value("max_depth", c.cost_model.max_depth);
      c.cost_model.learning_rate = m.value("learning_rate", c.cost_model.learning_rate);
      c.cost_model.min_samples_leaf = m.value("min_samples_leaf", c.cost_model.min_samples_leaf);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed config: ") + e.what());
  }
  c.Validate();
  return c;
}

nlohmann::ordered_json SystemConfig::ToJson() const {
  ojson j;
  j["device"] = GpuParamsToJson(gpu);
  j["calibration"] = {{"build_ms_per_config", client_compute.build_ms_per_config},
                      {"strategy_ms_per_batch", client_compute.strategy_ms_per_batch},
                      {"service_overhead_ms", service_overhead_ms},
                      {"multiplex_stagger_ms", multiplex_stagger_ms}};
  j["search"] = {{"repeats", repeats},
                 {"batch_size", batch_size},
                 {"budget_per_operator", budget_per_operator},
                 {"explorer",
                  {{"temperature", explorer.temperature},
                   {"decay", explorer.decay},
                   {"steps_per_batch", explorer.steps_per_batch},
                   {"chains", explorer.chains}}},
                 {"cost_model",
                  {{"n_trees", cost_model.n_trees},
                   {"max_depth", cost_model.max_depth},
                   {"learning_rate", cost_model.learning_rate},
                   {"min_samples_leaf", cost_model.min_samples_leaf}}}};
  return j;
}

void SystemConfig::Save(const std::string& dir) const {
  Validate();
  std::filesystem::create_directories(dir);
  const ojson j = ToJson();
  WriteFile(dir + "/device.json", j["device"].dump(2) + "\n");
  WriteFile(dir + "/calibration.json", j["calibration"].dump(2) + "\n");
  WriteFile(dir + "/search.json", j["search"].dump(2) + "\n");
}

std::string DefaultConfigDir() {
  if (const char* env = std::getenv("TUNEPLEX_CONFIG_DIR")) return env;
#ifdef TUNEPLEX_DEFAULT_CONFIG_DIR
  if (std::filesystem::exists(TUNEPLEX_DEFAULT_CONFIG_DIR)) return TUNEPLEX_DEFAULT_CONFIG_DIR;
#endif
  return "config";
}

// ---------------------------------------------------------------------------
// Simulation

SimulationResult Simulate(const SystemConfig& cfg, const std::vector<RunnerSpec>& runners,
                          const std::vector<JobSpec>& jobs, std::uint64_t seed) {
  cfg.Validate();
  if (runners.empty()) throw Error(ErrorCode::kInvalidArgument, "simulation needs a runner");
  if (jobs.empty()) throw Error(ErrorCode::kInvalidArgument, "simulation needs a job");

  GpuParams gp = cfg.gpu;
  gp.jitter_seed = MixSeed(seed, gp.jitter_seed);
  SimGpu gpu(gp);
  Trace trace;
  EventLoop loop;
  TrackerCore tracker;
  Supervisor supervisor(&tracker, &gpu, &trace);
  std::map<std::string, ModelSpec> models;
  std::vector<std::unique_ptr<SimClient>> clients;

  try {
    for (const auto& r : runners) {
      RunnerConfig rc;
      rc.endpoint = r.endpoint;
      rc.device_key = r.device_key;
      rc.partition_percent = r.percent;
      rc.mode = r.mode;
      rc.repeats = cfg.repeats;
      rc.service_overhead_ms = cfg.service_overhead_ms;
      supervisor.Spawn(rc, 0);
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const JobSpec& js = jobs[i];
      auto it = models.find(js.model);
      if (it == models.end()) it = models.emplace(js.model, LoadModelSpec(js.model)).first;
      TuningJob job;
      job.model = it->second;
      job.operator_ids = js.operator_ids.empty() ? job.model.OperatorIds() : js.operator_ids;
      job.budget_per_operator = js.budget.value_or(cfg.budget_per_operator);
      job.batch_size = std::min(cfg.batch_size, job.budget_per_operator);
      job.early_stop = js.early_stop;
      job.client_compute = cfg.client_compute;
      job.device_key = js.device_key;
      job.client_name = js.client_name.empty() ? "tci" + std::to_string(i) : js.client_name;
      job.repeats = cfg.repeats;
      job.explorer = cfg.explorer;
      job.cost_model = cfg.cost_model;
      job.seed = seed;
      job.start_at = js.start_at;
      RunnerDirectory dir = [&supervisor](const std::string& ep) { return supervisor.Find(ep); };
      clients.push_back(std::make_unique<SimClient>(&loop, &tracker, dir, &trace, std::move(job)));
    }
    for (auto& c : clients) c->Start();
    loop.Run();
  } catch (const ScenarioAborted&) {
    throw;
  } catch (const Error& e) {
    throw ScenarioAborted(std::string("simulation aborted: ") + e.what(), trace);
  }

  SimulationResult out;
  for (auto& c : clients) {
    const JobResult& r = c->result();
    if (!c->done()) {
      throw ScenarioAborted("job " + r.client + " never finished", trace);
    }
    if (r.error) throw ScenarioAborted("job " + r.client + " failed: " + *r.error, trace);
    out.jobs.push_back(r);
    out.job_durations.push_back(r.duration());
    out.elapsed = std::max(out.elapsed, r.finished);
  }
  for (SimRunner* r : supervisor.runners()) out.elapsed = std::max(out.elapsed, r->busy_until());
  out.metrics = ComputeMetrics(trace, out.elapsed, gp.sm_count, out.job_durations);
  out.gpu_ledger = gpu.TotalLedger();
  out.tracker = tracker.counters();
  return out;
}

// ---------------------------------------------------------------------------
// Scenario plumbing

const char* ScenarioName(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kMatrix:
      return "matrix";
    case ScenarioKind::kTsiScaling:
      return "tsi_scaling";
    case ScenarioKind::kTciSharding:
      return "tci_sharding";
    case ScenarioKind::kThroughputGrid:
      return "throughput_grid";
    case ScenarioKind::kConcurrentModels:
      return "concurrent_models";
    case ScenarioKind::kIdleBreakdown:
      return "idle_breakdown";
    case ScenarioKind::kSharingModes:
      return "sharing_modes";
    case ScenarioKind::kLongLivedVsFork:
      return "longlived_vs_fork";
  }
  return "unknown";
}

std::vector<std::string> ScenarioNames() {
  std::vector<std::string> out;
  for (int k = 0; k <= static_cast<int>(ScenarioKind::kLongLivedVsFork); ++k) {
    out.push_back(ScenarioName(static_cast<ScenarioKind>(k)));
  }
  return out;
}

ScenarioKind ParseScenario(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(ScenarioKind::kLongLivedVsFork); ++k) {
    if (name == ScenarioName(static_cast<ScenarioKind>(k))) return static_cast<ScenarioKind>(k);
  }
  std::string known;
  for (const auto& n : ScenarioNames()) known += (known.empty() ? "" : ", ") + n;
  throw Error(ErrorCode::kInvalidArgument, "unknown scenario '" + name + "' (known: " + known + ")");
}

void ScenarioParams::Validate() const {
  const auto builtin = BuiltinModelNames();
  for (const auto& m : models) {
    if (std::find(builtin.begin(), builtin.end(), m) == builtin.end()) {
      // Paths to model files are accepted; loading validates them.
      LoadModelSpec(m);
    }
  }
  if (runners && (*runners < 1 || *runners > 100)) {
    throw Error(ErrorCode::kInvalidArgument, "--runners must be in [1, 100]");
  }
  if (clients && *clients < 1) throw Error(ErrorCode::kInvalidArgument, "--clients must be >= 1");
  for (int p : percents) {
    if (p < 1 || p > 100) throw Error(ErrorCode::kInvalidArgument, "percent must be in [1, 100]");
  }
  if (budget && *budget < 1) throw Error(ErrorCode::kInvalidArgument, "budget must be >= 1");
  if (requests && *requests < 1) throw Error(ErrorCode::kInvalidArgument, "requests must be >= 1");
}

const ReportTable& ScenarioReport::Table(const std::string& name) const {
  for (const auto& t : tables) {
    if (t.name == name) return t;
  }
  throw Error(ErrorCode::kNotFound, "report has no table " + name);
}

double ScenarioReport::Value(const std::string& key) const {
  if (!values.contains(key)) throw Error(ErrorCode::kNotFound, "report has no value " + key);
  const auto& v = values[key];
  if (v.is_boolean()) return v.get<bool>() ? 1.0 : 0.0;
  return v.get<double>();
}

nlohmann::ordered_json ScenarioReport::ToJson() const {
  ojson j;
  j["scenario"] = scenario;
  j["seed"] = seed;
  j["params"] = params;
  j["environment"] = environment;
  j["values"] = values;
  ojson tabs = ojson::array();
  for (const auto& t : tables) {
    ojson o;
    o["name"] = t.name;
    o["header"] = t.header;
    o["rows"] = ojson::array();
    for (const auto& row : t.rows) o["rows"].push_back(ojson(row));
    tabs.push_back(std::move(o));
  }
  j["tables"] = tabs;
  j["metrics"] = metrics;
  return j;
}

ScenarioReport ScenarioReport::FromJson(const nlohmann::ordered_json& j) {
  ScenarioReport r;
  try {
    r.scenario = j.at("scenario").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.params = j.at("params");
    r.environment = j.at("environment");
    r.values = j.at("values");
    r.metrics = j.at("metrics");
    for (const auto& o : j.at("tables")) {
      ReportTable t;
      t.name = o.at("name").get<std::string>();
      t.header = o.at("header").get<std::vector<std::string>>();
      for (const auto& row : o.at("rows")) {
        std::vector<ojson> cells;
        for (const auto& c : row) cells.push_back(c);
        t.rows.push_back(std::move(cells));
      }
      r.tables.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string TableToCsv(const ReportTable& t) {
  auto cell = [](const ojson& v) -> std::string {
    if (v.is_string()) {
      const std::string s = v.get<std::string>();
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string q = "\"";
      for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
      }
      return q + "\"";
    }
    return v.dump();
  };
  std::ostringstream os;
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << cell(t.header[i]);
  os << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << cell(row[i]);
    os << "\n";
  }
  return os.str();
}

std::vector<std::string> EmitReport(const ScenarioReport& r, const std::string& format,
                                    const std::string& dir) {
  if (format != "json" && format != "csv") {
    throw Error(ErrorCode::kInvalidArgument, "unknown report format '" + format + "' (json|csv)");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
  std::vector<std::string> written;
  if (format == "json") {
    const std::string path = dir + "/" + r.scenario + ".json";
    WriteFile(path, r.ToJson().dump(2) + "\n");
    written.push_back(path);
  } else {
    for (const auto& t : r.tables) {
      std::string name = t.name;
      std::replace_if(name.begin(), name.end(), [](char c) { return !std::isalnum(c) && c != '_'; },
                      '_');
      const std::string path = dir + "/" + r.scenario + "_" + name + ".csv";
      WriteFile(path, TableToCsv(t));
      written.push_back(path);
    }
  }
  return written;
}

// ---------------------------------------------------------------------------
// Scenarios

namespace {

struct Ctx {
  const ScenarioParams& p;
  const SystemConfig& cfg;
  ScenarioReport& report;
};

std::vector<std::string> ModelsOr(const ScenarioParams& p, std::vector<std::string> dflt) {
  return p.models.empty() ? dflt : p.models;
}

// Reports name a model by its spec name, also when it was given as a file path.
std::string ModelLabel(const std::string& name_or_path) {
  const auto builtin = BuiltinModelNames();
  if (std::find(builtin.begin(), builtin.end(), name_or_path) != builtin.end()) return name_or_path;
  return LoadModelSpec(name_or_path).name;
}

std::vector<int> Splits(int max_n) {
  std::vector<int> out;
  for (int n : {1, 2, 4}) {
    if (n <= max_n) out.push_back(n);
  }
  if (max_n > 4) out.push_back(max_n);
  return out;
}

std::vector<RunnerSpec> EvenRunners(int n, RunnerMode mode, const std::string& key = "v100") {
  std::vector<RunnerSpec> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(RunnerSpec{"tsi" + std::to_string(i), key, 100 / n, mode});
  }
  return out;
}

JobSpec FullJob(const std::string& model, const ScenarioParams& p, const std::string& name,
                Nanos start = 0) {
  JobSpec j;
  j.model = model;
  j.client_name = name;
  j.start_at = start;
  j.budget = p.budget;
  return j;
}

std::int64_t MeasuredConfigs(const SimulationResult& r) {
  std::int64_t n = 0;
  for (const auto& job : r.jobs) {
    for (const auto& op : job.operators) n += op.measured;
  }
  return n;
}

void AddMetrics(ScenarioReport& report, const std::string& name, const SimulationResult& r) {
  report.metrics[name] = MetricsToJson(r.metrics);
}

double RowSpread(const std::vector<double>& row) {
  const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
  return (*mx - *mn) / *mn;
}

void RunMatrix(Ctx& c) {
  const auto models = ModelsOr(c.p, {kMobilenetLike, kResnet18Like, kVgg19Like});
  const auto percents = c.p.percents.empty() ? kDefaultPercents : c.p.percents;
  const RunnerMode mode = c.p.mode.value_or(RunnerMode::kForkPerRequest);
  std::vector<std::string> pheader;
  for (int q : percents) pheader.push_back(std::to_string(q));

  ReportTable minutes_table{"tuning_minutes", {"model"}, {}};
  ReportTable totals_table{"inference_5k_s", {"model"}, {}};
  for (const auto& h : pheader) {
    minutes_table.header.push_back(h);
    totals_table.header.push_back(h);
  }

  for (const auto& src : models) {
    const std::string name = ModelLabel(src);
    const ModelSpec model = LoadModelSpec(src);
    std::vector<TunedModel> tuned;
    std::vector<double> minutes;
    bool matches_oracle = true;
    for (int q : percents) {
      const auto r = Simulate(c.cfg, {RunnerSpec{"tsi0", "v100", q, mode}},
                              {FullJob(src, c.p, "tci0")}, c.p.seed);
      AddMetrics(c.report, name + "@" + std::to_string(q), r);
      tuned.push_back(MergeLogs({r.jobs[0].log}, model));
      minutes.push_back(Minutes(r.job_durations[0]));
      for (const auto& op : model.operators) {
        if (tuned.back().best.at(op.id).configuration != OracleBest(op, c.cfg.gpu, q)) {
          matches_oracle = false;
        }
      }
    }

    // Rows are inference percents, columns tuning percents.
    ReportTable lat{"latency_" + name, {"inference_percent"}, {}};
    for (const auto& h : pheader) lat.header.push_back(h);
    ReportTable untuned{"untuned_" + name, {"inference_percent", "untuned_ms"}, {}};
    const TunedModel baseline = UntunedBaseline(model, c.cfg.gpu);
    bool diagonal = true;
    double spread = 0;
    std::vector<double> totals(percents.size(), 0.0);
    for (std::size_t pi = 0; pi < percents.size(); ++pi) {
      const int p = percents[pi];
      std::vector<ojson> row{p};
      std::vector<double> vals;
      for (std::size_t qi = 0; qi < percents.size(); ++qi) {
        const auto est = EvaluateInference(tuned[qi], model, c.cfg.gpu, p, 1000);
        vals.push_back(est.per_image_ms);
        row.push_back(est.per_image_ms);
        totals[qi] += est.total_s;
      }
      for (std::size_t qi = 0; qi < percents.size(); ++qi) {
        if (qi != pi && !(vals[pi] < vals[qi])) diagonal = false;
      }
      spread = std::max(spread, RowSpread(vals));
      lat.rows.push_back(std::move(row));
      untuned.rows.push_back(
          {p, EvaluateInference(baseline, model, c.cfg.gpu, p, 1).per_image_ms});
    }

    ReportTable threads{"threads_" + name, {"operator_id", "weight_class"}, {}};
    for (const auto& h : pheader) threads.header.push_back(h);
    for (const auto& op : model.operators) {
      std::vector<ojson> row{op.id, WeightClassName(op.weight_class)};
      for (const auto& tm : tuned) row.push_back(tm.best.at(op.id).configuration.TotalThreads());
      threads.rows.push_back(std::move(row));
    }

    std::vector<ojson> mrow{name};
    std::vector<ojson> trow{name};
    for (std::size_t qi = 0; qi < percents.size(); ++qi) {
      mrow.push_back(minutes[qi]);
      trow.push_back(totals[qi]);
    }
    minutes_table.rows.push_back(std::move(mrow));
    totals_table.rows.push_back(std::move(trow));

    const auto [mn, mx] = std::minmax_element(minutes.begin(), minutes.end());
    const std::size_t best_total =
        std::min_element(totals.begin(), totals.end()) - totals.begin();
    c.report.values[Key(name, "diagonal")] = diagonal;
    c.report.values[Key(name, "row_spread_max")] = spread;
    c.report.values[Key(name, "tuning_time_variation")] = (*mx - *mn) / *mn;
    c.report.values[Key(name, "matches_oracle")] = matches_oracle;
    c.report.values[Key(name, "best_total_inference_percent")] = percents[best_total];
    c.report.tables.push_back(std::move(lat));
    c.report.tables.push_back(std::move(untuned));
    c.report.tables.push_back(std::move(threads));
  }
  c.report.tables.push_back(std::move(minutes_table));
  c.report.tables.push_back(std::move(totals_table));
}

void RunTsiScaling(Ctx& c) {
  const auto models = ModelsOr(c.p, {kResnet18Like, kMobilenetLike});
  const RunnerMode mode = c.p.mode.value_or(RunnerMode::kForkPerRequest);
  ReportTable t{"tsi_scaling",
                {"model", "runners", "percent", "tuning_min", "server_idle", "gpu_idle"},
                {}};
  for (const auto& src : models) {
    const std::string name = ModelLabel(src);
    double base = 0;
    for (int n : Splits(c.p.runners.value_or(4))) {
      const auto r = Simulate(c.cfg, EvenRunners(n, mode), {FullJob(src, c.p, "tci0")}, c.p.seed);
      const double m = Minutes(r.job_durations[0]);
      if (n == 1) base = m;
      AddMetrics(c.report, name + "/runners_" + std::to_string(n), r);
      t.rows.push_back({name, n, 100 / n, m, r.metrics.server_idle_fraction,
                        r.metrics.gpu_idle_fraction});
      c.report.values[Key(name, "minutes_" + std::to_string(n))] = m;
      if (base > 0) c.report.values[Key(name, "reduction_" + std::to_string(n))] = 1.0 - m / base;
    }
  }
  c.report.tables.push_back(std::move(t));
}

void RunTciSharding(Ctx& c) {
  const auto models = ModelsOr(c.p, {kResnet18Like, kMobilenetLike});
  const RunnerMode mode = c.p.mode.value_or(RunnerMode::kForkPerRequest);
  ReportTable t{"tci_sharding",
                {"model", "clients", "percent", "tuning_min", "largest_shard_configs"},
                {}};
  for (const auto& src : models) {
    const std::string name = ModelLabel(src);
    const ModelSpec model = LoadModelSpec(src);
    double base = 0;
    for (int k : Splits(c.p.clients.value_or(4))) {
      if (k > static_cast<int>(model.operators.size())) continue;
      const auto shards = ShardOperators(model, k);
      std::vector<RunnerSpec> runners;
      std::vector<JobSpec> jobs;
      for (int i = 0; i < k; ++i) {
        // Each client instance owns its runner: a distinct key pins the pairing.
        const std::string key = "v100/shard" + std::to_string(i);
        runners.push_back(RunnerSpec{"tsi" + std::to_string(i), key, 100 / k, mode});
        JobSpec j = FullJob(src, c.p, "tci" + std::to_string(i));
        j.operator_ids = shards[i];
        j.device_key = key;
        jobs.push_back(std::move(j));
      }
      const auto r = Simulate(c.cfg, runners, jobs, c.p.seed);
      std::vector<TuningLog> logs;
      std::int64_t largest = 0;
      for (const auto& job : r.jobs) {
        logs.push_back(job.log);
        std::int64_t n = 0;
        for (const auto& op : job.operators) n += op.measured;
        largest = std::max(largest, n);
      }
      MergeLogs(logs, model);
      const double m = Minutes(r.elapsed);
      if (k == 1) base = m;
      AddMetrics(c.report, name + "/clients_" + std::to_string(k), r);
      t.rows.push_back({name, k, 100 / k, m, largest});
      c.report.values[Key(name, "minutes_" + std::to_string(k))] = m;
      if (base > 0) c.report.values[Key(name, "reduction_" + std::to_string(k))] = 1.0 - m / base;
    }
  }
  c.report.tables.push_back(std::move(t));
}

void RunThroughputGrid(Ctx& c) {
  const std::string name = ModelsOr(c.p, {kResnet18Like}).front();
  const RunnerMode mode = c.p.mode.value_or(RunnerMode::kForkPerRequest);
  const int clients = c.p.clients.value_or(4);
  ReportTable t{"throughput_grid",
                {"runners", "percent", "mean_job_min", "max_job_min", "throughput_mean",
                 "throughput_max", "server_idle"},
                {}};
  double base = 0;
  for (int n : Splits(c.p.runners.value_or(4))) {
    std::vector<JobSpec> jobs;
    for (int i = 0; i < clients; ++i) jobs.push_back(FullJob(name, c.p, "tci" + std::to_string(i)));
    const auto r = Simulate(c.cfg, EvenRunners(n, mode), jobs, c.p.seed);
    const auto& jm = r.metrics.job_minutes;
    const double mean = std::accumulate(jm.begin(), jm.end(), 0.0) / jm.size();
    const double mx = *std::max_element(jm.begin(), jm.end());
    AddMetrics(c.report, "runners_" + std::to_string(n), r);
    t.rows.push_back({n, 100 / n, mean, mx, r.metrics.throughput_per_1000min,
                      r.metrics.throughput_per_1000min_max, r.metrics.server_idle_fraction});
    const std::string s = std::to_string(n);
    c.report.values["throughput_mean_" + s] = r.metrics.throughput_per_1000min;
    c.report.values["throughput_max_" + s] = r.metrics.throughput_per_1000min_max;
    if (n == 1) base = r.metrics.throughput_per_1000min;
    if (base > 0) c.report.values["ratio_" + s] = r.metrics.throughput_per_1000min / base;
  }
  c.report.tables.push_back(std::move(t));
}

void RunConcurrentModels(Ctx& c) {
  const auto models = ModelsOr(c.p, {kResnet18Like, kMobilenetLike});
  const RunnerMode mode = c.p.mode.value_or(RunnerMode::kForkPerRequest);
  std::vector<std::string> header{"runners"};
  for (const auto& m : models) header.push_back(ModelLabel(m) + "_min");
  header.push_back("throughput_mean");
  header.push_back("throughput_max");
  ReportTable t{"concurrent_models", header, {}};

  // Sequential isolation: each model alone on one full runner, back to back.
  std::vector<double> completions;
  double clock = 0;
  std::vector<ojson> iso_row{"isolated"};
  for (const auto& src : models) {
    const std::string name = ModelLabel(src);
    const auto r =
        Simulate(c.cfg, EvenRunners(1, mode), {FullJob(src, c.p, "tci0")}, c.p.seed);
    const double m = Minutes(r.job_durations[0]);
    AddMetrics(c.report, "isolated/" + name, r);
    iso_row.push_back(m);
    c.report.values[Key(name, "isolated_min")] = m;
    clock += m;
    completions.push_back(clock);
  }
  const double seq_mean = ThroughputPer1000Min(completions);
  const double seq_max = ThroughputPer1000MinMax(completions);
  iso_row.push_back(seq_mean);
  iso_row.push_back(seq_max);
  t.rows.push_back(std::move(iso_row));
  c.report.values["sequential_throughput_mean"] = seq_mean;
  c.report.values["sequential_throughput_max"] = seq_max;
  // Jobs per 1000 minutes when the back-to-back makespan is split evenly.
  c.report.values["sequential_throughput_halfsum"] = 1000.0 / (clock / models.size());

  for (int n : Splits(c.p.runners.value_or(4))) {
    std::vector<JobSpec> jobs;
    for (std::size_t i = 0; i < models.size(); ++i) {
      jobs.push_back(FullJob(models[i], c.p, "tci" + std::to_string(i)));
    }
    const auto r = Simulate(c.cfg, EvenRunners(n, mode), jobs, c.p.seed);
    AddMetrics(c.report, "runners_" + std::to_string(n), r);
    std::vector<ojson> row{n};
    for (double m : r.metrics.job_minutes) row.push_back(m);
    row.push_back(r.metrics.throughput_per_1000min);
    row.push_back(r.metrics.throughput_per_1000min_max);
    t.rows.push_back(std::move(row));
    const std::string s = std::to_string(n);
    c.report.values["throughput_mean_" + s] = r.metrics.throughput_per_1000min;
    c.report.values["throughput_max_" + s] = r.metrics.throughput_per_1000min_max;
    c.report.values["gain_mean_" + s] = r.metrics.throughput_per_1000min / seq_mean;
    c.report.values["gain_max_" + s] = r.metrics.throughput_per_1000min_max / seq_max;
  }
  c.report.tables.push_back(std::move(t));
}

void RunIdleBreakdown(Ctx& c) {
  const std::string name = ModelsOr(c.p, {kResnet18Like}).front();
  const RunnerMode mode = c.p.mode.value_or(RunnerMode::kForkPerRequest);
  ReportTable t{"idle_breakdown",
                {"run", "server_idle", "gpu_idle", "client_idle", "context_share",
                 "profiling_share", "mean_job_min"},
                {}};
  auto row = [&](const std::string& run, const SimulationResult& r) {
    const auto& m = r.metrics;
    const double mean =
        std::accumulate(m.job_minutes.begin(), m.job_minutes.end(), 0.0) / m.job_minutes.size();
    t.rows.push_back({run, m.server_idle_fraction, m.gpu_idle_fraction, m.client_idle_fraction,
                      m.gpu_busy_context_share, m.gpu_busy_profiling_share, mean});
    AddMetrics(c.report, run, r);
    return mean;
  };

  const auto base = Simulate(c.cfg, EvenRunners(1, mode), {FullJob(name, c.p, "tci0")}, c.p.seed);
  const double base_min = row("baseline", base);
  c.report.values["baseline/server_idle"] = base.metrics.server_idle_fraction;
  c.report.values["baseline/gpu_idle"] = base.metrics.gpu_idle_fraction;
  c.report.values["baseline/context_share"] = base.metrics.gpu_busy_context_share;
  c.report.values["baseline/minutes"] = base_min;
  c.report.values["baseline/configs"] = MeasuredConfigs(base);
  c.report.values["baseline/seconds_per_config"] =
      NanosToMs(base.job_durations[0]) / 1000.0 / static_cast<double>(MeasuredConfigs(base));

  auto multiplexed = [&](const std::string& run, Nanos stagger) {
    const auto r = Simulate(c.cfg, EvenRunners(1, mode),
                            {FullJob(name, c.p, "tci0"), FullJob(name, c.p, "tci1", stagger)},
                            c.p.seed);
    const double mean = row(run, r);
    const double worst = *std::max_element(r.metrics.job_minutes.begin(), r.metrics.job_minutes.end());
    c.report.values[run + "/server_idle"] = r.metrics.server_idle_fraction;
    c.report.values[run + "/gpu_idle"] = r.metrics.gpu_idle_fraction;
    c.report.values[run + "/inflation"] = mean / base_min - 1.0;
    c.report.values[run + "/inflation_worst"] = worst / base_min - 1.0;
    c.report.values[run + "/stagger_ms"] = NanosToMs(stagger);
  };
  multiplexed("multiplexed", MsToNanos(c.cfg.multiplex_stagger_ms));
  multiplexed("synchronized", 0);
  c.report.tables.push_back(std::move(t));
}

void RunSharingModes(Ctx& c) {
  const std::string name = ModelsOr(c.p, {kResnet18Like}).front();
  const ModelSpec model = LoadModelSpec(name);
  GpuParams gp = c.cfg.gpu;
  gp.jitter_fraction = 0;
  const int half = 50;

  auto measure = [&](SimRunner* runner, const OperatorSpec& op, const Configuration& cfg,
                     Nanos at) {
    const KernelDescriptor k = DescribeKernel(op, cfg);
    ProfileRequest req;
    req.request_id = static_cast<std::uint64_t>(op.id);
    req.operator_id = op.id;
    req.configuration = cfg;
    req.total_threads = k.total_threads;
    req.total_work = k.total_work;
    req.efficiency = k.efficiency;
    req.max_threads = op.max_threads;
    req.min_threads = op.min_threads;
    req.repeats = c.cfg.repeats;
    const auto out = runner->Serve(req, std::max(at, runner->busy_until()));
    if (out.result.status != ResultStatus::kOk) {
      throw Error(ErrorCode::kInvalidState, "sharing_modes probe failed: " + out.result.error);
    }
    return out.result.mean_ms;
  };
  auto make_runner = [&](SimGpu* gpu, const std::string& ep, int percent) {
    RunnerConfig rc;
    rc.endpoint = ep;
    rc.partition_percent = percent;
    rc.mode = RunnerMode::kLongLived;
    rc.repeats = c.cfg.repeats;
    auto r = std::make_unique<SimRunner>(rc, gpu);
    r->Start(0);
    return r;
  };

  ReportTable t{"sharing_modes",
                {"operator_id", "weight_class", "solo_50_ms", "isolated_50_ms", "solo_100_ms",
                 "uncontrolled_ms", "temporal_ms"},
                {}};
  bool identical = true;
  double unc_heavy = INFINITY, tmp_heavy = INFINITY, unc_all = INFINITY, tmp_all = INFINITY;
  for (const auto& op : model.operators) {
    const Configuration at_half = OracleBest(op, gp, half);
    const Configuration at_full = OracleBest(op, gp, 100);

    SimGpu solo_gpu(gp);
    auto solo = make_runner(&solo_gpu, "solo", half);
    const double solo_half = measure(solo.get(), op, at_half, 0);

    SimGpu shared(gp);
    auto a = make_runner(&shared, "tsi0", half);
    auto b = make_runner(&shared, "tsi1", half);
    const Nanos t0 = std::max(a->busy_until(), b->busy_until());
    // Same virtual start on both partitions: the neighbour runs a different kernel.
    measure(b.get(), op, at_full, t0);
    const double iso_half = measure(a.get(), op, at_half, t0);
    if (iso_half != solo_half) identical = false;

    SimGpu full_gpu(gp);
    auto full = make_runner(&full_gpu, "solo", 100);
    const double solo_full = measure(full.get(), op, at_full, 0);

    SimGpu unc_gpu(gp);
    unc_gpu.SetSharingMode(SharingMode::Uncontrolled(2));
    auto unc = make_runner(&unc_gpu, "tsi0", 100);
    const double unc_ms = measure(unc.get(), op, at_full, 0);

    SimGpu tmp_gpu(gp);
    tmp_gpu.SetSharingMode(SharingMode::Temporal(kTemporalQuantumMs, 2));
    auto tmp = make_runner(&tmp_gpu, "tsi0", 100);
    const double tmp_ms = measure(tmp.get(), op, at_full, 0);

    t.rows.push_back({op.id, WeightClassName(op.weight_class), solo_half, iso_half, solo_full,
                      unc_ms, tmp_ms});
    const double ui = unc_ms / solo_full - 1.0;
    const double ti = tmp_ms / solo_full - 1.0;
    unc_all = std::min(unc_all, ui);
    tmp_all = std::min(tmp_all, ti);
    if (op.weight_class == WeightClass::kHeavy) {
      unc_heavy = std::min(unc_heavy, ui);
      tmp_heavy = std::min(tmp_heavy, ti);
    }
  }
  c.report.values["isolated_bit_identical"] = identical;
  c.report.values["uncontrolled_min_inflation_heavy"] = unc_heavy;
  c.report.values["temporal_min_inflation_heavy"] = tmp_heavy;
  c.report.values["uncontrolled_min_inflation_all"] = unc_all;
  c.report.values["temporal_min_inflation_all"] = tmp_all;
  c.report.values["temporal_quantum_ms"] = kTemporalQuantumMs;
  c.report.tables.push_back(std::move(t));
}

void RunLongLivedVsFork(Ctx& c) {
  const std::string name = ModelsOr(c.p, {kResnet18Like}).front();
  const ModelSpec model = LoadModelSpec(name);
  const int n = c.p.requests.value_or(12000);

  // Runner level: identical request streams through both modes.
  std::vector<std::pair<const OperatorSpec*, SearchSpace>> spaces;
  for (const auto& op : model.operators) spaces.emplace_back(&op, BuildSearchSpace(op));
  auto serve_all = [&](RunnerMode mode) {
    SimGpu gpu(c.cfg.gpu);
    RunnerConfig rc;
    rc.endpoint = "tsi0";
    rc.mode = mode;
    rc.repeats = c.cfg.repeats;
    rc.service_overhead_ms = c.cfg.service_overhead_ms;
    SimRunner runner(rc, &gpu);
    Nanos t = runner.Start(0);
    std::int64_t ok = 0;
    for (int i = 0; i < n; ++i) {
      const auto& [op, space] = spaces[i % spaces.size()];
      const Configuration cfg = space.At((i / spaces.size()) % space.size());
      const KernelDescriptor k = DescribeKernel(*op, cfg);
      ProfileRequest req;
      req.request_id = static_cast<std::uint64_t>(i + 1);
      req.operator_id = op->id;
      req.configuration = cfg;
      req.total_threads = k.total_threads;
      req.total_work = k.total_work;
      req.efficiency = k.efficiency;
      req.max_threads = op->max_threads;
      req.min_threads = op->min_threads;
      req.repeats = c.cfg.repeats;
      const auto out = runner.Serve(req, t);
      if (out.result.status == ResultStatus::kOk) ++ok;
      t = out.finish;
    }
    const PartitionLedger l = gpu.Ledger(runner.partition().id);
    return std::make_tuple(l, t, ok);
  };
  const auto [fork_l, fork_t, fork_ok] = serve_all(RunnerMode::kForkPerRequest);
  const auto [long_l, long_t, long_ok] = serve_all(RunnerMode::kLongLived);
  const Nanos delta = fork_l.context - long_l.context;
  const Nanos expected = static_cast<Nanos>(n - 1) * MsToNanos(c.cfg.gpu.context_creation_ms);
  c.report.values["requests"] = n;
  c.report.values["fork_context_ns"] = fork_l.context;
  c.report.values["longlived_context_ns"] = long_l.context;
  c.report.values["profiling_equal"] = fork_l.profiling == long_l.profiling;
  c.report.values["device_delta_ns"] = delta;
  c.report.values["expected_delta_ns"] = expected;
  c.report.values["delta_exact"] = delta == expected;
  c.report.values["fork_contexts"] = fork_l.context_acquisitions;
  c.report.values["longlived_contexts"] = long_l.context_acquisitions;
  c.report.values["ok_results_equal"] = fork_ok == long_ok;

  ReportTable t{"longlived_vs_fork", {"mode", "device_context_ms", "device_profiling_ms",
                                      "contexts", "tuning_min"},
                {}};
  const auto fork_run = Simulate(c.cfg, EvenRunners(1, RunnerMode::kForkPerRequest),
                                 {FullJob(name, c.p, "tci0")}, c.p.seed);
  const auto long_run = Simulate(c.cfg, EvenRunners(1, RunnerMode::kLongLived),
                                 {FullJob(name, c.p, "tci0")}, c.p.seed);
  AddMetrics(c.report, "fork_per_request", fork_run);
  AddMetrics(c.report, "long_lived", long_run);
  const double fm = Minutes(fork_run.job_durations[0]);
  const double lm = Minutes(long_run.job_durations[0]);
  t.rows.push_back({"fork_per_request", NanosToMs(fork_l.context), NanosToMs(fork_l.profiling),
                    fork_l.context_acquisitions, fm});
  t.rows.push_back({"long_lived", NanosToMs(long_l.context), NanosToMs(long_l.profiling),
                    long_l.context_acquisitions, lm});
  c.report.values["fork_minutes"] = fm;
  c.report.values["longlived_minutes"] = lm;
  c.report.values["time_ratio"] = lm / fm;
  c.report.values["time_reduction"] = 1.0 - lm / fm;
  c.report.tables.push_back(std::move(t));
}

ojson ParamsJson(const ScenarioParams& p) {
  ojson j;
  j["models"] = p.models;
  j["runners"] = p.runners ? ojson(*p.runners) : ojson(nullptr);
  j["clients"] = p.clients ? ojson(*p.clients) : ojson(nullptr);
  j["percents"] = p.percents;
  j["budget"] = p.budget ? ojson(*p.budget) : ojson(nullptr);
  j["mode"] = p.mode ? ojson(RunnerModeName(*p.mode)) : ojson(nullptr);
  j["requests"] = p.requests ? ojson(*p.requests) : ojson(nullptr);
  return j;
}

}  // namespace

ScenarioReport RunScenario(const ScenarioParams& params, const SystemConfig& cfg) {
  params.Validate();
  cfg.Validate();
  ScenarioReport report;
  report.scenario = ScenarioName(params.kind);
  report.seed = params.seed;
  report.params = ParamsJson(params);
  report.environment = cfg.ToJson();
  Ctx c{params, cfg, report};
  switch (params.kind) {
    case ScenarioKind::kMatrix:
      RunMatrix(c);
      break;
    case ScenarioKind::kTsiScaling:
      RunTsiScaling(c);
      break;
    case ScenarioKind::kTciSharding:
      RunTciSharding(c);
      break;
    case ScenarioKind::kThroughputGrid:
      RunThroughputGrid(c);
      break;
    case ScenarioKind::kConcurrentModels:
      RunConcurrentModels(c);
      break;
    case ScenarioKind::kIdleBreakdown:
      RunIdleBreakdown(c);
      break;
    case ScenarioKind::kSharingModes:
      RunSharingModes(c);
      break;
    case ScenarioKind::kLongLivedVsFork:
      RunLongLivedVsFork(c);
      break;
  }
  return report;
}

}  // namespace tuneplex
