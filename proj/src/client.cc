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
#include "tuneplex/client.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace tuneplex {

using ojson = nlohmann::ordered_json;

void TuningJob::Validate() const {
  ValidateModelSpec(model);
  if (operator_ids.empty()) throw Error(ErrorCode::kInvalidArgument, "job has no operators");
  std::set<int> seen;
  for (int id : operator_ids) {
    model.Operator(id);
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::kInvalidArgument, "operator " + std::to_string(id) + " listed twice");
    }
  }
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (budget_per_operator < batch_size) {
    throw Error(ErrorCode::kInvalidArgument, "budget_per_operator must be >= batch_size");
  }
  if (early_stop && *early_stop < 0) {
    throw Error(ErrorCode::kInvalidArgument, "early-stop window must be >= 0");
  }
  if (repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be >= 1");
  MsToNanos(client_compute.build_ms_per_config);
  MsToNanos(client_compute.strategy_ms_per_batch);
}

// ---------------------------------------------------------------------------
// Logs

void TuningLog::Append(const TuningLogEntry& e) {
  auto key = std::make_pair(e.operator_id, e.configuration);
  if (seen_.count(key)) {
    throw Error(ErrorCode::kInvalidState, "operator " + std::to_string(e.operator_id) +
                                              " already has an entry for " +
                                              e.configuration.ToString());
  }
  seen_[key] = entries_.size();
  entries_.push_back(e);
}

std::string TuningLog::ToJsonLines() const {
  std::string out;
  for (const auto& e : entries_) {
    ojson j;
    j["operator_id"] = e.operator_id;
    j["configuration"] = ConfigurationToJson(e.configuration);
    j["mean_ms"] = e.mean_ms;
    j["tuned_gpu_percent"] = e.tuned_gpu_percent;
    j["timestamp_ns"] = e.timestamp;
    out += j.dump();
    out += '\n';
  }
  return out;
}

TuningLog TuningLog::FromJsonLines(const std::string& text) {
  TuningLog log;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TuningLogEntry e;
      e.operator_id = j.at("operator_id").get<int>();
      e.configuration = ConfigurationFromJson(j.at("configuration"));
      e.mean_ms = j.at("mean_ms").get<double>();
      e.tuned_gpu_percent = j.at("tuned_gpu_percent").get<int>();
      e.timestamp = j.at("timestamp_ns").get<Nanos>();
      log.Append(e);
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kInvalidArgument,
                  "tuning log line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return log;
}

void TuningLog::Save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << ToJsonLines();
}

TuningLog TuningLog::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return FromJsonLines(ss.str());
}

nlohmann::ordered_json TunedModel::ToJson() const {
  ojson j;
  j["model"] = model;
  j["operators"] = ojson::array();
  for (const auto& [id, e] : best) {
    ojson o;
    o["operator_id"] = id;
    o["configuration"] = ConfigurationToJson(e.configuration);
    o["mean_ms"] = e.mean_ms;
    o["tuned_gpu_percent"] = e.tuned_gpu_percent;
    j["operators"].push_back(std::move(o));
  }
  return j;
}

TunedModel TunedModel::FromJson(const nlohmann::json& j) {
  TunedModel tm;
  try {
    tm.model = j.at("model").get<std::string>();
    for (const auto& o : j.at("operators")) {
      TunedEntry e;
      e.configuration = ConfigurationFromJson(o.at("configuration"));
      e.mean_ms = o.at("mean_ms").get<double>();
      e.tuned_gpu_percent = o.at("tuned_gpu_percent").get<int>();
      const int id = o.at("operator_id").get<int>();
      if (!tm.best.emplace(id, e).second) {
        throw Error(ErrorCode::kInvalidArgument, "tuned model lists operator " +
                                                     std::to_string(id) + " twice");
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed tuned model: ") + ex.what());
  }
  return tm;
}

std::string TunedModel::Dump() const { return ToJson().dump(2) + "\n"; }

void TunedModel::Save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << Dump();
}

TunedModel TunedModel::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed tuned model: ") + ex.what());
  }
  return FromJson(j);
}

// ---------------------------------------------------------------------------
// Client state machine

struct SimClient::OperatorState {
  const OperatorSpec* op = nullptr;
  SearchSpace space;
  std::vector<FeatureVector> features;
  std::vector<bool> visited;
  std::size_t unvisited = 0;
  CostModel model;
  Explorer explorer;
  EarlyStopState early;
  std::uint64_t seed = 0;
  int measured = 0;
  int batch_index = 0;
  OperatorOutcome outcome;

  std::vector<ProfileRequest> requests;
  std::size_t next_to_issue = 0;
  std::size_t in_flight = 0;
  std::size_t completed = 0;
  std::vector<std::pair<FeatureVector, double>> samples;
  std::vector<double> batch_ms;
  std::vector<std::size_t> batch_index_of_slot;

  OperatorState(CostModelParams cm, ExplorerParams ex) : model(cm), explorer(ex) {}
};

SimClient::SimClient(EventLoop* loop, TrackerCore* tracker, RunnerDirectory runners, Trace* trace,
                     TuningJob job)
    : loop_(loop), tracker_(tracker), runners_(std::move(runners)), trace_(trace), job_(std::move(job)) {
  job_.Validate();
  result_.client = job_.client_name;
  if (trace_) trace_->Declare(component(), ComponentKind::kClient);
}

SimClient::~SimClient() = default;

void SimClient::Start(std::function<void(const JobResult&)> on_done) {
  on_done_ = std::move(on_done);
  loop_->At(job_.start_at, [this] {
    result_.started = loop_->now();
    BeginOperator();
  });
}

void SimClient::Fail(const std::string& why) {
  if (done_) return;
  result_.error = why;
  result_.finished = loop_->now();
  done_ = true;
  if (on_done_) on_done_(result_);
}

void SimClient::BeginOperator() {
  if (op_pos_ == job_.operator_ids.size()) {
    result_.finished = loop_->now();
    done_ = true;
    if (on_done_) on_done_(result_);
    return;
  }
  const int id = job_.operator_ids[op_pos_];
  op_ = std::make_unique<OperatorState>(job_.cost_model, job_.explorer);
  op_->op = &job_.model.Operator(id);
  op_->space = BuildSearchSpace(*op_->op);
  op_->features.reserve(op_->space.size());
  for (std::size_t i = 0; i < op_->space.size(); ++i) {
    op_->features.push_back(ConfigFeatures(op_->space, op_->space.At(i), *op_->op));
  }
  op_->visited.assign(op_->space.size(), false);
  op_->unvisited = op_->space.size();
  op_->early.window = job_.early_stop.value_or(0);
  op_->seed = MixSeed(job_.seed, static_cast<std::uint64_t>(id));
  op_->outcome.operator_id = id;
  op_->outcome.started = loop_->now();
  BeginBatch();
}

void SimClient::BeginBatch() {
  OperatorState& s = *op_;
  const int remaining = job_.budget_per_operator - s.measured;
  const std::size_t n = static_cast<std::size_t>(std::min(job_.batch_size, remaining));
  const Proposal p = ProposeBatch(&s.explorer, s.model, s.space, s.features, s.visited, n,
                                  MixSeed(s.seed, static_cast<std::uint64_t>(s.batch_index)));
  if (p.exhausted) s.outcome.exhausted = true;
  s.requests.clear();
  for (std::size_t idx : p.indices) {
    s.visited[idx] = true;
    --s.unvisited;
    const Configuration c = s.space.At(idx);
    const KernelDescriptor k = DescribeKernel(*s.op, c);
    ProfileRequest req;
    req.request_id = next_request_id_++;
    req.operator_id = s.op->id;
    req.configuration = c;
    req.total_threads = k.total_threads;
    req.total_work = k.total_work;
    req.efficiency = k.efficiency;
    req.max_threads = s.op->max_threads;
    req.min_threads = s.op->min_threads;
    req.repeats = job_.repeats;
    s.requests.push_back(std::move(req));
  }
  if (s.unvisited == 0) s.outcome.exhausted = true;
  const Nanos build =
      MsToNanos(job_.client_compute.build_ms_per_config * static_cast<double>(s.requests.size()));
  if (trace_) trace_->Add(component(), loop_->now(), loop_->now() + build, kBuild);
  loop_->After(build, [this] { Dispatch(); });
}

void SimClient::Dispatch() {
  OperatorState& s = *op_;
  s.next_to_issue = 0;
  s.in_flight = 0;
  s.completed = 0;
  s.samples.clear();
  s.batch_ms.clear();
  Pump();
}

void SimClient::Pump() {
  if (done_) return;
  OperatorState& s = *op_;
  const std::size_t window = tracker_->NumRunners(job_.device_key);
  if (window == 0) {
    if (s.in_flight > 0) return;
    if (waiting_since_ < 0) waiting_since_ = loop_->now();
    if (loop_->now() - waiting_since_ > job_.no_runner_timeout) {
      Fail("no runner registered under '" + job_.device_key + "' within the timeout");
      return;
    }
    loop_->After(1'000'000'000, [this] { Pump(); });
    return;
  }
  waiting_since_ = -1;
  while (s.next_to_issue < s.requests.size() && s.in_flight < window) {
    const std::size_t slot = s.next_to_issue++;
    ++s.in_flight;
    std::optional<Lease> lease;
    try {
      lease = tracker_->Acquire(job_.device_key, loop_->now(), [this, slot](const Lease& granted) {
        loop_->At(loop_->now(), [this, granted, slot] { OnLease(granted, slot); });
      });
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotFound) throw;
      // Every runner vanished between the count and the lease; retry later.
      --s.in_flight;
      --s.next_to_issue;
      loop_->After(1'000'000'000, [this] { Pump(); });
      return;
    }
    if (lease) OnLease(*lease, slot);
  }
}

void SimClient::OnLease(const Lease& lease, std::size_t slot) {
  OperatorState& s = *op_;
  const ProfileRequest& req = s.requests[slot];
  SimRunner* runner = runners_(lease.endpoint);
  ProfileResult result;
  result.request_id = req.request_id;
  Nanos start = loop_->now();
  Nanos finish = start;
  if (!runner) {
    result.status = ResultStatus::kServerError;
    result.error = "runner " + lease.endpoint + " is unreachable";
  } else {
    start = std::max(start, runner->busy_until());
    const std::string response = runner->ServeFrame(EncodeMessage(ProfileMsg{req}), start, &finish);
    const Message m = DecodeMessage(response);
    if (const auto* r = std::get_if<ResultMsg>(&m)) {
      result = r->result;
    } else {
      result.status = ResultStatus::kServerError;
      const auto* err = std::get_if<ErrorMsg>(&m);
      result.error = err ? err->message : "unexpected reply";
    }
  }
  const double busy_ms = NanosToMs(finish - loop_->now());
  loop_->At(finish, [this, slot, lease, result, busy_ms] {
    tracker_->Release(lease.lease_id, loop_->now(), busy_ms);
    OnResult(slot, lease, result, loop_->now());
  });
}

void SimClient::OnResult(std::size_t slot, const Lease& lease, const ProfileResult& r, Nanos finish) {
  if (done_) return;
  OperatorState& s = *op_;
  const ProfileRequest& req = s.requests[slot];
  if (r.request_id != req.request_id) {
    Fail("result " + std::to_string(r.request_id) + " does not match request " +
         std::to_string(req.request_id));
    return;
  }
  switch (r.status) {
    case ResultStatus::kOk: {
      TuningLogEntry e{req.operator_id, req.configuration, r.mean_ms, lease.percent, finish};
      result_.log.Append(e);
      const std::size_t idx = s.space.IndexOf(req.configuration);
      s.samples.emplace_back(s.features[idx], r.mean_ms);
      s.batch_ms.push_back(r.mean_ms);
      const auto& best = s.outcome.best;
      if (!best || r.mean_ms < best->mean_ms ||
          (r.mean_ms == best->mean_ms && req.configuration < best->configuration)) {
        s.outcome.best = e;
      }
      break;
    }
    case ResultStatus::kInvalidConfig:
      ++s.outcome.invalid;
      break;
    case ResultStatus::kServerError:
      ++s.outcome.failed;
      break;
  }
  --s.in_flight;
  ++s.completed;
  if (s.completed == s.requests.size()) {
    FinishBatch();
  } else {
    Pump();
  }
}

void SimClient::FinishBatch() {
  OperatorState& s = *op_;
  s.measured += static_cast<int>(s.requests.size());
  s.outcome.measured = s.measured;
  ++s.outcome.batches;
  ++s.batch_index;
  if (!s.samples.empty()) s.model.Fit(s.samples);
  bool stop = false;
  if (job_.early_stop) stop = ObserveAndCheckStop(&s.early, s.batch_ms);
  s.outcome.early_stopped = stop;
  const Nanos strategy = MsToNanos(job_.client_compute.strategy_ms_per_batch);
  if (trace_) trace_->Add(component(), loop_->now(), loop_->now() + strategy, kStrategy);
  loop_->After(strategy, [this, stop] {
    OperatorState& st = *op_;
    if (stop || st.measured >= job_.budget_per_operator || st.unvisited == 0) {
      FinishOperator();
    } else {
      BeginBatch();
    }
  });
}

void SimClient::FinishOperator() {
  OperatorState& s = *op_;
  s.outcome.finished = loop_->now();
  if (!s.outcome.best) {
    Fail("operator " + std::to_string(s.op->id) +
         " produced no valid measurement (every result was invalid_config or failed)");
    return;
  }
  result_.operators.push_back(s.outcome);
  ++op_pos_;
  BeginOperator();
}

// ---------------------------------------------------------------------------
// Sharding, merging, inference

std::vector<std::vector<int>> ShardOperators(const ModelSpec& model, int k) {
  const int n = static_cast<int>(model.operators.size());
  if (k < 1 || k > n) {
    throw Error(ErrorCode::kInvalidArgument, "shard count " + std::to_string(k) +
                                                 " must be in [1, " + std::to_string(n) + "]");
  }
  std::vector<std::vector<int>> shards(k);
  const auto ids = model.OperatorIds();
  int pos = 0;
  for (int s = 0; s < k; ++s) {
    const int size = n / k + (s < n % k ? 1 : 0);
    for (int i = 0; i < size; ++i) shards[s].push_back(ids[pos++]);
  }
  return shards;
}

TunedModel MergeLogs(const std::vector<TuningLog>& logs, const ModelSpec& model) {
  TunedModel tm;
  tm.model = model.name;
  for (const auto& log : logs) {
    for (const auto& e : log.entries()) {
      model.Operator(e.operator_id);
      auto it = tm.best.find(e.operator_id);
      if (it == tm.best.end() || e.mean_ms < it->second.mean_ms ||
          (e.mean_ms == it->second.mean_ms && e.configuration < it->second.configuration)) {
        tm.best[e.operator_id] = TunedEntry{e.configuration, e.mean_ms, e.tuned_gpu_percent};
      }
    }
  }
  std::vector<int> missing;
  for (const auto& op : model.operators) {
    if (!tm.best.count(op.id)) missing.push_back(op.id);
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "logs do not cover operator";
    if (missing.size() > 1) os << "s";
    for (std::size_t i = 0; i < missing.size(); ++i) os << (i ? ", " : " ") << missing[i];
    throw Error(ErrorCode::kInvalidArgument, os.str());
  }
  return tm;
}

InferenceEstimate EvaluateInference(const TunedModel& tm, const ModelSpec& model,
                                    const GpuParams& gpu, int gpu_percent, std::int64_t images) {
  const std::int64_t resident = ResidentThreads(gpu, gpu_percent);
  if (images < 0) throw Error(ErrorCode::kInvalidArgument, "image count must be >= 0");
  InferenceEstimate est;
  for (const auto& op : model.operators) {
    auto it = tm.best.find(op.id);
    if (it == tm.best.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "tuned model has no entry for operator " + std::to_string(op.id));
    }
    est.per_image_ms += KernelLatency(gpu, resident, DescribeKernel(op, it->second.configuration));
  }
  est.total_s = est.per_image_ms * static_cast<double>(images) / 1000.0;
  return est;
}

TunedModel UntunedBaseline(const ModelSpec& model, const GpuParams& gpu) {
  TunedModel tm;
  tm.model = model.name;
  const std::int64_t resident = ResidentThreads(gpu, 100);
  for (const auto& op : model.operators) {
    const SearchSpace space = BuildSearchSpace(op);
    std::optional<TunedEntry> worst;
    for (std::size_t i = 0; i < space.size(); ++i) {
      const Configuration c = space.At(i);
      if (!Launchable(op, c)) continue;
      const double ms = KernelLatency(gpu, resident, DescribeKernel(op, c));
      if (!worst || ms > worst->mean_ms) worst = TunedEntry{c, ms, 100};
    }
    tm.best[op.id] = *worst;
  }
  return tm;
}

Configuration OracleBest(const OperatorSpec& op, const GpuParams& gpu, int gpu_percent) {
  const SearchSpace space = BuildSearchSpace(op);
  const std::int64_t resident = ResidentThreads(gpu, gpu_percent);
  std::optional<Configuration> best;
  double best_ms = 0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const Configuration c = space.At(i);
    if (!Launchable(op, c)) continue;
    const double ms = KernelLatency(gpu, resident, DescribeKernel(op, c));
    if (!best || ms < best_ms) {
      best = c;
      best_ms = ms;
    }
  }
  return *best;
}

}  // namespace tuneplex
