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
#include "tuneplex/runner.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

namespace tuneplex {

void RunnerConfig::Validate() const {
  if (endpoint.empty()) throw Error(ErrorCode::kInvalidArgument, "runner endpoint is empty");
  if (partition_percent < 1 || partition_percent > 100) {
    throw Error(ErrorCode::kInvalidArgument, "partition_percent must be in [1, 100]");
  }
  if (repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be >= 1");
  if (!std::isfinite(service_overhead_ms) || service_overhead_ms < 0) {
    throw Error(ErrorCode::kInvalidArgument, "service_overhead_ms must be >= 0");
  }
}

SimRunner::SimRunner(RunnerConfig cfg, SimGpu* gpu, Trace* trace)
    : cfg_(std::move(cfg)), gpu_(gpu), trace_(trace) {
  cfg_.Validate();
}

SimRunner::~SimRunner() {
  try {
    Stop();
  } catch (const Error&) {
  }
}

Nanos SimRunner::Start(Nanos now) {
  if (started_) throw Error(ErrorCode::kInvalidState, "runner " + cfg_.endpoint + " already started");
  partition_ = gpu_->CreatePartition(cfg_.partition_percent);
  started_ = true;
  if (trace_) {
    trace_->Declare(runner_component(), ComponentKind::kRunner);
    trace_->Declare(gpu_component(), ComponentKind::kGpu, partition_.sm_alloc);
  }
  Nanos t = now;
  if (cfg_.mode == RunnerMode::kLongLived) {
    context_ = gpu_->AcquireContext(partition_.id, &t);
    Record(runner_component(), now, t, kContext);
    Record(gpu_component(), now, t, kContext);
  }
  busy_until_ = t;
  return t;
}

void SimRunner::Stop() {
  if (!started_) return;
  started_ = false;
  if (context_) gpu_->ReleaseContext(&*context_);
  context_.reset();
  if (gpu_->HasPartition(partition_.id)) gpu_->DestroyPartition(partition_.id);
}

void SimRunner::Record(const std::string& component, Nanos start, Nanos end, const char* kind) {
  if (trace_) trace_->Add(component, start, end, kind);
}

std::optional<std::string> SimRunner::Validate(const ProfileRequest& req) const {
  static const std::vector<std::int64_t> kBlocks = {64, 128, 256, 512, 1024};
  const auto& a = req.configuration.assignment;
  for (const char* knob : {kBlockSize, kGridBlocks, kTile, kUnroll}) {
    if (!a.count(knob)) return std::string("missing knob ") + knob;
  }
  if (a.size() != 4) return std::string("unexpected knob in configuration");
  const std::int64_t block = a.at(kBlockSize);
  const std::int64_t grid = a.at(kGridBlocks);
  if (std::find(kBlocks.begin(), kBlocks.end(), block) == kBlocks.end()) {
    return "block_size " + std::to_string(block) + " is not launchable";
  }
  if (grid < 1) return std::string("grid_blocks must be positive");
  double efficiency = 0;
  try {
    efficiency = TilePenalty(a.at(kTile)) * UnrollPenalty(a.at(kUnroll));
  } catch (const Error& e) {
    return std::string(e.what());
  }
  if (req.total_threads != block * grid) return std::string("total_threads does not match knobs");
  if (req.total_threads > req.max_threads) {
    return "total_threads " + std::to_string(req.total_threads) + " exceeds max_threads " +
           std::to_string(req.max_threads);
  }
  if (req.total_threads < req.min_threads) {
    return "total_threads " + std::to_string(req.total_threads) + " below min_threads " +
           std::to_string(req.min_threads);
  }
  if (req.efficiency != efficiency) return std::string("efficiency does not match knobs");
  if (!(req.total_work > 0)) return std::string("total_work must be positive");
  return std::nullopt;
}

ServeOutcome SimRunner::Serve(const ProfileRequest& req, Nanos start) {
  if (!started_) throw Error(ErrorCode::kInvalidState, "runner " + cfg_.endpoint + " not started");
  if (start < busy_until_) {
    throw Error(ErrorCode::kInvalidState, "runner " + cfg_.endpoint + " is already serving");
  }
  ServeOutcome out;
  out.result.request_id = req.request_id;
  if (crashed_) {
    out.result.status = ResultStatus::kServerError;
    out.result.error = "runner " + cfg_.endpoint + " crashed";
    out.finish = start;
    return out;
  }
  Nanos t = start;
  const Nanos service = MsToNanos(cfg_.service_overhead_ms);
  Record(runner_component(), t, t + service, kService);
  t += service;

  const auto invalid = Validate(req);
  std::optional<GpuContext> child;
  if (cfg_.mode == RunnerMode::kForkPerRequest) {
    const Nanos before = t;
    child = gpu_->AcquireContext(partition_.id, &t);
    Record(runner_component(), before, t, kContext);
    Record(gpu_component(), before, t, kContext);
  }
  const GpuContext& ctx = child ? *child : *context_;
  if (invalid) {
    out.result.status = ResultStatus::kInvalidConfig;
    out.result.error = *invalid;
  } else {
    const KernelDescriptor k{req.total_threads, req.total_work, req.efficiency};
    const int repeats = req.repeats >= 1 ? req.repeats : cfg_.repeats;
    const Nanos before = t;
    gpu_->BeginKernel();
    try {
      const Measurement m = gpu_->RunKernel(ctx, k, repeats, &t);
      gpu_->EndKernel();
      out.result.status = ResultStatus::kOk;
      out.result.mean_ms = m.mean_ms;
      out.result.std_ms = m.std_ms;
    } catch (const Error& e) {
      // Fault containment: the child (or the long-lived server's handler) absorbs it.
      gpu_->EndKernel();
      out.result.status = ResultStatus::kInvalidConfig;
      out.result.error = e.what();
    }
    Record(runner_component(), before, t, kProfiling);
    Record(gpu_component(), before, t, kProfiling);
  }
  if (child) gpu_->ReleaseContext(&*child);
  ++served_;
  busy_until_ = t;
  out.finish = t;
  return out;
}

std::string SimRunner::ServeFrame(const std::string& frame, Nanos start, Nanos* finish) {
  *finish = start;
  try {
    const Message m = DecodeMessage(frame);
    const auto* p = std::get_if<ProfileMsg>(&m);
    if (!p) {
      throw Error(ErrorCode::kProtocol,
                  std::string("runner does not accept ") + MessageTypeName(m) + " frames");
    }
    ServeOutcome out = Serve(p->request, start);
    *finish = out.finish;
    return EncodeMessage(ResultMsg{out.result});
  } catch (const Error& e) {
    return EncodeMessage(MakeErrorMsg(e));
  }
}

RunnerService::RunnerService(SimRunner* runner, double time_scale)
    : runner_(runner), time_scale_(time_scale), clock_(runner->busy_until()) {}

std::string RunnerService::HandleFrame(const std::string& frame) {
  std::lock_guard<std::mutex> lock(mu_);
  // A long-lived runner is still creating its context when the service comes up.
  clock_ = std::max(clock_, runner_->busy_until());
  Nanos finish = clock_;
  std::string response = runner_->ServeFrame(frame, clock_, &finish);
  const Nanos spent = finish - clock_;
  clock_ = finish;
  std::this_thread::sleep_for(
      std::chrono::nanoseconds(static_cast<std::int64_t>(static_cast<double>(spent) * time_scale_)));
  return response;
}

Supervisor::Supervisor(TrackerCore* tracker, SimGpu* gpu, Trace* trace, SupervisorParams params)
    : tracker_(tracker), gpu_(gpu), trace_(trace), params_(params) {
  if (params_.poll_interval <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "poll interval must be positive");
  }
}

SimRunner* Supervisor::Spawn(const RunnerConfig& cfg, Nanos now) {
  if (runners_.count(cfg.endpoint)) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint " + cfg.endpoint + " already registered");
  }
  auto runner = std::make_unique<SimRunner>(cfg, gpu_, trace_);
  runner->Start(now);
  try {
    tracker_->Register(RegisterMsg{cfg.device_key, cfg.endpoint, cfg.partition_percent, cfg.mode},
                       now);
  } catch (...) {
    runner->Stop();
    throw;
  }
  SimRunner* raw = runner.get();
  runners_[cfg.endpoint] = std::move(runner);
  return raw;
}

SimRunner* Supervisor::Find(const std::string& endpoint) const {
  auto it = runners_.find(endpoint);
  return it == runners_.end() ? nullptr : it->second.get();
}

std::vector<SimRunner*> Supervisor::runners() const {
  std::vector<SimRunner*> out;
  for (const auto& [endpoint, r] : runners_) out.push_back(r.get());
  return out;
}

void Supervisor::Crash(const std::string& endpoint) {
  SimRunner* r = Find(endpoint);
  if (!r) throw Error(ErrorCode::kNotFound, "no runner at " + endpoint);
  if (r->crashed()) return;
  r->InjectCrash();
  tracker_->Deregister(endpoint);
}

int Supervisor::Poll(Nanos now) {
  int respawned = 0;
  std::vector<std::string> dead;
  for (const auto& [endpoint, r] : runners_) {
    if (r->crashed()) dead.push_back(endpoint);
  }
  for (const auto& endpoint : dead) {
    respawns_.push_back(now);
    const auto recent = std::count_if(respawns_.begin(), respawns_.end(), [&](Nanos t) {
      return t > now - params_.storm_window;
    });
    if (recent > params_.max_respawns) {
      std::ostringstream os;
      os << "respawn storm: " << recent << " respawns within " << NanosToMs(params_.storm_window) / 1000
         << " s (limit " << params_.max_respawns << "), last for " << endpoint;
      throw Error(ErrorCode::kAborted, os.str());
    }
    std::unique_ptr<SimRunner> old = std::move(runners_[endpoint]);
    runners_.erase(endpoint);
    const RunnerConfig cfg = old->config();
    // The replacement cannot start before the dead process's last recorded work.
    const Nanos start = std::max(now, old->busy_until());
    old->Stop();
    retired_.push_back(std::move(old));
    Spawn(cfg, start);
    ++respawned;
  }
  return respawned;
}

void Supervisor::StartPolling(EventLoop* loop) {
  if (polling_) return;
  polling_ = true;
  SchedulePoll(loop);
}

void Supervisor::SchedulePoll(EventLoop* loop) {
  loop->After(params_.poll_interval, [this, loop] {
    if (!polling_) return;
    Poll(loop->now());
    SchedulePoll(loop);
  });
}

}  // namespace tuneplex
