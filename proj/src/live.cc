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
#include "tuneplex/live.h"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <set>
#include <thread>

namespace tuneplex {

namespace {

/*! \brief Lets a server bind before the handler behind it knows its own endpoint. */
class Deferred : public FrameHandler {
 public:
  void Set(FrameHandler* target) {
    std::lock_guard<std::mutex> lock(mu_);
    target_ = target;
  }
  std::string HandleFrame(const std::string& frame) override {
    FrameHandler* target = nullptr;
    {
      std::lock_guard<std::mutex> lock(mu_);
      target = target_;
    }
    if (!target) {
      return EncodeMessage(MakeErrorMsg(Error(ErrorCode::kInvalidState, "runner is starting")));
    }
    return target->HandleFrame(frame);
  }

 private:
  std::mutex mu_;
  FrameHandler* target_ = nullptr;
};

template <typename T>
T Expect(const Message& m, const char* what) {
  if (const auto* v = std::get_if<T>(&m)) return *v;
  if (const auto* e = std::get_if<ErrorMsg>(&m)) {
    throw Error(ErrorCode::kProtocol, std::string(what) + " failed: " + e->message);
  }
  throw Error(ErrorCode::kProtocol, std::string(what) + ": unexpected " + MessageTypeName(m));
}

std::unique_ptr<TcpChannel> Connect(const std::string& endpoint) {
  const auto [host, port] = ParseEndpoint(endpoint);
  return std::make_unique<TcpChannel>(host, port);
}

ProfileRequest MakeRequest(const OperatorSpec& op, const Configuration& c, std::uint64_t id,
                           int repeats) {
  const KernelDescriptor k = DescribeKernel(op, c);
  ProfileRequest req;
  req.request_id = id;
  req.operator_id = op.id;
  req.configuration = c;
  req.total_threads = k.total_threads;
  req.total_work = k.total_work;
  req.efficiency = k.efficiency;
  req.max_threads = op.max_threads;
  req.min_threads = op.min_threads;
  req.repeats = repeats;
  return req;
}

/*! \brief One worker's connections: the tracker plus one channel per runner seen. */
struct Session {
  explicit Session(const std::string& tracker) : tracker(Connect(tracker)) {}

  ProfileResult Run(const std::string& key, const std::string& client, const ProfileRequest& req,
                    LeaseGrantMsg* grant_out = nullptr,
                    const std::function<void(const LeaseGrantMsg&, bool)>& on_lease = nullptr) {
    const auto grant = Expect<LeaseGrantMsg>(tracker->Call(LeaseMsg{key, client}), "lease");
    if (grant_out) *grant_out = grant;
    if (on_lease) on_lease(grant, true);
    ProfileResult result;
    try {
      auto it = runners.find(grant.endpoint);
      if (it == runners.end()) it = runners.emplace(grant.endpoint, Connect(grant.endpoint)).first;
      const Message reply = it->second->Call(ProfileMsg{req});
      if (const auto* r = std::get_if<ResultMsg>(&reply)) {
        result = r->result;
      } else {
        result.request_id = req.request_id;
        result.status = ResultStatus::kServerError;
        const auto* e = std::get_if<ErrorMsg>(&reply);
        result.error = e ? e->message : "unexpected reply";
      }
    } catch (const Error& e) {
      result.request_id = req.request_id;
      result.status = ResultStatus::kServerError;
      result.error = e.what();
    }
    if (on_lease) on_lease(grant, false);
    Expect<HeartbeatMsg>(tracker->Call(ReleaseMsg{grant.lease_id, result.mean_ms}), "release");
    return result;
  }

  std::unique_ptr<TcpChannel> tracker;
  std::map<std::string, std::unique_ptr<TcpChannel>> runners;
};

}  // namespace

struct LiveCluster::RunnerSlot {
  Deferred shim;
  std::unique_ptr<TcpServer> server;
  std::unique_ptr<SimRunner> runner;
  std::unique_ptr<RunnerService> service;
};

LiveCluster::LiveCluster(LiveClusterOptions opts) : opts_(std::move(opts)), gpu_(opts_.gpu) {}

LiveCluster::~LiveCluster() { Stop(); }

void LiveCluster::Start() {
  if (started_) throw Error(ErrorCode::kInvalidState, "cluster already started");
  tracker_service_ = std::make_unique<TrackerService>(&core_, opts_.lease_timeout);
  tracker_server_ = std::make_unique<TcpServer>(tracker_service_.get());
  tracker_server_->Start();
  started_ = true;
  for (const RunnerConfig& base : opts_.runners) {
    auto slot = std::make_unique<RunnerSlot>();
    slot->server = std::make_unique<TcpServer>(&slot->shim);
    slot->server->Start();
    RunnerConfig cfg = base;
    cfg.endpoint = slot->server->endpoint();
    slot->runner = std::make_unique<SimRunner>(cfg, &gpu_);
    slot->runner->Start(0);
    slot->service = std::make_unique<RunnerService>(slot->runner.get(), opts_.time_scale);
    slot->shim.Set(slot->service.get());
    auto channel = Connect(tracker_server_->endpoint());
    Expect<HeartbeatMsg>(channel->Call(RegisterMsg{cfg.device_key, cfg.endpoint,
                                                   cfg.partition_percent, cfg.mode}),
                         "register");
    runners_.push_back(std::move(slot));
  }
}

void LiveCluster::Stop() {
  if (!started_) return;
  started_ = false;
  for (auto& slot : runners_) slot->server->Stop();
  if (tracker_server_) tracker_server_->Stop();
  runners_.clear();
}

std::string LiveCluster::tracker_endpoint() const {
  if (!tracker_server_) throw Error(ErrorCode::kInvalidState, "cluster not started");
  return tracker_server_->endpoint();
}

std::vector<std::string> LiveCluster::runner_endpoints() const {
  std::vector<std::string> out;
  for (const auto& slot : runners_) out.push_back(slot->server->endpoint());
  return out;
}

SimRunner* LiveCluster::runner(const std::string& endpoint) const {
  for (const auto& slot : runners_) {
    if (slot->server->endpoint() == endpoint) return slot->runner.get();
  }
  return nullptr;
}

LiveTuneResult LiveTune(const std::string& tracker_endpoint, const TuningJob& job) {
  job.Validate();
  LiveTuneResult out;
  std::size_t window = 0;
  {
    auto tracker = Connect(tracker_endpoint);
    const auto status = Expect<StatusReplyMsg>(tracker->Call(StatusMsg{}), "status");
    for (const auto& e : status.entries) {
      if (e.device_key == job.device_key) ++window;
    }
  }
  if (window == 0) {
    throw Error(ErrorCode::kNotFound, "no runner registered under '" + job.device_key + "'");
  }
  std::vector<std::unique_ptr<Session>> sessions;
  for (std::size_t i = 0; i < window; ++i) {
    sessions.push_back(std::make_unique<Session>(tracker_endpoint));
  }

  std::uint64_t next_id = 1;
  const auto start = std::chrono::steady_clock::now();
  for (int id : job.operator_ids) {
    const OperatorSpec& op = job.model.Operator(id);
    const SearchSpace space = BuildSearchSpace(op);
    std::vector<FeatureVector> features;
    for (std::size_t i = 0; i < space.size(); ++i) {
      features.push_back(ConfigFeatures(space, space.At(i), op));
    }
    std::vector<bool> visited(space.size(), false);
    std::size_t unvisited = space.size();
    CostModel model(job.cost_model);
    Explorer explorer(job.explorer);
    std::vector<std::pair<FeatureVector, double>> samples;
    const std::uint64_t op_seed = MixSeed(job.seed, static_cast<std::uint64_t>(id));
    int measured = 0;
    for (int batch = 0; measured < job.budget_per_operator && unvisited > 0; ++batch) {
      const std::size_t n =
          static_cast<std::size_t>(std::min(job.batch_size, job.budget_per_operator - measured));
      const Proposal p = ProposeBatch(&explorer, model, space, features, visited, n,
                                      MixSeed(op_seed, static_cast<std::uint64_t>(batch)));
      std::vector<ProfileRequest> requests;
      for (std::size_t idx : p.indices) {
        visited[idx] = true;
        --unvisited;
        requests.push_back(MakeRequest(op, space.At(idx), next_id++, job.repeats));
      }
      std::vector<ProfileResult> results(requests.size());
      std::atomic<std::size_t> cursor{0};
      std::vector<std::thread> workers;
      std::mutex err_mu;
      std::optional<std::string> err;
      for (std::size_t w = 0; w < window; ++w) {
        workers.emplace_back([&, w] {
          try {
            for (std::size_t i = cursor++; i < requests.size(); i = cursor++) {
              results[i] = sessions[w]->Run(job.device_key, job.client_name, requests[i]);
            }
          } catch (const Error& e) {
            std::lock_guard<std::mutex> lock(err_mu);
            err = e.what();
          }
        });
      }
      for (auto& t : workers) t.join();
      if (err) throw Error(ErrorCode::kIo, "live dispatch failed: " + *err);

      for (std::size_t i = 0; i < requests.size(); ++i) {
        const auto& req = requests[i];
        const auto& r = results[i];
        ++out.requests;
        if (r.request_id != req.request_id) {
          throw Error(ErrorCode::kProtocol, "result attributed to the wrong request");
        }
        if (r.status != ResultStatus::kOk) {
          ++out.failed;
          continue;
        }
        const auto ts = std::chrono::duration_cast<std::chrono::nanoseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count();
        TuningLogEntry e{id, req.configuration, r.mean_ms, 0, ts};
        out.log.Append(e);
        samples.emplace_back(features[space.IndexOf(req.configuration)], r.mean_ms);
        auto it = out.best.find(id);
        if (it == out.best.end() || r.mean_ms < it->second.mean_ms ||
            (r.mean_ms == it->second.mean_ms && req.configuration < it->second.configuration)) {
          out.best[id] = e;
        }
      }
      measured += static_cast<int>(requests.size());
      if (!samples.empty()) model.Fit(samples);
    }
  }
  return out;
}

SoakStats RunSoak(const std::string& tracker_endpoint, const std::string& device_key,
                  const ModelSpec& model, int clients, int requests_per_client,
                  std::uint64_t seed) {
  if (clients < 1 || requests_per_client < 0) {
    throw Error(ErrorCode::kInvalidArgument, "soak needs clients >= 1 and requests >= 0");
  }
  std::vector<std::pair<const OperatorSpec*, SearchSpace>> spaces;
  for (const auto& op : model.operators) spaces.emplace_back(&op, BuildSearchSpace(op));

  std::mutex mu;
  std::set<std::string> leased;
  SoakStats total;
  std::atomic<std::uint64_t> next_id{1};
  std::vector<std::thread> threads;
  for (int c = 0; c < clients; ++c) {
    threads.emplace_back([&, c] {
      SoakStats local;
      Rng rng(MixSeed(seed, static_cast<std::uint64_t>(c)));
      auto on_lease = [&](const LeaseGrantMsg& g, bool acquired) {
        std::lock_guard<std::mutex> lock(mu);
        if (acquired) {
          if (!leased.insert(g.endpoint).second) ++local.double_leases;
        } else {
          leased.erase(g.endpoint);
        }
      };
      try {
        Session session(tracker_endpoint);
        for (int i = 0; i < requests_per_client; ++i) {
          const auto& [op, space] = spaces[rng.Below(spaces.size())];
          const auto req =
              MakeRequest(*op, space.At(rng.Below(space.size())), next_id++, 1);
          const auto r =
              session.Run(device_key, "soak" + std::to_string(c), req, nullptr, on_lease);
          ++local.requests;
          if (r.request_id != req.request_id) ++local.mismatched;
          if (r.status == ResultStatus::kOk) ++local.ok;
          if (r.status == ResultStatus::kServerError) ++local.errors;
        }
      } catch (const Error&) {
        ++local.errors;
      }
      std::lock_guard<std::mutex> lock(mu);
      total.requests += local.requests;
      total.ok += local.ok;
      total.errors += local.errors;
      total.mismatched += local.mismatched;
      total.double_leases += local.double_leases;
    });
  }
  for (auto& t : threads) t.join();
  return total;
}

}  // namespace tuneplex
