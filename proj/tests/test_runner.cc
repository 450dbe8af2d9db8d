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
#include <gtest/gtest.h>

#include "tuneplex/devicesim.h"
#include "tuneplex/event_loop.h"
#include "tuneplex/metrics.h"
#include "tuneplex/runner.h"
#include "tuneplex/tracker.h"

using namespace tuneplex;

namespace {

const ModelSpec& Resnet() {
  static const ModelSpec m = LoadModelSpec(kResnet18Like);
  return m;
}

ProfileRequest Request(const OperatorSpec& op, std::int64_t block, std::int64_t grid,
                       std::uint64_t id = 1) {
  Configuration c;
  c.assignment = {{kBlockSize, block}, {kGridBlocks, grid}, {kTile, 2}, {kUnroll, 2}};
  const KernelDescriptor k = DescribeKernel(op, c);
  ProfileRequest r;
  r.request_id = id;
  r.operator_id = op.id;
  r.configuration = c;
  r.total_threads = k.total_threads;
  r.total_work = k.total_work;
  r.efficiency = k.efficiency;
  r.max_threads = op.max_threads;
  r.min_threads = op.min_threads;
  r.repeats = 3;
  return r;
}

RunnerConfig Cfg(const std::string& ep, RunnerMode mode, int pct = 100, double service = 0) {
  RunnerConfig c;
  c.endpoint = ep;
  c.partition_percent = pct;
  c.mode = mode;
  c.service_overhead_ms = service;
  return c;
}

}  // namespace

TEST(Runner, ConfigValidation) {
  SimGpu gpu;
  EXPECT_THROW(SimRunner(Cfg("", RunnerMode::kLongLived), &gpu), Error);
  EXPECT_THROW(SimRunner(Cfg("a", RunnerMode::kLongLived, 0), &gpu), Error);
  EXPECT_THROW(SimRunner(Cfg("a", RunnerMode::kLongLived, 100, -1), &gpu), Error);
}

TEST(Runner, ForkPaysContextPerRequest) {
  SimGpu gpu;
  SimRunner r(Cfg("a", RunnerMode::kForkPerRequest, 100, 10), &gpu);
  EXPECT_EQ(r.Start(0), 0);
  const auto& op = Resnet().Operator(1);
  const ProfileRequest req = Request(op, 1024, 160);
  const double kernel = KernelLatency(gpu.params(), 163840, DescribeKernel(op, req.configuration));
  const ServeOutcome out = r.Serve(req, 0);
  ASSERT_EQ(out.result.status, ResultStatus::kOk);
  EXPECT_EQ(out.result.mean_ms, kernel);
  EXPECT_EQ(out.finish, MsToNanos(10) + MsToNanos(300) + 3 * MsToNanos(kernel));
  EXPECT_EQ(gpu.Ledger(r.partition().id).context_acquisitions, 1);
}

TEST(Runner, LongLivedPaysContextOnce) {
  SimGpu gpu;
  SimRunner r(Cfg("a", RunnerMode::kLongLived, 100, 10), &gpu);
  EXPECT_EQ(r.Start(0), MsToNanos(300));
  const auto& op = Resnet().Operator(1);
  Nanos t = r.busy_until();
  for (int i = 0; i < 5; ++i) t = r.Serve(Request(op, 512, 320, i), t).finish;
  EXPECT_EQ(gpu.Ledger(r.partition().id).context_acquisitions, 1);
  EXPECT_EQ(r.requests_served(), 5);
}

// Property: for any request count, the device-time saving of a long-lived runner is
// exactly (requests - 1) context creations.
TEST(Runner, LongLivedSavingIsExact) {
  for (int n : {1, 2, 7, 100, 1000}) {
    SimGpu fork_gpu, ll_gpu;
    SimRunner fork(Cfg("f", RunnerMode::kForkPerRequest), &fork_gpu);
    SimRunner ll(Cfg("l", RunnerMode::kLongLived), &ll_gpu);
    Nanos tf = fork.Start(0), tl = ll.Start(0);
    for (int i = 0; i < n; ++i) {
      const auto& op = Resnet().operators[i % Resnet().operators.size()];
      const std::int64_t grid = op.weight_class == WeightClass::kHeavy ? 40 : 16;
      tf = fork.Serve(Request(op, 128, grid, i), tf).finish;
      tl = ll.Serve(Request(op, 128, grid, i), tl).finish;
    }
    const PartitionLedger a = fork_gpu.TotalLedger(), b = ll_gpu.TotalLedger();
    EXPECT_EQ(a.profiling, b.profiling) << n;
    EXPECT_EQ(a.context - b.context, static_cast<Nanos>(n - 1) * 300'000'000) << n;
    EXPECT_EQ(tf - tl, static_cast<Nanos>(n - 1) * 300'000'000) << n;
  }
}

TEST(Runner, InvalidConfigsAreContained) {
  SimGpu gpu;
  SimRunner r(Cfg("a", RunnerMode::kLongLived), &gpu);
  Nanos t = r.Start(0);
  const auto& light = Resnet().Operator(2);
  const ModelSpec vgg_model = LoadModelSpec(kVgg19Like);
  const auto& vgg = vgg_model.Operator(1);

  std::vector<ProfileRequest> bad;
  bad.push_back(Request(light, 1024, 16));  // 16384 > light cap
  bad.push_back(Request(vgg, 1024, 120));   // below the VGG floor
  auto b = Request(light, 64, 16);
  b.configuration.assignment[kBlockSize] = 96;
  b.total_threads = 96 * 16;
  bad.push_back(b);
  b = Request(light, 64, 16);
  b.total_threads += 1;
  bad.push_back(b);
  b = Request(light, 64, 16);
  b.efficiency = 0.5;
  bad.push_back(b);
  b = Request(light, 64, 16);
  b.configuration.assignment.erase(kTile);
  bad.push_back(b);
  b = Request(light, 64, 16);
  b.configuration.assignment[kTile] = 9;
  bad.push_back(b);

  for (const auto& req : bad) {
    const ServeOutcome out = r.Serve(req, t);
    EXPECT_EQ(out.result.status, ResultStatus::kInvalidConfig) << req.configuration.ToString();
    EXPECT_FALSE(out.result.error.empty());
    t = out.finish;
  }
  EXPECT_EQ(r.Serve(Request(light, 64, 16), t).result.status, ResultStatus::kOk);
  EXPECT_EQ(gpu.Ledger(r.partition().id).kernel_runs, 1);
}

TEST(Runner, ForkInvalidStillCreatesChild) {
  SimGpu gpu;
  SimRunner r(Cfg("a", RunnerMode::kForkPerRequest), &gpu);
  r.Start(0);
  const ServeOutcome out = r.Serve(Request(Resnet().Operator(2), 1024, 16), 0);
  EXPECT_EQ(out.result.status, ResultStatus::kInvalidConfig);
  EXPECT_EQ(out.finish, MsToNanos(300));
}

TEST(Runner, StateErrors) {
  SimGpu gpu;
  SimRunner r(Cfg("a", RunnerMode::kLongLived), &gpu);
  EXPECT_THROW(r.Serve(Request(Resnet().Operator(1), 64, 16), 0), Error);
  const Nanos ready = r.Start(0);
  EXPECT_THROW(r.Start(0), Error);
  EXPECT_THROW(r.Serve(Request(Resnet().Operator(1), 64, 16), ready - 1), Error);
}

TEST(Runner, CrashReportsServerError) {
  SimGpu gpu;
  SimRunner r(Cfg("a", RunnerMode::kLongLived), &gpu);
  const Nanos t = r.Start(0);
  r.InjectCrash();
  const ServeOutcome out = r.Serve(Request(Resnet().Operator(1), 64, 16, 42), t);
  EXPECT_EQ(out.result.status, ResultStatus::kServerError);
  EXPECT_EQ(out.result.request_id, 42u);
}

TEST(Runner, FrameInterface) {
  SimGpu gpu;
  SimRunner r(Cfg("a", RunnerMode::kLongLived), &gpu);
  const Nanos t = r.Start(0);
  Nanos finish = 0;
  const Message ok = DecodeMessage(
      r.ServeFrame(EncodeMessage(ProfileMsg{Request(Resnet().Operator(1), 64, 16, 9)}), t, &finish));
  ASSERT_TRUE(std::holds_alternative<ResultMsg>(ok));
  EXPECT_EQ(std::get<ResultMsg>(ok).result.request_id, 9u);
  EXPECT_GT(finish, t);
  const Message err = DecodeMessage(r.ServeFrame(EncodeMessage(StatusMsg{}), finish, &finish));
  ASSERT_TRUE(std::holds_alternative<ErrorMsg>(err));
  EXPECT_EQ(std::get<ErrorMsg>(err).code, "protocol");
  const Message junk = DecodeMessage(r.ServeFrame("\x01", finish, &finish));
  EXPECT_TRUE(std::holds_alternative<ErrorMsg>(junk));
}

// The service clock must not start before a long-lived runner's context exists.
TEST(Runner, ServiceStartsAfterContextCreation) {
  for (RunnerMode mode : {RunnerMode::kLongLived, RunnerMode::kForkPerRequest}) {
    SimGpu gpu;
    SimRunner r(Cfg("a", mode), &gpu);
    r.Start(0);
    RunnerService svc(&r, 0.0);
    for (std::uint64_t id = 1; id <= 3; ++id) {
      const Message m = DecodeMessage(
          svc.HandleFrame(EncodeMessage(ProfileMsg{Request(Resnet().Operator(1), 64, 16, id)})));
      ASSERT_TRUE(std::holds_alternative<ResultMsg>(m)) << MessageToJson(m).dump();
      EXPECT_EQ(std::get<ResultMsg>(m).result.status, ResultStatus::kOk);
    }
  }
}

// Isolated partitions give bit-identical measurements with or without neighbours.
TEST(Runner, IsolatedNeighboursDoNotPerturb) {
  const auto& op = Resnet().Operator(1);
  SimGpu solo_gpu;
  SimRunner solo(Cfg("s", RunnerMode::kLongLived, 50), &solo_gpu);
  Nanos ts = solo.Start(0);
  SimGpu shared_gpu;
  SimRunner a(Cfg("a", RunnerMode::kLongLived, 50), &shared_gpu);
  SimRunner b(Cfg("b", RunnerMode::kLongLived, 50), &shared_gpu);
  Nanos ta = a.Start(0), tb = b.Start(0);
  for (std::int64_t grid : {16, 40, 80, 120, 160, 320, 640}) {
    const auto req = Request(op, 1024, grid);
    const auto s = solo.Serve(req, ts);
    const auto x = a.Serve(req, ta);
    const auto y = b.Serve(req, tb);
    EXPECT_EQ(s.result, x.result);
    EXPECT_EQ(s.result, y.result);
    ts = s.finish;
    ta = x.finish;
    tb = y.finish;
  }
}

TEST(Runner, TraceRecordsServiceContextAndProfiling) {
  SimGpu gpu;
  Trace trace;
  SimRunner r(Cfg("a", RunnerMode::kForkPerRequest, 100, 5), &gpu, &trace);
  r.Start(0);
  r.Serve(Request(Resnet().Operator(1), 1024, 160), 0);
  const auto& rc = trace.components().at(r.runner_component());
  ASSERT_EQ(rc.intervals.size(), 3u);
  EXPECT_EQ(rc.intervals[0].kind, kService);
  EXPECT_EQ(rc.intervals[1].kind, kContext);
  EXPECT_EQ(rc.intervals[2].kind, kProfiling);
  EXPECT_EQ(trace.components().at(r.gpu_component()).sm_alloc, 80);
}

TEST(Supervisor, SpawnRegistersAndRejectsDuplicates) {
  SimGpu gpu;
  TrackerCore tracker;
  Supervisor sup(&tracker, &gpu);
  sup.Spawn(Cfg("a", RunnerMode::kLongLived, 50), 0);
  EXPECT_EQ(tracker.NumRunners("v100"), 1u);
  EXPECT_THROW(sup.Spawn(Cfg("a", RunnerMode::kLongLived, 50), 0), Error);
  // Capacity failure leaves nothing half registered.
  EXPECT_THROW(sup.Spawn(Cfg("b", RunnerMode::kLongLived, 75), 0), Error);
  EXPECT_EQ(tracker.NumRunners("v100"), 1u);
  EXPECT_EQ(sup.runners().size(), 1u);
}

TEST(Supervisor, RespawnWithinOnePollInterval) {
  for (Nanos crash_at : std::vector<Nanos>{1, 250'000'000, 999'999'999, 1'000'000'000,
                                             4'300'000'000}) {
    SimGpu gpu;
    TrackerCore tracker;
    EventLoop loop;
    Supervisor sup(&tracker, &gpu);
    sup.Spawn(Cfg("a", RunnerMode::kLongLived), 0);
    sup.StartPolling(&loop);
    loop.At(crash_at, [&] { sup.Crash("a"); });
    loop.At(crash_at, [&] { EXPECT_EQ(tracker.NumRunners("v100"), 0u); });
    loop.RunUntil(crash_at + sup.params().poll_interval);
    sup.StopPolling();
    ASSERT_EQ(sup.respawn_times().size(), 1u);
    EXPECT_LE(sup.respawn_times()[0] - crash_at, sup.params().poll_interval);
    EXPECT_EQ(tracker.NumRunners("v100"), 1u);
    SimRunner* fresh = sup.Find("a");
    ASSERT_NE(fresh, nullptr);
    EXPECT_FALSE(fresh->crashed());
    EXPECT_EQ(fresh->Serve(Request(Resnet().Operator(1), 64, 16), fresh->busy_until())
                  .result.status,
              ResultStatus::kOk);
  }
}

TEST(Supervisor, RespawnStormAborts) {
  SimGpu gpu;
  TrackerCore tracker;
  SupervisorParams p;
  p.max_respawns = 2;
  Supervisor sup(&tracker, &gpu, nullptr, p);
  sup.Spawn(Cfg("a", RunnerMode::kLongLived), 0);
  Nanos now = 0;
  for (int i = 0; i < 2; ++i) {
    sup.Crash("a");
    now += p.poll_interval;
    EXPECT_EQ(sup.Poll(now), 1);
  }
  sup.Crash("a");
  try {
    sup.Poll(now + p.poll_interval);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAborted);
    EXPECT_NE(std::string(e.what()).find("respawn storm"), std::string::npos);
  }
}

TEST(Supervisor, LeaseHeldByCrashedRunnerIsOrphaned) {
  SimGpu gpu;
  TrackerCore tracker;
  Supervisor sup(&tracker, &gpu);
  sup.Spawn(Cfg("a", RunnerMode::kLongLived), 0);
  const auto lease = tracker.Acquire("v100", 0);
  sup.Crash("a");
  sup.Poll(1);
  EXPECT_NO_THROW(tracker.Release(lease->lease_id, 2));
  EXPECT_TRUE(tracker.Acquire("v100", 3).has_value());
}
