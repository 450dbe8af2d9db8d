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

#include <cmath>
#include <random>

#include "tuneplex/devicesim.h"
#include "tuneplex/event_loop.h"

using namespace tuneplex;

namespace {

// Closed-form wave model written out independently of the library.
double OracleLatency(std::int64_t threads, double work, double eff, std::int64_t resident) {
  const double waves = std::ceil(static_cast<double>(threads) / static_cast<double>(resident));
  return waves * (work / threads / eff + 0.01) + waves * 0.05 + 0.02;
}

// Round robin in integer microseconds, one tick at a time.
std::vector<double> OracleRoundRobin(const std::vector<int>& lat_us, int quantum_us) {
  std::vector<int> remaining = lat_us;
  std::vector<double> done(remaining.size(), 0);
  long t = 0;
  bool any = true;
  while (any) {
    any = false;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      for (int q = 0; q < quantum_us && remaining[i] > 0; ++q) {
        ++t;
        if (--remaining[i] == 0) done[i] = t * 0.001;
      }
      any = any || remaining[i] > 0;
    }
  }
  return done;
}

KernelDescriptor K(std::int64_t threads, double work, double eff = 1.0) {
  return KernelDescriptor{threads, work, eff};
}

}  // namespace

TEST(KernelLatency, SingleWaveUnitWork) {
  GpuParams g;
  EXPECT_NEAR(KernelLatency(g, ResidentThreads(g, 100), K(163840, 163840)), 1.08, 1e-12);
}

TEST(KernelLatency, QuarterPartitionNeedsFourWaves) {
  GpuParams g;
  EXPECT_EQ(SmAlloc(g, 25), 20);
  EXPECT_EQ(ResidentThreads(g, 25), 40960);
  EXPECT_NEAR(KernelLatency(g, 40960, K(163840, 163840)), 4.26, 1e-12);
  // Sized for the partition it runs on, the same work is faster.
  EXPECT_NEAR(KernelLatency(g, 40960, K(40960, 163840)), 4.08, 1e-12);
}

TEST(KernelLatency, MatchesClosedFormOnRandomInputs) {
  GpuParams g;
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::int64_t> threads(1, 1 << 22);
  std::uniform_int_distribution<int> pct(1, 100);
  std::uniform_real_distribution<double> work(1, 1e6), eff(0.3, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const std::int64_t t = threads(rng);
    const double w = work(rng), e = eff(rng);
    const std::int64_t r = ResidentThreads(g, pct(rng));
    const double expect = OracleLatency(t, w, e, r);
    ASSERT_NEAR(KernelLatency(g, r, K(t, w, e)), expect, 1e-9 * expect);
  }
}

TEST(KernelLatency, ResidentSizedLaunchIsBestPerPartition) {
  // Among thread counts that are multiples of 1024, the resident count minimizes latency.
  GpuParams g;
  for (int p : {10, 25, 50, 75, 100}) {
    const std::int64_t r = ResidentThreads(g, p);
    const double best = KernelLatency(g, r, K(r, 40960));
    for (std::int64_t t = 1024; t <= 4 * 163840; t += 1024) {
      if (t != r) EXPECT_GT(KernelLatency(g, r, K(t, 40960)), best) << p << " " << t;
    }
  }
}

TEST(Partitions, SmAllocation) {
  GpuParams g;
  EXPECT_EQ(SmAlloc(g, 100), 80);
  EXPECT_EQ(SmAlloc(g, 1), 1);
  EXPECT_EQ(SmAlloc(g, 10), 8);
  EXPECT_THROW(SmAlloc(g, 0), Error);
  EXPECT_THROW(SmAlloc(g, 101), Error);
}

TEST(Partitions, IsolatedCapacityIsEnforced) {
  SimGpu gpu;
  for (int i = 0; i < 4; ++i) gpu.CreatePartition(25);
  EXPECT_EQ(gpu.AllocatedSms(), 80);
  try {
    gpu.CreatePartition(10);
    FAIL() << "over-subscription accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCapacityExceeded);
  }
}

TEST(Partitions, DestroyFreesCapacity) {
  SimGpu gpu;
  const Partition a = gpu.CreatePartition(100);
  EXPECT_THROW(gpu.CreatePartition(1), Error);
  gpu.DestroyPartition(a.id);
  EXPECT_FALSE(gpu.HasPartition(a.id));
  EXPECT_NO_THROW(gpu.CreatePartition(100));
  EXPECT_THROW(gpu.DestroyPartition(a.id), Error);
}

TEST(Partitions, SharedModesMayOversubscribe) {
  SimGpu gpu;
  gpu.SetSharingMode(SharingMode::Uncontrolled(2));
  gpu.CreatePartition(100);
  EXPECT_NO_THROW(gpu.CreatePartition(100));
}

TEST(Context, CreationCostAccumulates) {
  SimGpu gpu;
  const Partition p = gpu.CreatePartition(50);
  Nanos clock = 0;
  const GpuContext c1 = gpu.AcquireContext(p.id, &clock);
  EXPECT_TRUE(c1.alive);
  EXPECT_EQ(clock, 300'000'000);
  gpu.AcquireContext(p.id, &clock);
  EXPECT_EQ(clock, 600'000'000);
  EXPECT_EQ(gpu.Ledger(p.id).context, 600'000'000);
  EXPECT_EQ(gpu.Ledger(p.id).context_acquisitions, 2);
  gpu.DestroyPartition(p.id);
  EXPECT_THROW(gpu.AcquireContext(p.id, &clock), Error);
}

TEST(RunKernel, IsolatedIsExactAndCharged) {
  SimGpu gpu;
  const Partition p = gpu.CreatePartition(100);
  Nanos clock = 0;
  GpuContext ctx = gpu.AcquireContext(p.id, &clock);
  const Nanos before = clock;
  const Measurement m = gpu.RunKernel(ctx, K(163840, 163840), 3, &clock);
  EXPECT_NEAR(m.mean_ms, 1.08, 1e-12);
  EXPECT_EQ(m.std_ms, 0);
  EXPECT_EQ(clock - before, 3 * MsToNanos(1.08));
  EXPECT_EQ(gpu.Ledger(p.id).profiling, m.wall);
  gpu.ReleaseContext(&ctx);
  EXPECT_THROW(gpu.RunKernel(ctx, K(1, 1), 1, &clock), Error);
}

TEST(RunKernel, RejectsBadArguments) {
  SimGpu gpu;
  const Partition p = gpu.CreatePartition(100);
  Nanos clock = 0;
  const GpuContext ctx = gpu.AcquireContext(p.id, &clock);
  EXPECT_THROW(gpu.RunKernel(ctx, K(1, 1), 0, &clock), Error);
  EXPECT_THROW(gpu.RunKernel(ctx, K(0, 1), 1, &clock), Error);
  EXPECT_THROW(gpu.RunKernel(ctx, K(1, 0), 1, &clock), Error);
}

TEST(RunKernel, UncontrolledHalvesResidency) {
  SimGpu gpu;
  const Partition p = gpu.CreatePartition(100);
  gpu.SetSharingMode(SharingMode::Uncontrolled(2));
  Nanos clock = 0;
  const GpuContext ctx = gpu.AcquireContext(p.id, &clock);
  EXPECT_NEAR(gpu.RunKernel(ctx, K(163840, 163840), 3, &clock).mean_ms, 2.14, 1e-12);
}

TEST(RunKernel, TemporalReportsWallTime) {
  SimGpu gpu;
  const Partition p = gpu.CreatePartition(100);
  gpu.SetSharingMode(SharingMode::Temporal(0.05, 2));
  const double solo = KernelLatency(gpu.params(), p.resident_threads, K(163840, 163840));
  const double shared = gpu.KernelLatencyUnderMode(p.id, K(163840, 163840));
  EXPECT_NEAR(shared / solo, 2.0, 0.05);
  EXPECT_GT(shared, solo);
}

TEST(RunKernel, JitterIsBoundedAndSeeded) {
  GpuParams g;
  g.jitter_fraction = 0.1;
  g.jitter_seed = 42;
  SimGpu a(g), b(g);
  const Partition pa = a.CreatePartition(100), pb = b.CreatePartition(100);
  const double base = KernelLatency(g, pa.resident_threads, K(163840, 163840));
  for (int i = 0; i < 200; ++i) {
    const double la = a.KernelLatencyUnderMode(pa.id, K(163840, 163840));
    EXPECT_EQ(la, b.KernelLatencyUnderMode(pb.id, K(163840, 163840)));
    EXPECT_GE(la, base);
    EXPECT_LE(la, base * 1.1);
  }
}

TEST(SharingMode, SwitchRefusedWhileInFlight) {
  SimGpu gpu;
  EXPECT_NO_THROW(gpu.SetSharingMode(SharingMode::Uncontrolled(2)));
  gpu.BeginKernel();
  EXPECT_THROW(gpu.SetSharingMode(SharingMode::Isolated()), Error);
  gpu.EndKernel();
  EXPECT_NO_THROW(gpu.SetSharingMode(SharingMode::Isolated()));
  EXPECT_THROW(gpu.EndKernel(), Error);
  EXPECT_THROW(SharingMode::Uncontrolled(0), Error);
  EXPECT_THROW(SharingMode::Temporal(0), Error);
}

TEST(RoundRobin, MatchesTickSimulation) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> len(1, 400);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> us;
    std::vector<double> lat;
    for (int i = 0; i < 1 + trial % 4; ++i) {
      us.push_back(len(rng));
      lat.push_back(us.back() * 0.001);
    }
    const auto got = RoundRobinCompletion(lat, 0.05);
    const auto want = OracleRoundRobin(us, 50);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-9);
  }
}

TEST(RoundRobin, LastFinisherSeesTotalWork) {
  const std::vector<double> lat = {1.08, 1.08, 1.08};
  const auto done = RoundRobinCompletion(lat, 0.05);
  EXPECT_NEAR(done.back(), 3 * 1.08, 1e-9);
  EXPECT_THROW(RoundRobinCompletion(lat, 0), Error);
}

TEST(GpuParams, JsonRoundTripAndValidation) {
  GpuParams g;
  g.jitter_fraction = 0.05;
  g.jitter_seed = 9;
  EXPECT_EQ(GpuParamsFromJson(GpuParamsToJson(g)), g);
  auto bad = nlohmann::json(GpuParamsToJson(g));
  bad["sm_count"] = 0;
  EXPECT_THROW(GpuParamsFromJson(bad), Error);
  bad = GpuParamsToJson(g);
  bad["jitter_fraction"] = -1;
  EXPECT_THROW(GpuParamsFromJson(bad), Error);
  bad = GpuParamsToJson(g);
  bad["thread_rate"] = "fast";
  EXPECT_THROW(GpuParamsFromJson(bad), Error);
}

TEST(EventLoop, OrdersByTimeThenInsertion) {
  EventLoop loop;
  std::vector<int> order;
  loop.At(20, [&] { order.push_back(3); });
  loop.At(10, [&] { order.push_back(1); });
  loop.At(10, [&] { order.push_back(2); });
  loop.At(5, [&] {
    order.push_back(0);
    loop.After(5, [&] { order.push_back(21); });
  });
  loop.Run();
  EXPECT_EQ(order, (std::vector<int>{0, 1, 2, 21, 3}));
  EXPECT_EQ(loop.now(), 20);
  EXPECT_EQ(loop.fired(), 5u);
}

TEST(EventLoop, RunUntilStopsAndAdvances) {
  EventLoop loop;
  int fired = 0;
  loop.At(10, [&] { ++fired; });
  loop.At(30, [&] { ++fired; });
  loop.RunUntil(20);
  EXPECT_EQ(fired, 1);
  EXPECT_EQ(loop.now(), 20);
  EXPECT_EQ(loop.pending(), 1u);
  EXPECT_TRUE(loop.Step());
  EXPECT_FALSE(loop.Step());
}
