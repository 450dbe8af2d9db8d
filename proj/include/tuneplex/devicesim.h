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
 * \file tuneplex/devicesim.h
 * \brief Simulated multi-SM accelerator with spatial partitions and sharing modes.
 *
 * Latency follows a wave model: a kernel with T threads on a partition holding R
 * resident threads executes in ceil(T / R) waves. Everything that advances time
 * takes an explicit virtual clock so the owner decides how events are ordered.
 */
#ifndef TUNEPLEX_DEVICESIM_H_
#define TUNEPLEX_DEVICESIM_H_

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "tuneplex/common.h"
#include "tuneplex/workload.h"

namespace tuneplex {

struct GpuParams {
  int sm_count = 80;
  std::int64_t threads_per_sm = 2048;
  double thread_rate = 1.0;
  double per_thread_overhead_ms = 0.01;
  double wave_overhead_ms = 0.05;
  double launch_overhead_ms = 0.02;
  double context_creation_ms = 300;
  double jitter_fraction = 0;
  std::uint64_t jitter_seed = 0;

  void Validate() const;
  bool operator==(const GpuParams&) const = default;
};

GpuParams GpuParamsFromJson(const nlohmann::json& j);
nlohmann::ordered_json GpuParamsToJson(const GpuParams& p);
GpuParams LoadGpuParams(const std::string& path);

int SmAlloc(const GpuParams& gpu, int gpu_percent);
std::int64_t ResidentThreads(const GpuParams& gpu, int gpu_percent);

struct KernelDescriptor {
  std::int64_t total_threads = 1;
  double total_work = 0;
  double efficiency = 1;

  bool operator==(const KernelDescriptor&) const = default;
};

double TilePenalty(std::int64_t tile);
double UnrollPenalty(std::int64_t unroll);
/*! \brief The "build" product of a configuration. Does not check the thread cap. */
KernelDescriptor DescribeKernel(const OperatorSpec& op, const Configuration& c);

/*! \brief Pure wave-model latency in ms for a partition with the given residency. */
double KernelLatency(const GpuParams& gpu, std::int64_t resident_threads, const KernelDescriptor& k);

/*!
 * \brief Wall completion times (ms) of kernels sliced round-robin in fixed quanta.
 *
 * Kernel i needs latencies[i] of exclusive device time; all start at 0.
 */
std::vector<double> RoundRobinCompletion(const std::vector<double>& latencies, double quantum_ms);

struct SharingMode {
  enum class Kind { kIsolated, kUncontrolled, kTemporal };

  Kind kind = Kind::kIsolated;
  /*! \brief Co-running kernels, including the measured one (Uncontrolled and Temporal). */
  int active_kernels = 1;
  double quantum_ms = 0;

  static SharingMode Isolated() { return {}; }
  static SharingMode Uncontrolled(int active_kernels);
  static SharingMode Temporal(double quantum_ms, int active_kernels = 2);

  std::string ToString() const;
  bool operator==(const SharingMode&) const = default;
};

struct Partition {
  int id = 0;
  int gpu_percent = 0;
  int sm_alloc = 0;
  std::int64_t resident_threads = 0;
};

struct GpuContext {
  int id = 0;
  int partition_id = 0;
  Nanos created_at = 0;
  bool alive = false;
};

struct Measurement {
  double mean_ms = 0;
  double std_ms = 0;
  /*! \brief Device time consumed by all repeats. */
  Nanos wall = 0;
};

/*! \brief Per-partition device-time buckets. */
struct PartitionLedger {
  Nanos context = 0;
  Nanos profiling = 0;
  std::int64_t context_acquisitions = 0;
  std::int64_t kernel_runs = 0;
};

/*!
 * \brief The simulated device. All members are serialized by an internal mutex.
 *
 * Only Isolated mode enforces the SM capacity; the other modes exist to show what
 * happens without spatial isolation.
 */
class SimGpu {
 public:
  explicit SimGpu(GpuParams params = {});

  const GpuParams& params() const { return params_; }

  Partition CreatePartition(int gpu_percent);
  void DestroyPartition(int partition_id);
  bool HasPartition(int partition_id) const;
  int AllocatedSms() const;

  /*! \brief Creates a context; clock advances by context_creation_ms. */
  GpuContext AcquireContext(int partition_id, Nanos* clock);
  void ReleaseContext(GpuContext* ctx);

  Measurement RunKernel(const GpuContext& ctx, const KernelDescriptor& k, int repeats, Nanos* clock);
  /*! \brief Latency of one launch under the current mode, without advancing time. */
  double KernelLatencyUnderMode(int partition_id, const KernelDescriptor& k);

  /*! \brief Marks a kernel as executing; used by owners that model asynchronous runs. */
  void BeginKernel();
  void EndKernel();
  int InFlight() const;

  void SetSharingMode(const SharingMode& mode);
  SharingMode sharing_mode() const;

  PartitionLedger Ledger(int partition_id) const;
  /*! \brief Summed over every partition ever created. */
  PartitionLedger TotalLedger() const;

 private:
  const Partition& PartitionLocked(int partition_id) const;
  double LatencyLocked(const Partition& p, const KernelDescriptor& k);

  GpuParams params_;
  mutable std::mutex mu_;
  std::map<int, Partition> partitions_;
  std::map<int, PartitionLedger> ledgers_;
  SharingMode mode_;
  Rng jitter_rng_;
  int next_partition_id_ = 1;
  int next_context_id_ = 1;
  int in_flight_ = 0;
};

}  // namespace tuneplex

#endif  // TUNEPLEX_DEVICESIM_H_
