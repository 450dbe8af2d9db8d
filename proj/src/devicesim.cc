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
#include "tuneplex/devicesim.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tuneplex {

void GpuParams::Validate() const {
  auto positive = [](double v, const char* name) {
    if (!std::isfinite(v) || v <= 0) {
      throw Error(ErrorCode::kInvalidArgument, std::string("device parameter ") + name +
                                                   " must be positive");
    }
  };
  positive(sm_count, "sm_count");
  positive(static_cast<double>(threads_per_sm), "threads_per_sm");
  positive(thread_rate, "thread_rate");
  positive(per_thread_overhead_ms, "per_thread_overhead_ms");
  positive(wave_overhead_ms, "wave_overhead_ms");
  positive(launch_overhead_ms, "launch_overhead_ms");
  positive(context_creation_ms, "context_creation_ms");
  if (!std::isfinite(jitter_fraction) || jitter_fraction < 0) {
    throw Error(ErrorCode::kInvalidArgument, "device parameter jitter_fraction must be >= 0");
  }
}

GpuParams GpuParamsFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "device file must be an object");
  GpuParams p;
  try {
    p.sm_count = j.value("sm_count", p.sm_count);
    p.threads_per_sm = j.value("threads_per_sm", p.threads_per_sm);
    p.thread_rate = j.value("thread_rate", p.thread_rate);
    p.per_thread_overhead_ms = j.value("per_thread_overhead_ms", p.per_thread_overhead_ms);
    p.wave_overhead_ms = j.value("wave_overhead_ms", p.wave_overhead_ms);
    p.launch_overhead_ms = j.value("launch_overhead_ms", p.launch_overhead_ms);
    p.context_creation_ms = j.value("context_creation_ms", p.context_creation_ms);
    p.jitter_fraction = j.value("jitter_fraction", p.jitter_fraction);
    p.jitter_seed = j.value("jitter_seed", p.jitter_seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed device file: ") + e.what());
  }
  p.Validate();
  return p;
}

nlohmann::ordered_json GpuParamsToJson(const GpuParams& p) {
  nlohmann::ordered_json j;
  j["sm_count"] = p.sm_count;
  j["threads_per_sm"] = p.threads_per_sm;
  j["thread_rate"] = p.thread_rate;
  j["per_thread_overhead_ms"] = p.per_thread_overhead_ms;
  j["wave_overhead_ms"] = p.wave_overhead_ms;
  j["launch_overhead_ms"] = p.launch_overhead_ms;
  j["context_creation_ms"] = p.context_creation_ms;
  j["jitter_fraction"] = p.jitter_fraction;
  j["jitter_seed"] = p.jitter_seed;
  return j;
}

GpuParams LoadGpuParams(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot read device file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "malformed device file " + path + ": " + e.what());
  }
  return GpuParamsFromJson(j);
}

int SmAlloc(const GpuParams& gpu, int gpu_percent) {
  if (gpu_percent < 1 || gpu_percent > 100) {
    throw Error(ErrorCode::kInvalidArgument,
                "gpu_percent must be in [1, 100], got " + std::to_string(gpu_percent));
  }
  return std::max(1, gpu.sm_count * gpu_percent / 100);
}

std::int64_t ResidentThreads(const GpuParams& gpu, int gpu_percent) {
  return SmAlloc(gpu, gpu_percent) * gpu.threads_per_sm;
}

double TilePenalty(std::int64_t tile) {
  switch (tile) {
    case 1:
      return 0.8;
    case 2:
      return 1.0;
    case 3:
      return 0.9;
    case 4:
      return 0.7;
  }
  throw Error(ErrorCode::kInvalidArgument, "tile " + std::to_string(tile) + " is not supported");
}

double UnrollPenalty(std::int64_t unroll) {
  switch (unroll) {
    case 1:
      return 0.9;
    case 2:
      return 1.0;
    case 4:
      return 0.8;
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unroll " + std::to_string(unroll) + " is not supported");
}

KernelDescriptor DescribeKernel(const OperatorSpec& op, const Configuration& c) {
  KernelDescriptor k;
  k.total_threads = c.TotalThreads();
  if (k.total_threads < 1) throw Error(ErrorCode::kInvalidArgument, "total_threads must be >= 1");
  k.total_work = op.total_work;
  k.efficiency = TilePenalty(c.Value(kTile)) * UnrollPenalty(c.Value(kUnroll));
  return k;
}

double KernelLatency(const GpuParams& gpu, std::int64_t resident_threads, const KernelDescriptor& k) {
  const std::int64_t waves = (k.total_threads + resident_threads - 1) / resident_threads;
  const double work_per_thread = k.total_work / static_cast<double>(k.total_threads);
  const double w = static_cast<double>(waves);
  return w * ((work_per_thread / gpu.thread_rate) / k.efficiency + gpu.per_thread_overhead_ms) +
         w * gpu.wave_overhead_ms + gpu.launch_overhead_ms;
}

std::vector<double> RoundRobinCompletion(const std::vector<double>& latencies, double quantum_ms) {
  if (!(quantum_ms > 0)) throw Error(ErrorCode::kInvalidArgument, "quantum must be positive");
  // Residues below kEps count as finished; repeated subtraction of the quantum
  // otherwise leaves ~1e-17 behind and costs a spurious extra round.
  constexpr double kEps = 1e-9;
  std::vector<double> remaining = latencies;
  std::vector<double> done(latencies.size(), 0);
  std::size_t live = 0;
  for (double r : remaining) {
    if (r > kEps) ++live;
  }
  double t = 0;
  while (live > 0) {
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      if (remaining[i] <= kEps) continue;
      const double slice = std::min(quantum_ms, remaining[i]);
      t += slice;
      remaining[i] -= slice;
      if (remaining[i] <= kEps) {
        done[i] = t;
        --live;
      }
    }
  }
  return done;
}

SharingMode SharingMode::Uncontrolled(int active_kernels) {
  if (active_kernels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "Uncontrolled needs at least one active kernel");
  }
  return {Kind::kUncontrolled, active_kernels, 0};
}

SharingMode SharingMode::Temporal(double quantum_ms, int active_kernels) {
  if (!(quantum_ms > 0) || active_kernels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "Temporal needs a positive quantum and >= 1 kernel");
  }
  return {Kind::kTemporal, active_kernels, quantum_ms};
}

std::string SharingMode::ToString() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::kIsolated:
      os << "Isolated";
      break;
    case Kind::kUncontrolled:
      os << "Uncontrolled(" << active_kernels << ")";
      break;
    case Kind::kTemporal:
      os << "Temporal(" << quantum_ms << "ms," << active_kernels << ")";
      break;
  }
  return os.str();
}

SimGpu::SimGpu(GpuParams params) : params_(params), jitter_rng_(params.jitter_seed) {
  params_.Validate();
}

Partition SimGpu::CreatePartition(int gpu_percent) {
  const int sms = SmAlloc(params_, gpu_percent);
  std::lock_guard<std::mutex> lock(mu_);
  if (mode_.kind == SharingMode::Kind::kIsolated) {
    int used = 0;
    for (const auto& [id, p] : partitions_) used += p.sm_alloc;
    if (used + sms > params_.sm_count) {
      throw Error(ErrorCode::kCapacityExceeded,
                  "partition of " + std::to_string(gpu_percent) + "% needs " +
                      std::to_string(sms) + " SMs but only " +
                      std::to_string(params_.sm_count - used) + " are free");
    }
  }
  Partition p{next_partition_id_++, gpu_percent, sms, sms * params_.threads_per_sm};
  partitions_[p.id] = p;
  ledgers_[p.id];
  return p;
}

void SimGpu::DestroyPartition(int partition_id) {
  std::lock_guard<std::mutex> lock(mu_);
  if (partitions_.erase(partition_id) == 0) {
    throw Error(ErrorCode::kNotFound, "no partition " + std::to_string(partition_id));
  }
}

bool SimGpu::HasPartition(int partition_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  return partitions_.count(partition_id) > 0;
}

int SimGpu::AllocatedSms() const {
  std::lock_guard<std::mutex> lock(mu_);
  int used = 0;
  for (const auto& [id, p] : partitions_) used += p.sm_alloc;
  return used;
}

const Partition& SimGpu::PartitionLocked(int partition_id) const {
  auto it = partitions_.find(partition_id);
  if (it == partitions_.end()) {
    throw Error(ErrorCode::kNotFound, "partition " + std::to_string(partition_id) +
                                          " does not exist or was destroyed");
  }
  return it->second;
}

GpuContext SimGpu::AcquireContext(int partition_id, Nanos* clock) {
  std::lock_guard<std::mutex> lock(mu_);
  PartitionLocked(partition_id);
  const Nanos cost = MsToNanos(params_.context_creation_ms);
  *clock += cost;
  auto& ledger = ledgers_[partition_id];
  ledger.context += cost;
  ledger.context_acquisitions += 1;
  return GpuContext{next_context_id_++, partition_id, *clock, true};
}

void SimGpu::ReleaseContext(GpuContext* ctx) { ctx->alive = false; }

double SimGpu::LatencyLocked(const Partition& p, const KernelDescriptor& k) {
  double latency = 0;
  switch (mode_.kind) {
    case SharingMode::Kind::kIsolated:
      latency = KernelLatency(params_, p.resident_threads, k);
      break;
    case SharingMode::Kind::kUncontrolled:
      latency = KernelLatency(
          params_, std::max<std::int64_t>(1, p.resident_threads / mode_.active_kernels), k);
      break;
    case SharingMode::Kind::kTemporal: {
      // Identical co-tenants are sliced round-robin. The measured kernel joins the
      // rotation last and reports its wall completion time.
      const double solo = KernelLatency(params_, p.resident_threads, k);
      std::vector<double> tenants(mode_.active_kernels, solo);
      latency = RoundRobinCompletion(tenants, mode_.quantum_ms).back();
      break;
    }
  }
  if (params_.jitter_fraction > 0) {
    latency *= 1.0 + params_.jitter_fraction * jitter_rng_.Uniform();
  }
  return latency;
}

double SimGpu::KernelLatencyUnderMode(int partition_id, const KernelDescriptor& k) {
  std::lock_guard<std::mutex> lock(mu_);
  return LatencyLocked(PartitionLocked(partition_id), k);
}

Measurement SimGpu::RunKernel(const GpuContext& ctx, const KernelDescriptor& k, int repeats,
                              Nanos* clock) {
  if (repeats < 1) throw Error(ErrorCode::kInvalidArgument, "repeats must be >= 1");
  if (!ctx.alive) throw Error(ErrorCode::kInvalidState, "kernel launched on a dead context");
  if (k.total_threads < 1 || !(k.efficiency > 0) || !(k.total_work > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid kernel descriptor");
  }
  std::lock_guard<std::mutex> lock(mu_);
  const Partition& p = PartitionLocked(ctx.partition_id);
  std::vector<double> samples;
  samples.reserve(repeats);
  Nanos wall = 0;
  for (int r = 0; r < repeats; ++r) {
    const double ms = LatencyLocked(p, k);
    samples.push_back(ms);
    wall += MsToNanos(ms);
  }
  double mean = 0;
  for (double s : samples) mean += s;
  mean /= repeats;
  double var = 0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= repeats;
  *clock += wall;
  auto& ledger = ledgers_[ctx.partition_id];
  ledger.profiling += wall;
  ledger.kernel_runs += 1;
  return Measurement{mean, std::sqrt(var), wall};
}

void SimGpu::BeginKernel() {
  std::lock_guard<std::mutex> lock(mu_);
  ++in_flight_;
}

void SimGpu::EndKernel() {
  std::lock_guard<std::mutex> lock(mu_);
  if (in_flight_ == 0) throw Error(ErrorCode::kInvalidState, "EndKernel without BeginKernel");
  --in_flight_;
}

int SimGpu::InFlight() const {
  std::lock_guard<std::mutex> lock(mu_);
  return in_flight_;
}

void SimGpu::SetSharingMode(const SharingMode& mode) {
  std::lock_guard<std::mutex> lock(mu_);
  if (in_flight_ > 0) {
    throw Error(ErrorCode::kInvalidState, "cannot switch sharing mode with " +
                                              std::to_string(in_flight_) + " kernels in flight");
  }
  mode_ = mode;
}

SharingMode SimGpu::sharing_mode() const {
  std::lock_guard<std::mutex> lock(mu_);
  return mode_;
}

PartitionLedger SimGpu::Ledger(int partition_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = ledgers_.find(partition_id);
  if (it == ledgers_.end()) {
    throw Error(ErrorCode::kNotFound, "no ledger for partition " + std::to_string(partition_id));
  }
  return it->second;
}

PartitionLedger SimGpu::TotalLedger() const {
  std::lock_guard<std::mutex> lock(mu_);
  PartitionLedger total;
  for (const auto& [id, l] : ledgers_) {
    total.context += l.context;
    total.profiling += l.profiling;
    total.context_acquisitions += l.context_acquisitions;
    total.kernel_runs += l.kernel_runs;
  }
  return total;
}

}  // namespace tuneplex
