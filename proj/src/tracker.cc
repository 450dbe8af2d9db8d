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
#include "tuneplex/tracker.h"

#include <condition_variable>
#include <memory>

namespace tuneplex {

void TrackerCore::Register(const RegisterMsg& meta, Nanos now) {
  if (meta.endpoint.empty() || meta.device_key.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "register needs a device key and an endpoint");
  }
  std::vector<Grant> grants;
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (entries_.count(meta.endpoint)) {
      throw Error(ErrorCode::kInvalidArgument, "endpoint " + meta.endpoint + " already registered");
    }
    Entry e;
    e.info = RunnerEntry{meta.device_key, meta.endpoint, meta.percent, meta.mode, false, 0};
    entries_.emplace(meta.endpoint, std::move(e));
    counters_.registers += 1;
    DrainWaitersLocked(meta.device_key, now, &grants);
  }
  for (auto& [cb, lease] : grants) cb(lease);
}

void TrackerCore::Deregister(const std::string& endpoint) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(endpoint);
  if (it == entries_.end()) throw Error(ErrorCode::kNotFound, "endpoint " + endpoint + " unknown");
  if (it->second.lease_id) leases_[*it->second.lease_id].orphaned = true;
  entries_.erase(it);
  counters_.deregisters += 1;
}

std::optional<Lease> TrackerCore::GrantLocked(const std::string& key, Nanos now) {
  Entry* best = nullptr;
  // entries_ is ordered by endpoint, so the first minimum is the lowest endpoint.
  for (auto& [endpoint, e] : entries_) {
    if (e.info.device_key != key || e.lease_id) continue;
    if (!best || e.info.served_count < best->info.served_count) best = &e;
  }
  if (!best) return std::nullopt;
  Lease lease{next_lease_id_++, key, best->info.endpoint, best->info.percent, now};
  best->lease_id = lease.lease_id;
  best->info.leased = true;
  best->info.served_count += 1;
  leases_[lease.lease_id] = LiveLease{lease, false};
  counters_.leases += 1;
  return lease;
}

void TrackerCore::DrainWaitersLocked(const std::string& key, Nanos now, std::vector<Grant>* grants) {
  auto it = waiters_.find(key);
  if (it == waiters_.end()) return;
  while (!it->second.empty()) {
    auto lease = GrantLocked(key, now);
    if (!lease) break;
    grants->emplace_back(std::move(it->second.front()), *lease);
    it->second.pop_front();
  }
  if (it->second.empty()) waiters_.erase(it);
}

std::optional<Lease> TrackerCore::Acquire(const std::string& key, Nanos now, LeaseCallback on_grant) {
  std::lock_guard<std::mutex> lock(mu_);
  bool known = false;
  for (const auto& [endpoint, e] : entries_) {
    if (e.info.device_key == key) {
      known = true;
      break;
    }
  }
  if (!known) throw Error(ErrorCode::kNotFound, "no runners registered under key '" + key + "'");
  // Queued callers go first so a fresh request cannot overtake them.
  auto w = waiters_.find(key);
  if (w == waiters_.end() || w->second.empty()) {
    if (auto lease = GrantLocked(key, now)) return lease;
  }
  if (on_grant) waiters_[key].push_back(std::move(on_grant));
  return std::nullopt;
}

void TrackerCore::Release(std::uint64_t lease_id, Nanos now, double busy_ms) {
  std::vector<Grant> grants;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = leases_.find(lease_id);
    if (it == leases_.end()) {
      throw Error(ErrorCode::kInvalidState,
                  "lease " + std::to_string(lease_id) + " is not live (double release?)");
    }
    const LiveLease live = it->second;
    leases_.erase(it);
    counters_.releases += 1;
    if (live.orphaned) return;
    Entry& e = entries_.at(live.lease.endpoint);
    e.lease_id.reset();
    e.info.leased = false;
    e.busy_ms += busy_ms;
    DrainWaitersLocked(live.lease.device_key, now, &grants);
  }
  for (auto& [cb, lease] : grants) cb(lease);
}

std::vector<RunnerEntry> TrackerCore::Status() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<RunnerEntry> out;
  out.reserve(entries_.size());
  for (const auto& [endpoint, e] : entries_) out.push_back(e.info);
  return out;
}

std::size_t TrackerCore::NumRunners(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::size_t n = 0;
  for (const auto& [endpoint, e] : entries_) {
    if (e.info.device_key == key) ++n;
  }
  return n;
}

std::size_t TrackerCore::NumWaiters(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = waiters_.find(key);
  return it == waiters_.end() ? 0 : it->second.size();
}

TrackerCounters TrackerCore::counters() const {
  std::lock_guard<std::mutex> lock(mu_);
  return counters_;
}

double TrackerCore::TotalBusyMs(const std::string& endpoint) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(endpoint);
  if (it == entries_.end()) throw Error(ErrorCode::kNotFound, "endpoint " + endpoint + " unknown");
  return it->second.busy_ms;
}

TrackerService::TrackerService(TrackerCore* core, std::chrono::milliseconds lease_timeout)
    : core_(core), lease_timeout_(lease_timeout), start_(std::chrono::steady_clock::now()) {}

Nanos TrackerService::Now() const {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                              start_)
      .count();
}

std::string TrackerService::HandleFrame(const std::string& frame) {
  try {
    return EncodeMessage(Handle(DecodeMessage(frame)));
  } catch (const Error& e) {
    return EncodeMessage(MakeErrorMsg(e));
  }
}

Message TrackerService::Handle(const Message& m) {
  if (const auto* r = std::get_if<RegisterMsg>(&m)) {
    core_->Register(*r, Now());
    return HeartbeatMsg{r->endpoint, 0};
  }
  if (const auto* l = std::get_if<LeaseMsg>(&m)) {
    struct Slot {
      std::mutex mu;
      std::condition_variable cv;
      std::optional<Lease> lease;
      bool abandoned = false;
    };
    auto slot = std::make_shared<Slot>();
    auto lease = core_->Acquire(l->device_key, Now(), [this, slot](const Lease& granted) {
      std::unique_lock<std::mutex> lock(slot->mu);
      if (slot->abandoned) {
        // The requester timed out; hand the runner straight back.
        lock.unlock();
        core_->Release(granted.lease_id, Now());
        return;
      }
      slot->lease = granted;
      slot->cv.notify_all();
    });
    if (!lease) {
      std::unique_lock<std::mutex> lock(slot->mu);
      if (!slot->cv.wait_for(lock, lease_timeout_, [&] { return slot->lease.has_value(); })) {
        slot->abandoned = true;
        throw Error(ErrorCode::kAborted, "no runner became free for key '" + l->device_key + "'");
      }
      lease = slot->lease;
    }
    return LeaseGrantMsg{lease->lease_id, lease->endpoint, lease->percent, lease->issued_at};
  }
  if (const auto* r = std::get_if<ReleaseMsg>(&m)) {
    core_->Release(r->lease_id, Now(), r->busy_ms);
    return HeartbeatMsg{"", r->lease_id};
  }
  if (std::holds_alternative<StatusMsg>(m)) return StatusReplyMsg{core_->Status()};
  if (const auto* h = std::get_if<HeartbeatMsg>(&m)) return *h;
  throw Error(ErrorCode::kProtocol,
              std::string("tracker does not accept ") + MessageTypeName(m) + " frames");
}

}  // namespace tuneplex
