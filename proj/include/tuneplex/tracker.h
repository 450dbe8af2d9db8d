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
 * \file tuneplex/tracker.h
 * \brief Runner registry and lease broker.
 *
 * A lease goes to the free runner with the fewest served requests (ties to the
 * lowest endpoint). When nothing is free the caller may queue; queued callers are
 * woken in FIFO order by Release or by a new registration under the same key.
 */
#ifndef TUNEPLEX_TRACKER_H_
#define TUNEPLEX_TRACKER_H_

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tuneplex/transport.h"
#include "tuneplex/wire.h"

namespace tuneplex {

struct Lease {
  std::uint64_t lease_id = 0;
  std::string device_key;
  std::string endpoint;
  int percent = 0;
  Nanos issued_at = 0;
};

/*! \brief Invoked with the grant; never called with the tracker lock held. */
using LeaseCallback = std::function<void(const Lease&)>;

struct TrackerCounters {
  std::int64_t registers = 0;
  std::int64_t deregisters = 0;
  std::int64_t leases = 0;
  std::int64_t releases = 0;
};

/*! \brief Thread-safe registry; every public member is atomic with respect to the others. */
class TrackerCore {
 public:
  void Register(const RegisterMsg& meta, Nanos now = 0);
  /*! \brief Removes a runner; its live lease, if any, becomes orphaned and releasable once. */
  void Deregister(const std::string& endpoint);

  /*!
   * \brief Leases a runner of key. When none is free and on_grant is set, the caller is
   * queued and nullopt is returned; the callback later delivers the grant.
   */
  std::optional<Lease> Acquire(const std::string& key, Nanos now, LeaseCallback on_grant = nullptr);
  void Release(std::uint64_t lease_id, Nanos now, double busy_ms = 0);

  std::vector<RunnerEntry> Status() const;
  std::size_t NumRunners(const std::string& key) const;
  std::size_t NumWaiters(const std::string& key) const;
  TrackerCounters counters() const;
  double TotalBusyMs(const std::string& endpoint) const;

 private:
  struct Entry {
    RunnerEntry info;
    std::optional<std::uint64_t> lease_id;
    double busy_ms = 0;
  };
  struct LiveLease {
    Lease lease;
    bool orphaned = false;
  };
  using Grant = std::pair<LeaseCallback, Lease>;

  std::optional<Lease> GrantLocked(const std::string& key, Nanos now);
  void DrainWaitersLocked(const std::string& key, Nanos now, std::vector<Grant>* grants);

  mutable std::mutex mu_;
  std::map<std::string, Entry> entries_;
  std::map<std::uint64_t, LiveLease> leases_;
  std::map<std::string, std::deque<LeaseCallback>> waiters_;
  std::uint64_t next_lease_id_ = 1;
  TrackerCounters counters_;
};

/*!
 * \brief Frame-level face of the tracker for socket deployments.
 *
 * LEASE blocks the calling connection until a runner frees up or the timeout
 * expires, in which case an ERROR frame is returned.
 */
class TrackerService : public FrameHandler {
 public:
  explicit TrackerService(TrackerCore* core,
                          std::chrono::milliseconds lease_timeout = std::chrono::seconds(30));

  std::string HandleFrame(const std::string& frame) override;

 private:
  Message Handle(const Message& m);
  Nanos Now() const;

  TrackerCore* core_;
  std::chrono::milliseconds lease_timeout_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace tuneplex

#endif  // TUNEPLEX_TRACKER_H_
