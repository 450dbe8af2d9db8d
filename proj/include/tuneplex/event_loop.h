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
 * \file tuneplex/event_loop.h
 * \brief Single-threaded discrete-event scheduler over virtual nanoseconds.
 *
 * Events fire in (time, insertion order); equal-time events keep FIFO order,
 * which makes every run with the same inputs identical.
 */
#ifndef TUNEPLEX_EVENT_LOOP_H_
#define TUNEPLEX_EVENT_LOOP_H_

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include "tuneplex/common.h"

namespace tuneplex {

class EventLoop {
 public:
  using Callback = std::function<void()>;

  Nanos now() const { return now_; }
  void At(Nanos when, Callback fn);
  void After(Nanos delay, Callback fn) { At(now_ + delay, std::move(fn)); }
  /*! \brief Runs one event; false when the queue is empty. */
  bool Step();
  void Run();
  /*! \brief Runs events with time <= until, then sets the clock to until. */
  void RunUntil(Nanos until);
  std::size_t pending() const { return queue_.size(); }
  std::uint64_t fired() const { return fired_; }

 private:
  struct Event {
    Nanos when;
    std::uint64_t seq;
    Callback fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.when != b.when ? a.when > b.when : a.seq > b.seq;
    }
  };

  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  Nanos now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::uint64_t fired_ = 0;
};

}  // namespace tuneplex

#endif  // TUNEPLEX_EVENT_LOOP_H_
