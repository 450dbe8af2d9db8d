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
#include "tuneplex/event_loop.h"

namespace tuneplex {

void EventLoop::At(Nanos when, Callback fn) {
  if (when < now_) {
    throw Error(ErrorCode::kInvalidArgument, "cannot schedule an event in the past");
  }
  queue_.push(Event{when, next_seq_++, std::move(fn)});
}

bool EventLoop::Step() {
  if (queue_.empty()) return false;
  // Move the callback out before popping; it may schedule more events.
  Event ev = std::move(const_cast<Event&>(queue_.top()));
  queue_.pop();
  now_ = ev.when;
  ++fired_;
  ev.fn();
  return true;
}

void EventLoop::Run() {
  while (Step()) {
  }
}

void EventLoop::RunUntil(Nanos until) {
  while (!queue_.empty() && queue_.top().when <= until) Step();
  if (until > now_) now_ = until;
}

}  // namespace tuneplex
