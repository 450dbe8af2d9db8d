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
 * \file tuneplex/wire.h
 * \brief Length-prefixed JSON frames shared by tracker, runner and client.
 *
 * A frame is a 4-byte big-endian payload length followed by a UTF-8 JSON object
 * whose "type" field selects the message. Unknown fields are ignored; an unknown
 * type is answered with an ERROR frame. REGISTER, RELEASE and HEARTBEAT requests
 * are acknowledged with a HEARTBEAT frame.
 */
#ifndef TUNEPLEX_WIRE_H_
#define TUNEPLEX_WIRE_H_

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "tuneplex/common.h"
#include "tuneplex/workload.h"

namespace tuneplex {

inline constexpr std::size_t kMaxFrameBytes = 16u << 20;

enum class RunnerMode { kForkPerRequest, kLongLived };
const char* RunnerModeName(RunnerMode m);
RunnerMode ParseRunnerMode(const std::string& s);

enum class ResultStatus { kOk, kInvalidConfig, kServerError };
const char* ResultStatusName(ResultStatus s);
ResultStatus ParseResultStatus(const std::string& s);

struct ProfileRequest {
  std::uint64_t request_id = 0;
  int operator_id = 0;
  Configuration configuration;
  std::int64_t total_threads = 0;
  double total_work = 0;
  double efficiency = 1;
  /*! \brief Thread cap of the operator, so the runner can reject unlaunchable kernels. */
  std::int64_t max_threads = 0;
  std::int64_t min_threads = 1;
  int repeats = 3;

  bool operator==(const ProfileRequest&) const = default;
};

struct ProfileResult {
  std::uint64_t request_id = 0;
  double mean_ms = 0;
  double std_ms = 0;
  ResultStatus status = ResultStatus::kOk;
  std::string error;

  bool operator==(const ProfileResult&) const = default;
};

struct RunnerEntry {
  std::string device_key;
  std::string endpoint;
  int percent = 0;
  RunnerMode mode = RunnerMode::kForkPerRequest;
  bool leased = false;
  std::int64_t served_count = 0;

  bool operator==(const RunnerEntry&) const = default;
};

struct RegisterMsg {
  std::string device_key;
  std::string endpoint;
  int percent = 0;
  RunnerMode mode = RunnerMode::kForkPerRequest;
  bool operator==(const RegisterMsg&) const = default;
};

struct LeaseMsg {
  std::string device_key;
  std::string client;
  bool operator==(const LeaseMsg&) const = default;
};

struct LeaseGrantMsg {
  std::uint64_t lease_id = 0;
  std::string endpoint;
  int percent = 0;
  Nanos issued_at = 0;
  bool operator==(const LeaseGrantMsg&) const = default;
};

struct ReleaseMsg {
  std::uint64_t lease_id = 0;
  /*! \brief Runner busy time while leased; folded into the registry metrics. */
  double busy_ms = 0;
  bool operator==(const ReleaseMsg&) const = default;
};

struct ProfileMsg {
  ProfileRequest request;
  bool operator==(const ProfileMsg&) const = default;
};

struct ResultMsg {
  ProfileResult result;
  bool operator==(const ResultMsg&) const = default;
};

struct StatusMsg {
  bool operator==(const StatusMsg&) const = default;
};

struct StatusReplyMsg {
  std::vector<RunnerEntry> entries;
  bool operator==(const StatusReplyMsg&) const = default;
};

struct HeartbeatMsg {
  std::string endpoint;
  std::uint64_t seq = 0;
  bool operator==(const HeartbeatMsg&) const = default;
};

struct ErrorMsg {
  std::string code;
  std::string message;
  bool operator==(const ErrorMsg&) const = default;
};

using Message = std::variant<RegisterMsg, LeaseMsg, LeaseGrantMsg, ReleaseMsg, ProfileMsg,
                             ResultMsg, StatusMsg, StatusReplyMsg, HeartbeatMsg, ErrorMsg>;

const char* MessageTypeName(const Message& m);
nlohmann::ordered_json MessageToJson(const Message& m);
/*! \brief Throws Error(kProtocol) for a missing or unknown type or a malformed field. */
Message MessageFromJson(const nlohmann::json& j);

nlohmann::ordered_json ProfileRequestToJson(const ProfileRequest& r);
ProfileRequest ProfileRequestFromJson(const nlohmann::json& j);
nlohmann::ordered_json ProfileResultToJson(const ProfileResult& r);
ProfileResult ProfileResultFromJson(const nlohmann::json& j);

std::string EncodeFrame(const nlohmann::ordered_json& payload);
std::string EncodeMessage(const Message& m);
Message DecodeMessage(const std::string& frame);
ErrorMsg MakeErrorMsg(const Error& e);

/*!
 * \brief Incremental decoder for a byte stream of frames.
 *
 * Oversized lengths and undecodable payloads raise Error(kProtocol); after an
 * error the decoder is poisoned and the connection should be dropped.
 */
class FrameDecoder {
 public:
  void Feed(const char* data, std::size_t size);
  void Feed(const std::string& bytes) { Feed(bytes.data(), bytes.size()); }
  std::optional<nlohmann::json> Next();
  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  std::string buffer_;
  std::size_t offset_ = 0;
  bool poisoned_ = false;
};

}  // namespace tuneplex

#endif  // TUNEPLEX_WIRE_H_
