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
#include "tuneplex/wire.h"

#include <cmath>

namespace tuneplex {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

[[noreturn]] void Bad(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::kProtocol, "bad field '" + field + "': " + what);
}

const json& Field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) Bad(key, "missing");
  return *it;
}

std::string GetString(const json& j, const char* key) {
  const json& v = Field(j, key);
  if (!v.is_string()) Bad(key, "expected a string");
  return v.get<std::string>();
}

std::int64_t GetInt(const json& j, const char* key) {
  const json& v = Field(j, key);
  if (!v.is_number_integer()) Bad(key, "expected an integer");
  return v.get<std::int64_t>();
}

std::uint64_t GetUint(const json& j, const char* key) {
  const json& v = Field(j, key);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  Bad(key, "expected a non-negative integer");
}

int GetSmallInt(const json& j, const char* key) {
  const std::int64_t v = GetInt(j, key);
  if (v < INT32_MIN || v > INT32_MAX) Bad(key, "out of range");
  return static_cast<int>(v);
}

double GetDouble(const json& j, const char* key) {
  const json& v = Field(j, key);
  if (!v.is_number()) Bad(key, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) Bad(key, "not finite");
  return d;
}

template <typename Fn>
auto Wrap(const char* field, Fn fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kProtocol) throw;
    Bad(field, e.what());
  }
}

struct ToJsonVisitor {
  ojson operator()(const RegisterMsg& m) const {
    ojson j;
    j["type"] = "REGISTER";
    j["device_key"] = m.device_key;
    j["endpoint"] = m.endpoint;
    j["percent"] = m.percent;
    j["mode"] = RunnerModeName(m.mode);
    return j;
  }
  ojson operator()(const LeaseMsg& m) const {
    ojson j;
    j["type"] = "LEASE";
    j["device_key"] = m.device_key;
    j["client"] = m.client;
    return j;
  }
  ojson operator()(const LeaseGrantMsg& m) const {
    ojson j;
    j["type"] = "LEASE_GRANT";
    j["lease_id"] = m.lease_id;
    j["endpoint"] = m.endpoint;
    j["percent"] = m.percent;
    j["issued_at_ns"] = m.issued_at;
    return j;
  }
  ojson operator()(const ReleaseMsg& m) const {
    ojson j;
    j["type"] = "RELEASE";
    j["lease_id"] = m.lease_id;
    j["busy_ms"] = m.busy_ms;
    return j;
  }
  ojson operator()(const ProfileMsg& m) const {
    ojson j = ProfileRequestToJson(m.request);
    j["type"] = "PROFILE";
    return j;
  }
  ojson operator()(const ResultMsg& m) const {
    ojson j = ProfileResultToJson(m.result);
    j["type"] = "RESULT";
    return j;
  }
  ojson operator()(const StatusMsg&) const {
    ojson j;
    j["type"] = "STATUS";
    return j;
  }
  ojson operator()(const StatusReplyMsg& m) const {
    ojson j;
    j["type"] = "STATUS_REPLY";
    j["entries"] = ojson::array();
    for (const auto& e : m.entries) {
      ojson o;
      o["device_key"] = e.device_key;
      o["endpoint"] = e.endpoint;
      o["percent"] = e.percent;
      o["mode"] = RunnerModeName(e.mode);
      o["state"] = e.leased ? "leased" : "free";
      o["served_count"] = e.served_count;
      j["entries"].push_back(std::move(o));
    }
    return j;
  }
  ojson operator()(const HeartbeatMsg& m) const {
    ojson j;
    j["type"] = "HEARTBEAT";
    j["endpoint"] = m.endpoint;
    j["seq"] = m.seq;
    return j;
  }
  ojson operator()(const ErrorMsg& m) const {
    ojson j;
    j["type"] = "ERROR";
    j["code"] = m.code;
    j["message"] = m.message;
    return j;
  }
};

}  // namespace

const char* RunnerModeName(RunnerMode m) {
  return m == RunnerMode::kLongLived ? "long_lived" : "fork_per_request";
}

RunnerMode ParseRunnerMode(const std::string& s) {
  if (s == "long_lived") return RunnerMode::kLongLived;
  if (s == "fork_per_request") return RunnerMode::kForkPerRequest;
  throw Error(ErrorCode::kInvalidArgument, "unknown runner mode '" + s + "'");
}

const char* ResultStatusName(ResultStatus s) {
  switch (s) {
    case ResultStatus::kOk:
      return "ok";
    case ResultStatus::kInvalidConfig:
      return "invalid_config";
    case ResultStatus::kServerError:
      return "server_error";
  }
  return "server_error";
}

ResultStatus ParseResultStatus(const std::string& s) {
  if (s == "ok") return ResultStatus::kOk;
  if (s == "invalid_config") return ResultStatus::kInvalidConfig;
  if (s == "server_error") return ResultStatus::kServerError;
  throw Error(ErrorCode::kInvalidArgument, "unknown result status '" + s + "'");
}

nlohmann::ordered_json ProfileRequestToJson(const ProfileRequest& r) {
  ojson j;
  j["request_id"] = r.request_id;
  j["operator_id"] = r.operator_id;
  j["configuration"] = ConfigurationToJson(r.configuration);
  j["total_threads"] = r.total_threads;
  j["total_work"] = r.total_work;
  j["efficiency"] = r.efficiency;
  j["max_threads"] = r.max_threads;
  j["min_threads"] = r.min_threads;
  j["repeats"] = r.repeats;
  return j;
}

ProfileRequest ProfileRequestFromJson(const nlohmann::json& j) {
  ProfileRequest r;
  r.request_id = GetUint(j, "request_id");
  r.operator_id = GetSmallInt(j, "operator_id");
  r.configuration = Wrap("configuration", [&] { return ConfigurationFromJson(Field(j, "configuration")); });
  r.total_threads = GetInt(j, "total_threads");
  r.total_work = GetDouble(j, "total_work");
  r.efficiency = GetDouble(j, "efficiency");
  r.max_threads = GetInt(j, "max_threads");
  r.min_threads = GetInt(j, "min_threads");
  r.repeats = GetSmallInt(j, "repeats");
  return r;
}

nlohmann::ordered_json ProfileResultToJson(const ProfileResult& r) {
  ojson j;
  j["request_id"] = r.request_id;
  j["mean_ms"] = r.mean_ms;
  j["std_ms"] = r.std_ms;
  j["status"] = ResultStatusName(r.status);
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

ProfileResult ProfileResultFromJson(const nlohmann::json& j) {
  ProfileResult r;
  r.request_id = GetUint(j, "request_id");
  r.mean_ms = GetDouble(j, "mean_ms");
  r.std_ms = GetDouble(j, "std_ms");
  r.status = Wrap("status", [&] { return ParseResultStatus(GetString(j, "status")); });
  if (j.contains("error")) r.error = GetString(j, "error");
  return r;
}

const char* MessageTypeName(const Message& m) {
  static const char* kNames[] = {"REGISTER", "LEASE",        "LEASE_GRANT", "RELEASE",
                                 "PROFILE",  "RESULT",       "STATUS",      "STATUS_REPLY",
                                 "HEARTBEAT", "ERROR"};
  return kNames[m.index()];
}

nlohmann::ordered_json MessageToJson(const Message& m) { return std::visit(ToJsonVisitor{}, m); }

Message MessageFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kProtocol, "frame payload must be a JSON object");
  const std::string type = GetString(j, "type");
  if (type == "REGISTER") {
    RegisterMsg m;
    m.device_key = GetString(j, "device_key");
    m.endpoint = GetString(j, "endpoint");
    m.percent = GetSmallInt(j, "percent");
    m.mode = Wrap("mode", [&] { return ParseRunnerMode(GetString(j, "mode")); });
    return m;
  }
  if (type == "LEASE") {
    LeaseMsg m;
    m.device_key = GetString(j, "device_key");
    if (j.contains("client")) m.client = GetString(j, "client");
    return m;
  }
  if (type == "LEASE_GRANT") {
    LeaseGrantMsg m;
    m.lease_id = GetUint(j, "lease_id");
    m.endpoint = GetString(j, "endpoint");
    m.percent = GetSmallInt(j, "percent");
    m.issued_at = GetInt(j, "issued_at_ns");
    return m;
  }
  if (type == "RELEASE") {
    ReleaseMsg m;
    m.lease_id = GetUint(j, "lease_id");
    if (j.contains("busy_ms")) m.busy_ms = GetDouble(j, "busy_ms");
    return m;
  }
  if (type == "PROFILE") return ProfileMsg{ProfileRequestFromJson(j)};
  if (type == "RESULT") return ResultMsg{ProfileResultFromJson(j)};
  if (type == "STATUS") return StatusMsg{};
  if (type == "STATUS_REPLY") {
    StatusReplyMsg m;
    const json& entries = Field(j, "entries");
    if (!entries.is_array()) Bad("entries", "expected an array");
    for (const auto& e : entries) {
      if (!e.is_object()) Bad("entries", "expected objects");
      RunnerEntry r;
      r.device_key = GetString(e, "device_key");
      r.endpoint = GetString(e, "endpoint");
      r.percent = GetSmallInt(e, "percent");
      r.mode = Wrap("mode", [&] { return ParseRunnerMode(GetString(e, "mode")); });
      const std::string state = GetString(e, "state");
      if (state != "free" && state != "leased") Bad("state", "expected free or leased");
      r.leased = state == "leased";
      r.served_count = GetInt(e, "served_count");
      m.entries.push_back(std::move(r));
    }
    return m;
  }
  if (type == "HEARTBEAT") {
    HeartbeatMsg m;
    if (j.contains("endpoint")) m.endpoint = GetString(j, "endpoint");
    if (j.contains("seq")) m.seq = GetUint(j, "seq");
    return m;
  }
  if (type == "ERROR") {
    ErrorMsg m;
    m.code = GetString(j, "code");
    m.message = GetString(j, "message");
    return m;
  }
  throw Error(ErrorCode::kProtocol, "unknown message type '" + type + "'");
}

std::string EncodeFrame(const nlohmann::ordered_json& payload) {
  std::string body;
  try {
    body = payload.dump();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kProtocol, std::string("cannot encode frame: ") + e.what());
  }
  if (body.size() > kMaxFrameBytes) throw Error(ErrorCode::kProtocol, "frame exceeds size limit");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out += body;
  return out;
}

std::string EncodeMessage(const Message& m) { return EncodeFrame(MessageToJson(m)); }

Message DecodeMessage(const std::string& frame) {
  FrameDecoder d;
  d.Feed(frame);
  auto j = d.Next();
  if (!j || d.buffered() != 0) throw Error(ErrorCode::kProtocol, "expected exactly one frame");
  return MessageFromJson(*j);
}

ErrorMsg MakeErrorMsg(const Error& e) { return ErrorMsg{ErrorCodeName(e.code()), e.what()}; }

void FrameDecoder::Feed(const char* data, std::size_t size) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.append(data, size);
}

std::optional<nlohmann::json> FrameDecoder::Next() {
  if (poisoned_) throw Error(ErrorCode::kProtocol, "decoder is in an error state");
  if (buffer_.size() - offset_ < 4) return std::nullopt;
  const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data() + offset_);
  const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                          (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
  if (n > kMaxFrameBytes) {
    poisoned_ = true;
    throw Error(ErrorCode::kProtocol, "frame length " + std::to_string(n) + " exceeds limit");
  }
  if (buffer_.size() - offset_ - 4 < n) return std::nullopt;
  const char* body = buffer_.data() + offset_ + 4;
  json j = json::parse(body, body + n, nullptr, false);
  offset_ += 4 + n;
  if (offset_ > (1u << 20)) {
    buffer_.erase(0, offset_);
    offset_ = 0;
  }
  if (j.is_discarded()) {
    poisoned_ = true;
    throw Error(ErrorCode::kProtocol, "frame payload is not valid JSON");
  }
  return j;
}

}  // namespace tuneplex
