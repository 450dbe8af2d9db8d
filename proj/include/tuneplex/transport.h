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
 * \file tuneplex/transport.h
 * \brief Request/response frame transports: in-process and TCP.
 *
 * Both transports hand the handler the exact frame bytes a socket peer would send,
 * so a handler cannot tell them apart.
 */
#ifndef TUNEPLEX_TRANSPORT_H_
#define TUNEPLEX_TRANSPORT_H_

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "tuneplex/wire.h"

namespace tuneplex {

class FrameHandler {
 public:
  virtual ~FrameHandler() = default;
  /*! \brief Consumes one complete frame and returns one complete response frame. */
  virtual std::string HandleFrame(const std::string& frame) = 0;
};

class Channel {
 public:
  virtual ~Channel() = default;
  virtual Message Call(const Message& request) = 0;
};

class InProcessChannel : public Channel {
 public:
  explicit InProcessChannel(FrameHandler* handler) : handler_(handler) {}

  Message Call(const Message& request) override;
  /*! \brief Observes every request and response frame, in order. */
  void SetTap(std::function<void(const std::string&)> tap) { tap_ = std::move(tap); }

 private:
  FrameHandler* handler_;
  std::function<void(const std::string&)> tap_;
};

/*! \brief Thread-per-connection TCP server on 127.0.0.1. */
class TcpServer {
 public:
  explicit TcpServer(FrameHandler* handler);
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  /*! \brief Binds (port 0 picks a free port) and starts accepting. */
  void Start(std::uint16_t port = 0);
  void Stop();
  std::uint16_t port() const { return port_; }
  std::string endpoint() const { return "127.0.0.1:" + std::to_string(port_); }

 private:
  void AcceptLoop();
  void Serve(int fd);

  FrameHandler* handler_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
};

class TcpChannel : public Channel {
 public:
  TcpChannel(const std::string& host, std::uint16_t port);
  ~TcpChannel() override;
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;

  Message Call(const Message& request) override;
  /*! \brief Sends raw bytes and reads one response frame; for protocol tests. */
  std::string CallRaw(const std::string& bytes);

 private:
  int fd_ = -1;
  std::mutex mu_;
};

/*! \brief Parses "host:port". */
std::pair<std::string, std::uint16_t> ParseEndpoint(const std::string& endpoint);

}  // namespace tuneplex

#endif  // TUNEPLEX_TRANSPORT_H_
