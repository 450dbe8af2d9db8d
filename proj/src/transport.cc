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
#include "tuneplex/transport.h"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace tuneplex {

namespace {

bool WriteFull(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
  return true;
}

bool ReadFull(int fd, char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t r = ::recv(fd, data, n, 0);
    if (r == 0) return false;
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

std::uint32_t FrameLength(const char* header) {
  const auto* p = reinterpret_cast<const unsigned char*>(header);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

// Reads one whole frame (header included). Empty on EOF; throws on an oversized length.
std::string ReadFrame(int fd) {
  char header[4];
  if (!ReadFull(fd, header, 4)) return {};
  const std::uint32_t n = FrameLength(header);
  if (n > kMaxFrameBytes) {
    throw Error(ErrorCode::kProtocol, "frame length " + std::to_string(n) + " exceeds limit");
  }
  std::string frame(4 + n, '\0');
  std::memcpy(frame.data(), header, 4);
  if (!ReadFull(fd, frame.data() + 4, n)) return {};
  return frame;
}

}  // namespace

std::pair<std::string, std::uint16_t> ParseEndpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint '" + endpoint + "' is not host:port");
  }
  int port = 0;
  try {
    port = std::stoi(endpoint.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint '" + endpoint + "' has a bad port");
  }
  if (port <= 0 || port > 65535) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint '" + endpoint + "' has a bad port");
  }
  return {endpoint.substr(0, colon), static_cast<std::uint16_t>(port)};
}

Message InProcessChannel::Call(const Message& request) {
  const std::string frame = EncodeMessage(request);
  if (tap_) tap_(frame);
  const std::string response = handler_->HandleFrame(frame);
  if (tap_) tap_(response);
  return DecodeMessage(response);
}

TcpServer::TcpServer(FrameHandler* handler) : handler_(handler) {}

TcpServer::~TcpServer() { Stop(); }

void TcpServer::Start(std::uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::kIo, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(listen_fd_, 64) < 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::kIo, "bind/listen: " + why);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { AcceptLoop(); });
}

void TcpServer::Stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
}

void TcpServer::AcceptLoop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      return;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard<std::mutex> lock(mu_);
    if (!running_) {
      ::close(fd);
      return;
    }
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { Serve(fd); });
  }
}

void TcpServer::Serve(int fd) {
  while (running_) {
    std::string response;
    bool close_after = false;
    try {
      const std::string frame = ReadFrame(fd);
      if (frame.empty()) break;
      response = handler_->HandleFrame(frame);
    } catch (const Error& e) {
      response = EncodeMessage(MakeErrorMsg(e));
      close_after = true;
    }
    if (!WriteFull(fd, response.data(), response.size()) || close_after) break;
  }
  std::lock_guard<std::mutex> lock(mu_);
  for (auto it = client_fds_.begin(); it != client_fds_.end(); ++it) {
    if (*it == fd) {
      client_fds_.erase(it);
      break;
    }
  }
  ::close(fd);
}

TcpChannel::TcpChannel(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw Error(ErrorCode::kIo, std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const std::string ip = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, ip.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw Error(ErrorCode::kInvalidArgument, "bad IPv4 host '" + host + "'");
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const std::string why = std::strerror(errno);
    ::close(fd_);
    throw Error(ErrorCode::kIo, "connect to " + host + ":" + std::to_string(port) + ": " + why);
  }
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

TcpChannel::~TcpChannel() {
  if (fd_ >= 0) ::close(fd_);
}

std::string TcpChannel::CallRaw(const std::string& bytes) {
  std::lock_guard<std::mutex> lock(mu_);
  if (!WriteFull(fd_, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::kIo, "connection closed while sending");
  }
  const std::string response = ReadFrame(fd_);
  if (response.empty()) throw Error(ErrorCode::kIo, "connection closed before a response");
  return response;
}

Message TcpChannel::Call(const Message& request) { return DecodeMessage(CallRaw(EncodeMessage(request))); }

}  // namespace tuneplex
