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
 * \file tuneplex/common.h
 * \brief Error type, virtual-time units and the deterministic RNG shared by all modules.
 */
#ifndef TUNEPLEX_COMMON_H_
#define TUNEPLEX_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tuneplex {

enum class ErrorCode {
  kInvalidArgument,
  kNotFound,
  kCapacityExceeded,
  kInvalidState,
  kProtocol,
  kIo,
  kExhausted,
  kAborted,
};

const char* ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

/*! \brief Virtual time is kept in integer nanoseconds so that bucket sums are exact. */
using Nanos = std::int64_t;

Nanos MsToNanos(double ms);
inline double NanosToMs(Nanos ns) { return static_cast<double>(ns) / 1e6; }
inline double NanosToMinutes(Nanos ns) { return static_cast<double>(ns) / 6e10; }

/*!
 * \brief Seeded generator with library-independent bounded draws.
 *
 * std::uniform_*_distribution is implementation defined, so draws are derived
 * from the raw mt19937_64 stream to keep results identical across toolchains.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t Next() { return engine_(); }
  /*! \brief Uniform integer in [0, bound). bound must be positive. */
  std::uint64_t Below(std::uint64_t bound);
  /*! \brief Uniform real in [0, 1). */
  double Uniform();

 private:
  std::mt19937_64 engine_;
};

/*! \brief splitmix64 finalizer; used to derive independent seeds. */
std::uint64_t MixSeed(std::uint64_t a, std::uint64_t b);

}  // namespace tuneplex

#endif  // TUNEPLEX_COMMON_H_
