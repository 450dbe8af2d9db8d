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
 * \file tuneplex/workload.h
 * \brief Synthetic DNN models, per-operator knob spaces and configuration features.
 *
 * Operators stand in for convolution tasks. Each operator carries an abstract amount
 * of work and a thread cap; its SearchSpace is the cartesian product of four schedule
 * knobs (block_size, grid_blocks, tile, unroll).
 */
#ifndef TUNEPLEX_WORKLOAD_H_
#define TUNEPLEX_WORKLOAD_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tuneplex/common.h"

namespace tuneplex {

enum class WeightClass { kHeavy, kLight };

const char* WeightClassName(WeightClass c);
WeightClass ParseWeightClass(const std::string& s);

struct OperatorSpec {
  int id = 0;
  std::string name;
  /*! \brief Abstract work units; one unit takes 1 ms on one thread at the default rate. */
  double total_work = 0;
  WeightClass weight_class = WeightClass::kHeavy;
  /*! \brief Upper bound on block_size * grid_blocks for a launchable kernel. */
  std::int64_t max_threads = 0;
  /*! \brief Parallelism floor implied by the output size; smaller launches are rejected. */
  std::int64_t min_threads = 1;

  bool operator==(const OperatorSpec&) const = default;
};

struct ModelSpec {
  std::string name;
  std::vector<OperatorSpec> operators;

  const OperatorSpec& Operator(int id) const;
  std::vector<int> OperatorIds() const;

  bool operator==(const ModelSpec&) const = default;
};

// Canonical knob names.
inline constexpr const char* kBlockSize = "block_size";
inline constexpr const char* kGridBlocks = "grid_blocks";
inline constexpr const char* kTile = "tile";
inline constexpr const char* kUnroll = "unroll";

struct Knob {
  std::string name;
  std::vector<std::int64_t> values;

  bool operator==(const Knob&) const = default;
};

/*! \brief One knob assignment. Ordered by knob name so comparisons are lexicographic. */
struct Configuration {
  std::map<std::string, std::int64_t> assignment;

  std::int64_t Value(const std::string& knob) const;
  std::int64_t TotalThreads() const { return Value(kBlockSize) * Value(kGridBlocks); }
  std::string ToString() const;

  auto operator<=>(const Configuration&) const = default;
  bool operator==(const Configuration&) const = default;
};

/*!
 * \brief Cartesian product of knob value lists.
 *
 * Configurations are addressed by a mixed-radix flat index whose most significant
 * digit is the first knob; index order is the lexicographic enumeration order.
 */
class SearchSpace {
 public:
  SearchSpace() = default;
  explicit SearchSpace(std::vector<Knob> knobs);

  const std::vector<Knob>& knobs() const { return knobs_; }
  std::size_t size() const { return size_; }

  Configuration At(std::size_t index) const;
  /*! \brief Flat index of c; throws if a knob is missing or a value is not in its list. */
  std::size_t IndexOf(const Configuration& c) const;
  bool Contains(const Configuration& c) const;
  /*! \brief Digit (value position) of knob k within flat index. */
  std::size_t Digit(std::size_t index, std::size_t knob) const;
  std::size_t WithDigit(std::size_t index, std::size_t knob, std::size_t digit) const;
  std::size_t KnobIndex(const std::string& name) const;

 private:
  std::vector<Knob> knobs_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

using FeatureVector = std::vector<double>;

// Built-in model names.
inline constexpr const char* kMobilenetLike = "mobilenet-like";
inline constexpr const char* kResnet18Like = "resnet18-like";
inline constexpr const char* kVgg19Like = "vgg19-like";

/*! \brief Heavy-operator work of the mobilenet-like model; vgg19-like uses 20x this. */
inline constexpr double kMobilenetHeavyDefaultWork = 40960;
inline constexpr std::int64_t kLightMaxThreads = 8192;

std::vector<std::string> BuiltinModelNames();

/*! \brief Loads a built-in model by name, or a JSON spec file from a path. */
ModelSpec LoadModelSpec(const std::string& name_or_path);
ModelSpec ModelSpecFromJson(const nlohmann::json& j);
nlohmann::ordered_json ModelSpecToJson(const ModelSpec& m);
/*! \brief Checks the ModelSpec invariants; throws with the offending field. */
void ValidateModelSpec(const ModelSpec& m);

SearchSpace BuildSearchSpace(const OperatorSpec& op);

/*! \brief True when c's thread count lies in [min_threads, max_threads]. */
bool Launchable(const OperatorSpec& op, const Configuration& c);

/*!
 * \brief Full enumeration (n empty) or seeded sampling without replacement.
 *
 * Sampling returns indices in draw order; it is a subset of the enumeration.
 */
std::vector<Configuration> EnumerateOrSample(const SearchSpace& space,
                                             std::optional<std::size_t> n, std::uint64_t seed);
std::vector<std::size_t> SampleIndices(std::size_t space_size, std::size_t n, std::uint64_t seed);

FeatureVector ConfigFeatures(const SearchSpace& space, const Configuration& c,
                             const OperatorSpec& op);
inline constexpr std::size_t kFeatureLength = 6;

nlohmann::ordered_json ConfigurationToJson(const Configuration& c);
Configuration ConfigurationFromJson(const nlohmann::json& j);

}  // namespace tuneplex

#endif  // TUNEPLEX_WORKLOAD_H_
