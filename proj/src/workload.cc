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
#include "tuneplex/workload.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace tuneplex {

namespace {

const std::vector<std::int64_t> kBlockLadder = {64, 128, 256, 512, 1024};
// block 1024 times these hits resident threads at 10/25/50/75/100 percent exactly.
const std::vector<std::int64_t> kGridLadder = {16, 40, 80, 120, 160, 320, 640};
const std::vector<std::int64_t> kTileValues = {1, 2, 3, 4};
const std::vector<std::int64_t> kUnrollValues = {1, 2, 4};

constexpr std::int64_t kHeavyMaxThreads = std::int64_t{1} << 22;
constexpr std::int64_t kVggMinThreads = 163840;
constexpr std::size_t kMaxSpaceSize = 100000;

OperatorSpec Heavy(int id, const std::string& name, double work) {
  return OperatorSpec{id, name, work, WeightClass::kHeavy, kHeavyMaxThreads, 1};
}

OperatorSpec Light(int id, const std::string& name, double work) {
  return OperatorSpec{id, name, work, WeightClass::kLight, kLightMaxThreads, 1};
}

ModelSpec MobilenetLike() {
  // Odd ids are the compute-heavy pointwise convolutions, even ids the depthwise ones.
  const double heavy_work[] = {40960, 24576, 32768, 49152, 57344,
                               40960, 65536, 73728, 49152, 81920};
  ModelSpec m{kMobilenetLike, {}};
  for (int id = 1; id <= 19; ++id) {
    std::ostringstream name;
    if (id % 2 == 1) {
      name << "conv2d_pw_" << id;
      m.operators.push_back(Heavy(id, name.str(), heavy_work[id / 2]));
    } else {
      name << "conv2d_dw_" << id;
      m.operators.push_back(Light(id, name.str(), 1024.0 + 128.0 * id));
    }
  }
  return m;
}

ModelSpec Resnet18Like() {
  const double heavy_work[] = {12288, 16384, 20480, 24576, 28672, 16384, 20480, 24576};
  ModelSpec m{kResnet18Like, {}};
  int heavy = 0;
  int light = 0;
  for (int id = 1; id <= 12; ++id) {
    std::ostringstream name;
    if (id == 2 || id == 5 || id == 8 || id == 11) {
      name << "conv2d_skip_" << id;
      m.operators.push_back(Light(id, name.str(), 1024.0 + 256.0 * light++));
    } else {
      name << "conv2d_" << id;
      m.operators.push_back(Heavy(id, name.str(), heavy_work[heavy++]));
    }
  }
  return m;
}

ModelSpec Vgg19Like() {
  ModelSpec m{kVgg19Like, {}};
  for (int id = 1; id <= 9; ++id) {
    OperatorSpec op = Heavy(id, "conv2d_" + std::to_string(id), 20 * kMobilenetHeavyDefaultWork);
    op.min_threads = kVggMinThreads;
    m.operators.push_back(op);
  }
  return m;
}

[[noreturn]] void FieldError(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, "malformed model spec: " + field + ": " + what);
}

}  // namespace

const char* WeightClassName(WeightClass c) { return c == WeightClass::kHeavy ? "heavy" : "light"; }

WeightClass ParseWeightClass(const std::string& s) {
  if (s == "heavy") return WeightClass::kHeavy;
  if (s == "light") return WeightClass::kLight;
  throw Error(ErrorCode::kInvalidArgument, "unknown weight_class '" + s + "'");
}

const OperatorSpec& ModelSpec::Operator(int id) const {
  if (id < 1 || static_cast<std::size_t>(id) > operators.size()) {
    throw Error(ErrorCode::kNotFound,
                "model " + name + " has no operator " + std::to_string(id));
  }
  return operators[id - 1];
}

std::vector<int> ModelSpec::OperatorIds() const {
  std::vector<int> ids;
  ids.reserve(operators.size());
  for (const auto& op : operators) ids.push_back(op.id);
  return ids;
}

std::int64_t Configuration::Value(const std::string& knob) const {
  auto it = assignment.find(knob);
  if (it == assignment.end()) {
    throw Error(ErrorCode::kInvalidArgument, "configuration is missing knob '" + knob + "'");
  }
  return it->second;
}

std::string Configuration::ToString() const {
  std::ostringstream os;
  os << "{";
  bool first = true;
  for (const auto& [k, v] : assignment) {
    if (!first) os << ",";
    os << k << "=" << v;
    first = false;
  }
  os << "}";
  return os.str();
}

SearchSpace::SearchSpace(std::vector<Knob> knobs) : knobs_(std::move(knobs)) {
  if (knobs_.empty()) throw Error(ErrorCode::kInvalidArgument, "search space has no knobs");
  strides_.assign(knobs_.size(), 1);
  size_ = 1;
  for (std::size_t k = knobs_.size(); k-- > 0;) {
    if (knobs_[k].values.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "knob '" + knobs_[k].name + "' has no values");
    }
    strides_[k] = size_;
    size_ *= knobs_[k].values.size();
  }
}

Configuration SearchSpace::At(std::size_t index) const {
  if (index >= size_) throw Error(ErrorCode::kInvalidArgument, "configuration index out of range");
  Configuration c;
  for (std::size_t k = 0; k < knobs_.size(); ++k) {
    c.assignment[knobs_[k].name] = knobs_[k].values[Digit(index, k)];
  }
  return c;
}

std::size_t SearchSpace::IndexOf(const Configuration& c) const {
  std::size_t index = 0;
  for (std::size_t k = 0; k < knobs_.size(); ++k) {
    const std::int64_t v = c.Value(knobs_[k].name);
    const auto& vals = knobs_[k].values;
    auto it = std::find(vals.begin(), vals.end(), v);
    if (it == vals.end()) {
      throw Error(ErrorCode::kInvalidArgument, "value " + std::to_string(v) + " of knob '" +
                                                   knobs_[k].name + "' is outside the space");
    }
    index += static_cast<std::size_t>(it - vals.begin()) * strides_[k];
  }
  return index;
}

bool SearchSpace::Contains(const Configuration& c) const {
  if (c.assignment.size() != knobs_.size()) return false;
  try {
    IndexOf(c);
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::size_t SearchSpace::Digit(std::size_t index, std::size_t knob) const {
  return (index / strides_[knob]) % knobs_[knob].values.size();
}

std::size_t SearchSpace::WithDigit(std::size_t index, std::size_t knob, std::size_t digit) const {
  return index - Digit(index, knob) * strides_[knob] + digit * strides_[knob];
}

std::size_t SearchSpace::KnobIndex(const std::string& name) const {
  for (std::size_t k = 0; k < knobs_.size(); ++k) {
    if (knobs_[k].name == name) return k;
  }
  throw Error(ErrorCode::kNotFound, "search space has no knob '" + name + "'");
}

std::vector<std::string> BuiltinModelNames() { return {kMobilenetLike, kResnet18Like, kVgg19Like}; }

void ValidateModelSpec(const ModelSpec& m) {
  if (m.operators.empty()) throw Error(ErrorCode::kInvalidArgument, "empty model");
  std::vector<double> heavy;
  for (std::size_t i = 0; i < m.operators.size(); ++i) {
    const auto& op = m.operators[i];
    const std::string field = "operators[" + std::to_string(i) + "]";
    if (op.id != static_cast<int>(i) + 1) {
      FieldError(field + ".id", "ids must be 1..N contiguous, got " + std::to_string(op.id));
    }
    if (!std::isfinite(op.total_work) || op.total_work <= 0) {
      FieldError(field + ".total_work", "must be a positive number");
    }
    if (op.min_threads < 1) FieldError(field + ".min_threads", "must be >= 1");
    if (op.max_threads < kBlockLadder.front() * kGridLadder.front()) {
      FieldError(field + ".max_threads", "below the smallest launchable thread count");
    }
    if (op.min_threads > std::min(op.max_threads, kBlockLadder.back() * kGridLadder.back())) {
      FieldError(field + ".min_threads", "no launchable configuration remains");
    }
    if (op.weight_class == WeightClass::kHeavy) heavy.push_back(op.total_work);
  }
  if (heavy.empty()) return;
  std::sort(heavy.begin(), heavy.end());
  const std::size_t n = heavy.size();
  const double median = n % 2 ? heavy[n / 2] : 0.5 * (heavy[n / 2 - 1] + heavy[n / 2]);
  for (std::size_t i = 0; i < m.operators.size(); ++i) {
    const auto& op = m.operators[i];
    if (op.weight_class == WeightClass::kLight && op.total_work * 10 > median) {
      FieldError("operators[" + std::to_string(i) + "].total_work",
                 "light operator must be at least 10x lighter than the median heavy operator");
    }
  }
}

ModelSpec ModelSpecFromJson(const nlohmann::json& j) {
  if (!j.is_object()) FieldError("<root>", "expected a JSON object");
  ModelSpec m;
  if (!j.contains("name") || !j["name"].is_string()) FieldError("name", "expected a string");
  m.name = j["name"].get<std::string>();
  if (!j.contains("operators") || !j["operators"].is_array()) {
    FieldError("operators", "expected an array");
  }
  const auto& ops = j["operators"];
  for (std::size_t i = 0; i < ops.size(); ++i) {
    const auto& o = ops[i];
    const std::string field = "operators[" + std::to_string(i) + "]";
    if (!o.is_object()) FieldError(field, "expected an object");
    OperatorSpec op;
    auto need = [&](const char* key) -> const nlohmann::json& {
      if (!o.contains(key)) FieldError(field + "." + key, "missing");
      return o[key];
    };
    const auto& id = need("id");
    if (!id.is_number_integer()) FieldError(field + ".id", "expected an integer");
    op.id = id.get<int>();
    const auto& name = need("name");
    if (!name.is_string()) FieldError(field + ".name", "expected a string");
    op.name = name.get<std::string>();
    const auto& work = need("total_work");
    if (!work.is_number()) FieldError(field + ".total_work", "expected a number");
    op.total_work = work.get<double>();
    const auto& wc = need("weight_class");
    if (!wc.is_string()) FieldError(field + ".weight_class", "expected \"heavy\" or \"light\"");
    try {
      op.weight_class = ParseWeightClass(wc.get<std::string>());
    } catch (const Error& e) {
      FieldError(field + ".weight_class", e.what());
    }
    const auto& mt = need("max_threads");
    if (!mt.is_number_integer()) FieldError(field + ".max_threads", "expected an integer");
    op.max_threads = mt.get<std::int64_t>();
    if (o.contains("min_threads")) {
      if (!o["min_threads"].is_number_integer()) {
        FieldError(field + ".min_threads", "expected an integer");
      }
      op.min_threads = o["min_threads"].get<std::int64_t>();
    }
    m.operators.push_back(std::move(op));
  }
  ValidateModelSpec(m);
  return m;
}

nlohmann::ordered_json ModelSpecToJson(const ModelSpec& m) {
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["operators"] = nlohmann::ordered_json::array();
  for (const auto& op : m.operators) {
    nlohmann::ordered_json o;
    o["id"] = op.id;
    o["name"] = op.name;
    o["total_work"] = op.total_work;
    o["weight_class"] = WeightClassName(op.weight_class);
    o["max_threads"] = op.max_threads;
    if (op.min_threads != 1) o["min_threads"] = op.min_threads;
    j["operators"].push_back(std::move(o));
  }
  return j;
}

ModelSpec LoadModelSpec(const std::string& name_or_path) {
  if (name_or_path == kMobilenetLike) return MobilenetLike();
  if (name_or_path == kResnet18Like) return Resnet18Like();
  if (name_or_path == kVgg19Like) return Vgg19Like();
  std::ifstream in(name_or_path);
  if (!in) {
    throw Error(ErrorCode::kNotFound, "unknown model '" + name_or_path +
                                          "' (not a built-in name or a readable file)");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                "malformed model spec: " + name_or_path + ": " + e.what());
  }
  return ModelSpecFromJson(j);
}

SearchSpace BuildSearchSpace(const OperatorSpec& op) {
  std::vector<std::int64_t> blocks;
  std::vector<std::int64_t> grids;
  if (op.weight_class == WeightClass::kHeavy) {
    blocks = kBlockLadder;
    grids = kGridLadder;
  } else {
    // Cap each list against the other's smallest value. Mixed combinations above
    // max_threads remain in the space and fail at the runner.
    for (auto b : kBlockLadder) {
      if (b * kGridLadder.front() <= op.max_threads) blocks.push_back(b);
    }
    for (auto g : kGridLadder) {
      if (kBlockLadder.front() * g <= op.max_threads) grids.push_back(g);
    }
  }
  SearchSpace space({{kBlockSize, blocks}, {kGridBlocks, grids}, {kTile, kTileValues},
                     {kUnroll, kUnrollValues}});
  if (space.size() < 2 || space.size() > kMaxSpaceSize) {
    throw Error(ErrorCode::kInvalidArgument,
                "search space size for operator " + op.name + " out of range");
  }
  return space;
}

bool Launchable(const OperatorSpec& op, const Configuration& c) {
  const std::int64_t t = c.TotalThreads();
  return t >= op.min_threads && t <= op.max_threads;
}

std::vector<std::size_t> SampleIndices(std::size_t space_size, std::size_t n, std::uint64_t seed) {
  if (n > space_size) {
    throw Error(ErrorCode::kInvalidArgument, "cannot sample " + std::to_string(n) +
                                                 " configurations from a space of " +
                                                 std::to_string(space_size));
  }
  std::vector<std::size_t> idx(space_size);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.Below(space_size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

std::vector<Configuration> EnumerateOrSample(const SearchSpace& space,
                                             std::optional<std::size_t> n, std::uint64_t seed) {
  std::vector<Configuration> out;
  if (!n) {
    out.reserve(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) out.push_back(space.At(i));
    return out;
  }
  for (auto i : SampleIndices(space.size(), *n, seed)) out.push_back(space.At(i));
  return out;
}

FeatureVector ConfigFeatures(const SearchSpace& space, const Configuration& c,
                             const OperatorSpec& op) {
  const std::int64_t block = c.Value(kBlockSize);
  const std::int64_t grid = c.Value(kGridBlocks);
  const std::size_t index = space.IndexOf(c);
  const double threads = static_cast<double>(block) * static_cast<double>(grid);
  return {std::log2(static_cast<double>(block)),
          std::log2(static_cast<double>(grid)),
          std::log2(threads),
          static_cast<double>(space.Digit(index, space.KnobIndex(kTile))),
          static_cast<double>(space.Digit(index, space.KnobIndex(kUnroll))),
          std::log2(op.total_work / threads)};
}

nlohmann::ordered_json ConfigurationToJson(const Configuration& c) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : c.assignment) j[k] = v;
  return j;
}

Configuration ConfigurationFromJson(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kProtocol, "configuration must be an object");
  Configuration c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number_integer()) {
      throw Error(ErrorCode::kProtocol, "knob '" + it.key() + "' must be an integer");
    }
    c.assignment[it.key()] = it.value().get<std::int64_t>();
  }
  return c;
}

}  // namespace tuneplex
