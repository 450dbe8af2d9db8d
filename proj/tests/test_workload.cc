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
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tuneplex/workload.h"

using namespace tuneplex;

namespace {

// Independent enumeration of the canonical ladders; kept apart from the library on purpose.
const std::vector<std::int64_t> kBlocks = {64, 128, 256, 512, 1024};
const std::vector<std::int64_t> kGrids = {16, 40, 80, 120, 160, 320, 640};

std::size_t BruteForceSize(const OperatorSpec& op) {
  std::size_t blocks = 0, grids = 0;
  for (auto b : kBlocks) blocks += op.weight_class == WeightClass::kHeavy || b * 16 <= op.max_threads;
  for (auto g : kGrids) grids += op.weight_class == WeightClass::kHeavy || 64 * g <= op.max_threads;
  return blocks * grids * 4 * 3;
}

}  // namespace

TEST(ModelSpec, BuiltinShapes) {
  const ModelSpec mob = LoadModelSpec(kMobilenetLike);
  const ModelSpec res = LoadModelSpec(kResnet18Like);
  const ModelSpec vgg = LoadModelSpec(kVgg19Like);
  EXPECT_EQ(mob.operators.size(), 19u);
  EXPECT_EQ(res.operators.size(), 12u);
  EXPECT_EQ(vgg.operators.size(), 9u);
  for (int id : {2, 5, 8, 11}) {
    EXPECT_EQ(res.Operator(id).weight_class, WeightClass::kLight) << id;
  }
  for (const auto& op : vgg.operators) {
    EXPECT_EQ(op.weight_class, WeightClass::kHeavy);
    EXPECT_DOUBLE_EQ(op.total_work, 20 * kMobilenetHeavyDefaultWork);
  }
  for (const auto& m : {mob, res, vgg}) {
    EXPECT_NO_THROW(ValidateModelSpec(m));
    for (std::size_t i = 0; i < m.operators.size(); ++i) EXPECT_EQ(m.operators[i].id, int(i) + 1);
  }
}

TEST(ModelSpec, JsonRoundTrip) {
  for (const auto& name : BuiltinModelNames()) {
    const ModelSpec m = LoadModelSpec(name);
    EXPECT_EQ(ModelSpecFromJson(ModelSpecToJson(m)), m) << name;
  }
}

TEST(ModelSpec, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "tuneplex_spec_test.json";
  ModelSpec m = LoadModelSpec(kResnet18Like);
  m.name = "custom";
  std::ofstream(path) << ModelSpecToJson(m).dump();
  EXPECT_EQ(LoadModelSpec(path.string()), m);
  std::filesystem::remove(path);
}

TEST(ModelSpec, UnknownNameIsAnError) {
  EXPECT_THROW(LoadModelSpec("alexnet-like"), Error);
}

TEST(ModelSpec, ErrorsNameTheField) {
  auto j = nlohmann::json(ModelSpecToJson(LoadModelSpec(kResnet18Like)));
  auto expect_field = [](const nlohmann::json& bad, const std::string& field) {
    try {
      ModelSpecFromJson(bad);
      FAIL() << "accepted bad spec, expected complaint about " << field;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  auto missing = j;
  missing["operators"][3].erase("total_work");
  expect_field(missing, "operators[3].total_work");

  auto heavy_light = j;
  heavy_light["operators"][1]["total_work"] = 100000.0;
  expect_field(heavy_light, "operators[1].total_work");

  auto bad_id = j;
  bad_id["operators"][0]["id"] = 7;
  expect_field(bad_id, "operators[0].id");

  auto floor = j;
  floor["operators"][0]["min_threads"] = 1 << 23;
  expect_field(floor, "operators[0].min_threads");

  auto cls = j;
  cls["operators"][0]["weight_class"] = "medium";
  EXPECT_THROW(ModelSpecFromJson(cls), Error);
}

TEST(SearchSpace, SizesMatchBruteForce) {
  for (const auto& name : BuiltinModelNames()) {
    for (const auto& op : LoadModelSpec(name).operators) {
      const SearchSpace s = BuildSearchSpace(op);
      EXPECT_EQ(s.size(), BruteForceSize(op)) << name << " op " << op.id;
      EXPECT_EQ(s.size(), op.weight_class == WeightClass::kHeavy ? 420u : 192u);
    }
  }
}

TEST(SearchSpace, IndexRoundTripIsABijection) {
  for (const auto& op : LoadModelSpec(kMobilenetLike).operators) {
    const SearchSpace s = BuildSearchSpace(op);
    std::set<Configuration> seen;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const Configuration c = s.At(i);
      ASSERT_EQ(s.IndexOf(c), i);
      ASSERT_TRUE(s.Contains(c));
      seen.insert(c);
    }
    EXPECT_EQ(seen.size(), s.size());
  }
}

TEST(SearchSpace, WithDigitChangesOnlyThatKnob) {
  const SearchSpace s = BuildSearchSpace(LoadModelSpec(kResnet18Like).Operator(1));
  for (std::size_t i = 0; i < s.size(); i += 7) {
    for (std::size_t k = 0; k < s.knobs().size(); ++k) {
      for (std::size_t d = 0; d < s.knobs()[k].values.size(); ++d) {
        const std::size_t j = s.WithDigit(i, k, d);
        EXPECT_EQ(s.Digit(j, k), d);
        for (std::size_t o = 0; o < s.knobs().size(); ++o) {
          if (o != k) EXPECT_EQ(s.Digit(j, o), s.Digit(i, o));
        }
      }
    }
  }
}

TEST(SearchSpace, ContainsRejectsForeignConfigurations) {
  const SearchSpace s = BuildSearchSpace(LoadModelSpec(kResnet18Like).Operator(1));
  Configuration c = s.At(0);
  c.assignment[kGridBlocks] = 17;
  EXPECT_FALSE(s.Contains(c));
  EXPECT_THROW(s.IndexOf(c), Error);
  Configuration extra = s.At(0);
  extra.assignment["vector"] = 4;
  EXPECT_FALSE(s.Contains(extra));
  Configuration missing = s.At(0);
  missing.assignment.erase(kTile);
  EXPECT_FALSE(s.Contains(missing));
  EXPECT_THROW(s.At(s.size()), Error);
}

TEST(SearchSpace, EmptyKnobRejected) {
  EXPECT_THROW(SearchSpace(std::vector<Knob>{}), Error);
  EXPECT_THROW(SearchSpace(std::vector<Knob>{Knob{"a", {}}}), Error);
}

TEST(SearchSpace, HeavyReachesEveryResidentCount) {
  // 80 SMs x 2048 threads at 10/25/50/75/100 percent.
  const SearchSpace s = BuildSearchSpace(LoadModelSpec(kMobilenetLike).Operator(1));
  std::set<std::int64_t> threads;
  for (std::size_t i = 0; i < s.size(); ++i) threads.insert(s.At(i).TotalThreads());
  for (std::int64_t r : {16384, 40960, 81920, 122880, 163840}) EXPECT_TRUE(threads.count(r)) << r;
}

TEST(SearchSpace, LaunchableHonoursFloorAndCap) {
  const OperatorSpec vgg = LoadModelSpec(kVgg19Like).Operator(1);
  const SearchSpace s = BuildSearchSpace(vgg);
  std::size_t launchable = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Configuration c = s.At(i);
    const bool expect = c.TotalThreads() >= 163840 && c.TotalThreads() <= vgg.max_threads;
    EXPECT_EQ(Launchable(vgg, c), expect);
    launchable += expect;
  }
  // (1024,160) (1024,320) (1024,640) (512,320) (512,640) (256,640), times 12 tile/unroll.
  EXPECT_EQ(launchable, 72u);

  const OperatorSpec light = LoadModelSpec(kResnet18Like).Operator(2);
  const SearchSpace ls = BuildSearchSpace(light);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    EXPECT_EQ(Launchable(light, ls.At(i)), ls.At(i).TotalThreads() <= kLightMaxThreads);
  }
}

TEST(Features, MatchKnobs) {
  SearchSpace s({{kBlockSize, {128, 256}}, {kGridBlocks, {32, 64}}, {kTile, {1, 2, 3, 4}},
                 {kUnroll, {1, 2, 4}}});
  OperatorSpec op{1, "op", 16384 * 8, WeightClass::kHeavy, 1 << 22, 1};
  Configuration c;
  c.assignment = {{kBlockSize, 256}, {kGridBlocks, 64}, {kTile, 3}, {kUnroll, 4}};
  const FeatureVector f = ConfigFeatures(s, c, op);
  ASSERT_EQ(f.size(), kFeatureLength);
  EXPECT_DOUBLE_EQ(f[0], 8.0);
  EXPECT_DOUBLE_EQ(f[1], 6.0);
  EXPECT_DOUBLE_EQ(f[2], 14.0);
  EXPECT_DOUBLE_EQ(f[3], 2.0);
  EXPECT_DOUBLE_EQ(f[4], 2.0);
  EXPECT_DOUBLE_EQ(f[5], 3.0);
}

TEST(Sampling, DistinctDeterministicAndBounded) {
  for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
    const auto a = SampleIndices(420, 64, seed);
    const auto b = SampleIndices(420, 64, seed);
    EXPECT_EQ(a, b);
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 64u);
    for (auto i : a) EXPECT_LT(i, 420u);
  }
  EXPECT_NE(SampleIndices(420, 64, 1), SampleIndices(420, 64, 2));
  EXPECT_EQ(SampleIndices(10, 10, 3).size(), 10u);
  EXPECT_THROW(SampleIndices(10, 11, 3), Error);
}

TEST(Sampling, EnumerateCoversSpaceInOrder) {
  const SearchSpace s = BuildSearchSpace(LoadModelSpec(kResnet18Like).Operator(2));
  const auto all = EnumerateOrSample(s, std::nullopt, 0);
  ASSERT_EQ(all.size(), s.size());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], s.At(i));
  EXPECT_EQ(EnumerateOrSample(s, 5, 4).size(), 5u);
}

TEST(Configuration, JsonRoundTripAndTypeErrors) {
  const SearchSpace s = BuildSearchSpace(LoadModelSpec(kMobilenetLike).Operator(3));
  for (std::size_t i = 0; i < s.size(); i += 13) {
    EXPECT_EQ(ConfigurationFromJson(ConfigurationToJson(s.At(i))), s.At(i));
  }
  EXPECT_THROW(ConfigurationFromJson(nlohmann::json::array()), Error);
  EXPECT_THROW(ConfigurationFromJson(nlohmann::json{{"tile", 1.5}}), Error);
  EXPECT_THROW(Configuration{}.Value(kTile), Error);
}
