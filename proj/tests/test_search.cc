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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tuneplex/search.h"
#include "tuneplex/workload.h"

using namespace tuneplex;

namespace {

double Tile(std::int64_t t) { return t == 1 ? 0.8 : t == 2 ? 1.0 : t == 3 ? 0.9 : 0.7; }
double Unroll(std::int64_t u) { return u == 1 ? 0.9 : u == 2 ? 1.0 : 0.8; }

// Brute-force oracle: closed-form latency of every configuration at a fixed partition.
struct Oracle {
  OperatorSpec op;
  SearchSpace space;
  std::vector<FeatureVector> features;
  std::vector<double> latency;
  std::size_t argmin = 0;

  Oracle(const OperatorSpec& o, std::int64_t resident) : op(o), space(BuildSearchSpace(o)) {
    for (std::size_t i = 0; i < space.size(); ++i) {
      const Configuration c = space.At(i);
      const double t = static_cast<double>(c.TotalThreads());
      const double waves = std::ceil(t / resident);
      const double eff = Tile(c.Value(kTile)) * Unroll(c.Value(kUnroll));
      features.push_back(ConfigFeatures(space, c, op));
      latency.push_back(waves * (op.total_work / t / eff + 0.01) + waves * 0.05 + 0.02);
      if (latency[i] < latency[argmin]) argmin = i;
    }
  }
};

std::vector<std::pair<FeatureVector, double>> Samples(const Oracle& o,
                                                      const std::vector<std::size_t>& idx) {
  std::vector<std::pair<FeatureVector, double>> s;
  for (auto i : idx) s.emplace_back(o.features[i], o.latency[i]);
  return s;
}

double Median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
}

const OperatorSpec& HeavyOp() {
  static const ModelSpec m = LoadModelSpec(kMobilenetLike);
  return m.Operator(1);
}

}  // namespace

TEST(CostModel, SingleSampleIsConstant) {
  Oracle o(HeavyOp(), 40960);
  CostModel m;
  m.Fit(Samples(o, {5}));
  for (std::size_t i = 0; i < o.space.size(); i += 17) {
    EXPECT_NEAR(m.Predict(o.features[i]), o.latency[5], 1e-9 * o.latency[5]);
  }
}

TEST(CostModel, UnfittedIsConstant) {
  Oracle o(HeavyOp(), 40960);
  CostModel m;
  EXPECT_FALSE(m.fitted());
  for (std::size_t i = 0; i < o.space.size(); i += 31) EXPECT_EQ(m.Predict(o.features[i]), 1.0);
}

TEST(CostModel, RejectsBadSamples) {
  CostModel m;
  EXPECT_THROW(m.Fit({}), Error);
  EXPECT_THROW(m.Fit({{{1, 2}, -1.0}}), Error);
  EXPECT_THROW(m.Fit({{{1, 2}, std::nan("")}}), Error);
  EXPECT_THROW(m.Fit({{{1, 2}, 1.0}, {{1}, 1.0}}), Error);
  m.Fit({{{1, 2}, 1.0}});
  EXPECT_THROW(m.Predict({1, 2, 3}), Error);
}

TEST(CostModel, IncrementalRefitUsesUnion) {
  Oracle o(HeavyOp(), 163840);
  const auto idx = SampleIndices(o.space.size(), 100, 3);
  CostModel a, b;
  a.Fit(Samples(o, std::vector<std::size_t>(idx.begin(), idx.begin() + 50)));
  a.Fit(Samples(o, std::vector<std::size_t>(idx.begin() + 50, idx.end())));
  b.Fit(Samples(o, idx));
  EXPECT_EQ(a.num_samples(), 100u);
  for (std::size_t i = 0; i < o.space.size(); ++i) {
    ASSERT_EQ(a.Predict(o.features[i]), b.Predict(o.features[i]));
  }
}

TEST(CostModel, InSampleReplayIsFinitePositiveAndClose) {
  Oracle o(HeavyOp(), 81920);
  const auto idx = SampleIndices(o.space.size(), 128, 1);
  CostModel m;
  m.Fit(Samples(o, idx));
  for (auto i : idx) {
    const double p = m.Predict(o.features[i]);
    ASSERT_TRUE(std::isfinite(p));
    ASSERT_GT(p, 0);
    EXPECT_LT(std::abs(std::log(p / o.latency[i])), 1.0);
  }
}

// Property: 320 oracle samples give a held-out Spearman correlation of at least 0.6.
TEST(CostModel, HeldOutRankCorrelation) {
  for (const auto& name : BuiltinModelNames()) {
    const ModelSpec model = LoadModelSpec(name);
    for (int pct_resident : {16384, 40960, 163840}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Oracle o(model.operators.front(), pct_resident);
        const auto idx = SampleIndices(o.space.size(), o.space.size(), seed);
        const std::size_t train = std::min<std::size_t>(320, o.space.size() * 3 / 4);
        CostModel m;
        m.Fit(Samples(o, std::vector<std::size_t>(idx.begin(), idx.begin() + train)));
        std::vector<double> pred, truth;
        for (std::size_t k = train; k < idx.size(); ++k) {
          pred.push_back(m.Predict(o.features[idx[k]]));
          truth.push_back(o.latency[idx[k]]);
        }
        EXPECT_GE(SpearmanCorrelation(pred, truth), 0.6) << name << " " << pct_resident;
      }
    }
  }
}

TEST(Spearman, KnownValues) {
  EXPECT_DOUBLE_EQ(SpearmanCorrelation({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(SpearmanCorrelation({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(SpearmanCorrelation({1, 1, 1}, {1, 2, 3}), 0.0);
  // Average ranks for ties: x ranks 1.5,1.5,3 against 1,2,3.
  EXPECT_NEAR(SpearmanCorrelation({5, 5, 9}, {1, 2, 3}), std::sqrt(0.75), 1e-12);
  EXPECT_THROW(SpearmanCorrelation({1}, {1}), Error);
}

TEST(Explorer, ParameterValidation) {
  EXPECT_THROW(Explorer({0.0, 0.9, 500, 4}), Error);
  EXPECT_THROW(Explorer({1.0, 1.0, 500, 4}), Error);
  EXPECT_THROW(Explorer({1.0, 0.9, 500, 0}), Error);
  Explorer e;
  e.Decay();
  EXPECT_DOUBLE_EQ(e.temperature(), 0.9);
}

TEST(ProposeBatch, DistinctUnvisitedAndDeterministic) {
  Oracle o(HeavyOp(), 40960);
  std::vector<bool> visited(o.space.size(), false);
  for (std::size_t i = 0; i < visited.size(); i += 3) visited[i] = true;
  CostModel m;
  m.Fit(Samples(o, {0, 3, 6, 9, 12, 15}));
  Explorer e1, e2;
  const Proposal a = ProposeBatch(&e1, m, o.space, o.features, visited, 64, 11);
  const Proposal b = ProposeBatch(&e2, m, o.space, o.features, visited, 64, 11);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_FALSE(a.exhausted);
  ASSERT_EQ(a.indices.size(), 64u);
  EXPECT_EQ(std::set<std::size_t>(a.indices.begin(), a.indices.end()).size(), 64u);
  for (auto i : a.indices) EXPECT_FALSE(visited[i]);
  EXPECT_DOUBLE_EQ(e1.temperature(), 0.9);
}

TEST(ProposeBatch, TailOfSpaceAndExhaustion) {
  Oracle o(HeavyOp(), 40960);
  std::vector<bool> visited(o.space.size(), true);
  visited[7] = visited[300] = false;
  CostModel m;
  Explorer e;
  const Proposal p = ProposeBatch(&e, m, o.space, o.features, visited, 64, 1);
  EXPECT_TRUE(p.exhausted);
  EXPECT_EQ(std::set<std::size_t>(p.indices.begin(), p.indices.end()),
            (std::set<std::size_t>{7, 300}));
  visited[7] = visited[300] = true;
  try {
    ProposeBatch(&e, m, o.space, o.features, visited, 64, 1);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::kExhausted);
  }
  EXPECT_THROW(ProposeBatch(&e, m, o.space, o.features, visited, 0, 1), Error);
}

TEST(ProposeBatch, UnfittedFirstBatchLooksUniform) {
  // With a constant predictor every config is equally likely; check occupancy of
  // tile values over many seeds stays near the uniform share.
  Oracle o(HeavyOp(), 40960);
  const std::vector<bool> visited(o.space.size(), false);
  CostModel m;
  std::vector<int> counts(4, 0);
  int total = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Explorer e;
    for (auto i : ProposeBatch(&e, m, o.space, o.features, visited, 64, seed).indices) {
      ++counts[o.space.At(i).Value(kTile) - 1];
      ++total;
    }
  }
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / total, 0.25, 0.03);
}

// Property: after 128 oracle samples a guided batch beats a uniform random batch.
TEST(ProposeBatch, GuidedBeatsRandomAfterFit) {
  Oracle o(HeavyOp(), 40960);
  std::vector<double> guided, random;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto train = SampleIndices(o.space.size(), 128, 1000 + seed);
    std::vector<bool> visited(o.space.size(), false);
    for (auto i : train) visited[i] = true;
    CostModel m;
    m.Fit(Samples(o, train));
    Explorer e;
    double g = 0;
    for (auto i : ProposeBatch(&e, m, o.space, o.features, visited, 64, seed).indices) {
      g += o.latency[i];
    }
    guided.push_back(g / 64);
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < visited.size(); ++i) {
      if (!visited[i]) open.push_back(i);
    }
    double r = 0;
    for (auto k : SampleIndices(open.size(), 64, 5000 + seed)) r += o.latency[open[k]];
    random.push_back(r / 64);
  }
  EXPECT_LT(Median(guided), Median(random));
}

// Property: five rounds of propose, measure, refit put the optimum in the predicted top 32.
TEST(ProposeBatch, OptimumInPredictedTop32AfterFiveRounds) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Oracle o(HeavyOp(), 40960);
    std::vector<bool> visited(o.space.size(), false);
    CostModel m;
    Explorer e;
    for (int round = 0; round < 5; ++round) {
      const Proposal p = ProposeBatch(&e, m, o.space, o.features, visited, 64,
                                      MixSeed(seed, static_cast<std::uint64_t>(round)));
      for (auto i : p.indices) visited[i] = true;
      m.Fit(Samples(o, p.indices));
    }
    std::vector<std::size_t> order(o.space.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> pred(o.space.size());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = m.Predict(o.features[i]);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
    hits += std::find(order.begin(), order.begin() + 32, o.argmin) != order.begin() + 32;
  }
  EXPECT_GE(hits, 16);
}

TEST(EarlyStop, CounterSemantics) {
  EarlyStopState s{3};
  const std::vector<double> stream = {5, 4, 4.5, 4.6, 4.7};
  std::vector<bool> stops;
  for (double v : stream) stops.push_back(ObserveAndCheckStop(&s, {v, v + 1}));
  EXPECT_EQ(stops, (std::vector<bool>{false, false, false, false, true}));
  EXPECT_DOUBLE_EQ(s.best_ms, 4);

  EarlyStopState up{2};
  for (double v = 10; v > 1; v -= 1) EXPECT_FALSE(ObserveAndCheckStop(&up, {v}));

  EarlyStopState zero{0};
  EXPECT_TRUE(ObserveAndCheckStop(&zero, {1.0}));
}
