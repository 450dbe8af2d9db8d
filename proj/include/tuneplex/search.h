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
 * \file tuneplex/search.h
 * \brief Surrogate cost model, simulated-annealing explorer and early stopping.
 */
#ifndef TUNEPLEX_SEARCH_H_
#define TUNEPLEX_SEARCH_H_

#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "tuneplex/workload.h"

namespace tuneplex {

struct CostModelParams {
  int n_trees = 60;
  int max_depth = 3;
  double learning_rate = 0.15;
  std::size_t min_samples_leaf = 2;
};

/*!
 * \brief Gradient-boosted regression trees on log(latency).
 *
 * Every Fit call retrains on the union of all samples seen so far. An unfitted
 * model predicts 1.0 for every input.
 */
class CostModel {
 public:
  explicit CostModel(CostModelParams params = {}) : params_(params) {}

  void Fit(const std::vector<std::pair<FeatureVector, double>>& samples);
  double Predict(const FeatureVector& f) const;
  bool fitted() const { return fitted_; }
  std::size_t num_samples() const { return targets_.size(); }

 private:
  struct Node {
    int feature = -1;
    double threshold = 0;
    int left = -1;
    int right = -1;
    double value = 0;
  };
  using Tree = std::vector<Node>;

  int Grow(Tree* tree, std::vector<std::size_t>* rows, std::size_t begin, std::size_t end,
           const std::vector<double>& residual, int depth);
  static double Evaluate(const Tree& tree, const FeatureVector& f);

  CostModelParams params_;
  std::vector<FeatureVector> features_;
  std::vector<double> targets_;
  // Per feature, every row ordered by (value, row); fixed for the duration of a Fit.
  std::vector<std::vector<std::size_t>> presorted_;
  std::vector<char> in_node_;
  std::size_t feature_length_ = 0;
  bool fitted_ = false;
  double base_ = 0;
  std::vector<Tree> trees_;
};

struct ExplorerParams {
  double temperature = 1.0;
  double decay = 0.9;
  int steps_per_batch = 500;
  int chains = 4;
};

class Explorer {
 public:
  explicit Explorer(ExplorerParams params = {});

  double temperature() const { return temperature_; }
  const ExplorerParams& params() const { return params_; }
  void Decay() { temperature_ *= params_.decay; }

 private:
  ExplorerParams params_;
  double temperature_;
};

struct Proposal {
  std::vector<std::size_t> indices;
  /*! \brief Set when fewer than n unvisited configurations remained. */
  bool exhausted = false;
};

/*!
 * \brief Draws up to n distinct unvisited configurations (as space indices).
 *
 * Annealing chains walk one-knob mutations scored by the model's log prediction;
 * the best unvisited points they touched are chosen, ties broken by a seeded key,
 * and any shortfall is filled from the rest of the space in score order.
 * features[i] must be the feature vector of space.At(i). Decays the temperature.
 */
Proposal ProposeBatch(Explorer* explorer, const CostModel& model, const SearchSpace& space,
                      const std::vector<FeatureVector>& features,
                      const std::vector<bool>& visited, std::size_t n, std::uint64_t seed);

struct EarlyStopState {
  int window = 0;
  double best_ms = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
};

/*! \brief Folds one batch (by its minimum); true once window batches failed to improve. */
bool ObserveAndCheckStop(EarlyStopState* s, const std::vector<double>& batch_results);

/*! \brief Spearman rank correlation with average ranks for ties. */
double SpearmanCorrelation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace tuneplex

#endif  // TUNEPLEX_SEARCH_H_
