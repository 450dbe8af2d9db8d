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
#include "tuneplex/search.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace tuneplex {

void CostModel::Fit(const std::vector<std::pair<FeatureVector, double>>& samples) {
  if (samples.empty() && targets_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "cost model needs at least one sample");
  }
  for (const auto& [f, ms] : samples) {
    if (!std::isfinite(ms) || ms <= 0) {
      throw Error(ErrorCode::kInvalidArgument, "cost model sample latency must be finite and > 0");
    }
    if (feature_length_ == 0) feature_length_ = f.size();
    if (f.size() != feature_length_ || f.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "cost model sample has wrong feature length");
    }
    for (double v : f) {
      if (!std::isfinite(v)) throw Error(ErrorCode::kInvalidArgument, "non-finite feature");
    }
  }
  for (const auto& [f, ms] : samples) {
    features_.push_back(f);
    targets_.push_back(std::log(ms));
  }

  const std::size_t n = targets_.size();
  base_ = std::accumulate(targets_.begin(), targets_.end(), 0.0) / static_cast<double>(n);
  trees_.clear();
  std::vector<double> pred(n, base_);
  std::vector<double> residual(n);
  std::vector<std::size_t> rows(n);
  presorted_.assign(feature_length_, std::vector<std::size_t>(n));
  for (std::size_t f = 0; f < feature_length_; ++f) {
    auto& order = presorted_[f];
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(features_[a][f], a) < std::tie(features_[b][f], b);
    });
  }
  in_node_.assign(n, 0);
  for (int t = 0; t < params_.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = targets_[i] - pred[i];
    std::iota(rows.begin(), rows.end(), 0);
    Tree tree;
    Grow(&tree, &rows, 0, n, residual, 0);
    for (std::size_t i = 0; i < n; ++i) pred[i] += Evaluate(tree, features_[i]);
    trees_.push_back(std::move(tree));
  }
  fitted_ = true;
}

int CostModel::Grow(Tree* tree, std::vector<std::size_t>* rows, std::size_t begin,
                    std::size_t end, const std::vector<double>& residual, int depth) {
  const int id = static_cast<int>(tree->size());
  tree->push_back(Node{});
  const std::size_t count = end - begin;
  double sum = 0;
  for (std::size_t i = begin; i < end; ++i) sum += residual[(*rows)[i]];
  (*tree)[id].value = params_.learning_rate * sum / static_cast<double>(count);
  if (depth >= params_.max_depth || count < 2 * params_.min_samples_leaf) return id;

  // Exact greedy split maximizing the reduction in squared error.
  double best_gain = 1e-12;
  int best_feature = -1;
  double best_threshold = 0;
  // Filtering the presorted orders yields the node's rows in (value, row) order
  // without sorting at every node.
  for (std::size_t i = begin; i < end; ++i) in_node_[(*rows)[i]] = 1;
  std::vector<std::size_t> order;
  order.reserve(count);
  for (std::size_t f = 0; f < feature_length_; ++f) {
    order.clear();
    for (std::size_t r : presorted_[f]) {
      if (in_node_[r]) order.push_back(r);
    }
    double left_sum = 0;
    for (std::size_t i = 0; i + 1 < count; ++i) {
      left_sum += residual[order[i]];
      const double here = features_[order[i]][f];
      const double next = features_[order[i + 1]][f];
      if (here == next) continue;
      const std::size_t nl = i + 1;
      const std::size_t nr = count - nl;
      if (nl < params_.min_samples_leaf || nr < params_.min_samples_leaf) continue;
      const double right_sum = sum - left_sum;
      const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr -
                          sum * sum / static_cast<double>(count);
      if (gain > best_gain) {
        best_gain = gain;
        best_feature = static_cast<int>(f);
        best_threshold = 0.5 * (here + next);
      }
    }
  }
  for (std::size_t i = begin; i < end; ++i) in_node_[(*rows)[i]] = 0;
  if (best_feature < 0) return id;

  auto mid = std::stable_partition(rows->begin() + begin, rows->begin() + end, [&](std::size_t r) {
    return features_[r][best_feature] < best_threshold;
  });
  const std::size_t split = static_cast<std::size_t>(mid - rows->begin());
  (*tree)[id].feature = best_feature;
  (*tree)[id].threshold = best_threshold;
  const int left = Grow(tree, rows, begin, split, residual, depth + 1);
  const int right = Grow(tree, rows, split, end, residual, depth + 1);
  (*tree)[id].left = left;
  (*tree)[id].right = right;
  return id;
}

double CostModel::Evaluate(const Tree& tree, const FeatureVector& f) {
  int node = 0;
  while (tree[node].feature >= 0) {
    node = f[tree[node].feature] < tree[node].threshold ? tree[node].left : tree[node].right;
  }
  return tree[node].value;
}

double CostModel::Predict(const FeatureVector& f) const {
  if (feature_length_ != 0 && f.size() != feature_length_) {
    throw Error(ErrorCode::kInvalidArgument, "feature length " + std::to_string(f.size()) +
                                                 " does not match the model's " +
                                                 std::to_string(feature_length_));
  }
  if (!fitted_) return 1.0;
  double y = base_;
  for (const auto& tree : trees_) y += Evaluate(tree, f);
  return std::exp(y);
}

Explorer::Explorer(ExplorerParams params) : params_(params), temperature_(params.temperature) {
  if (!(params_.temperature > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "explorer temperature must be positive");
  }
  if (!(params_.decay > 0 && params_.decay < 1)) {
    throw Error(ErrorCode::kInvalidArgument, "explorer decay must be in (0, 1)");
  }
  if (params_.steps_per_batch < 0 || params_.chains < 1) {
    throw Error(ErrorCode::kInvalidArgument, "explorer needs >= 1 chain and >= 0 steps");
  }
}

Proposal ProposeBatch(Explorer* explorer, const CostModel& model, const SearchSpace& space,
                      const std::vector<FeatureVector>& features,
                      const std::vector<bool>& visited, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  const std::size_t size = space.size();
  if (features.size() != size || visited.size() != size) {
    throw Error(ErrorCode::kInvalidArgument, "feature or visited table does not match the space");
  }
  std::vector<std::size_t> open;
  for (std::size_t i = 0; i < size; ++i) {
    if (!visited[i]) open.push_back(i);
  }
  if (open.empty()) throw Error(ErrorCode::kExhausted, "search space is exhausted");

  Rng rng(seed);
  std::vector<double> score(size);
  std::vector<std::uint64_t> tie(size);
  for (std::size_t i = 0; i < size; ++i) {
    score[i] = std::log(model.Predict(features[i]));
    tie[i] = rng.Next();
  }
  auto better = [&](std::size_t a, std::size_t b) {
    return std::tie(score[a], tie[a]) < std::tie(score[b], tie[b]);
  };

  Proposal out;
  if (open.size() <= n) {
    out.exhausted = open.size() < n;
    std::sort(open.begin(), open.end(), better);
    out.indices = std::move(open);
    explorer->Decay();
    return out;
  }

  const double temp = explorer->temperature();
  const std::size_t num_knobs = space.knobs().size();
  std::vector<bool> touched(size, false);
  for (int c = 0; c < explorer->params().chains; ++c) {
    std::size_t cur = open[rng.Below(open.size())];
    touched[cur] = true;
    for (int s = 0; s < explorer->params().steps_per_batch; ++s) {
      const std::size_t k = rng.Below(num_knobs);
      const std::size_t card = space.knobs()[k].values.size();
      if (card < 2) continue;
      std::size_t digit = rng.Below(card - 1);
      if (digit >= space.Digit(cur, k)) ++digit;
      const std::size_t next = space.WithDigit(cur, k, digit);
      const double delta = score[next] - score[cur];
      if (delta <= 0 || rng.Uniform() < std::exp(-delta / temp)) {
        cur = next;
        touched[cur] = true;
      }
    }
  }

  std::vector<std::size_t> walked;
  std::vector<std::size_t> rest;
  for (std::size_t i : open) (touched[i] ? walked : rest).push_back(i);
  std::sort(walked.begin(), walked.end(), better);
  std::sort(rest.begin(), rest.end(), better);
  for (std::size_t i = 0; i < walked.size() && out.indices.size() < n; ++i) {
    out.indices.push_back(walked[i]);
  }
  for (std::size_t i = 0; i < rest.size() && out.indices.size() < n; ++i) {
    out.indices.push_back(rest[i]);
  }
  explorer->Decay();
  return out;
}

bool ObserveAndCheckStop(EarlyStopState* s, const std::vector<double>& batch_results) {
  double batch_min = std::numeric_limits<double>::infinity();
  for (double v : batch_results) batch_min = std::min(batch_min, v);
  if (batch_min < s->best_ms) {
    s->best_ms = batch_min;
    s->since_improvement = 0;
  } else {
    s->since_improvement += 1;
  }
  return s->since_improvement >= s->window;
}

namespace {

std::vector<double> Ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double SpearmanCorrelation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "Spearman needs two equal-length series of >= 2");
  }
  const auto ra = Ranks(a);
  const auto rb = Ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0;
  double va = 0;
  double vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0 || vb == 0) return 0;
  return cov / std::sqrt(va * vb);
}

}  // namespace tuneplex
