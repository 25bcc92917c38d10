// Copyright 2026 The MAVL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Training objectives. Each loss returns its value and, when asked, the
// gradient with respect to its model-side input; text embeddings are frozen
// and receive none.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "json.hpp"
#include "mavl/common.hpp"

namespace mavl {

struct LossWeights {
  double alpha = 1.0;  // fine-grained contrastive
  double beta = 1.0;   // supervised
  double gamma = 1.0;  // location
  double tau = 0.07;

  void validate() const {
    for (double w : {alpha, beta, gamma})
      if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and non-negative");
    if (!(tau > 0) || !std::isfinite(tau)) throw ConfigError("tau must be positive");
  }
};

namespace detail {

template <typename T>
T log_sum_exp(const T* v, size_t n) {
  T mx = v[0];
  for (size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  T s = 0;
  for (size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

}  // namespace detail

// L = −Σ_k log Σ_{j∈P_k} softmax_j(f·a_jk / τ), softmax over all candidate
// query sets at fixed position k. `sets` holds one rows×d matrix per
// candidate; positives[k] indexes into it. Gradient is with respect to f.
template <typename T>
T contrastive_loss(const Matrix<T>& f, const std::vector<Matrix<T>>& sets,
                   const std::vector<std::vector<int>>& positives, T tau, Matrix<T>* df = nullptr) {
  if (sets.empty()) throw ShapeMismatch("contrastive loss needs candidate query sets");
  const size_t n = sets.size();
  const auto rows = sets[0].rows();
  if (positives.size() != static_cast<size_t>(rows)) throw ShapeMismatch("need one positive set per aspect row");
  if (df) *df = Matrix<T>::Zero(1, f.cols());
  T loss = 0;
  std::vector<T> s(n), sp;
  std::vector<char> is_pos(n);
  for (Eigen::Index k = 0; k < rows; ++k) {
    const auto& pk = positives[static_cast<size_t>(k)];
    if (pk.empty()) throw EmptyPositiveSet("contrastive loss needs at least one positive");
    std::fill(is_pos.begin(), is_pos.end(), 0);
    for (int j : pk) {
      if (j < 0 || static_cast<size_t>(j) >= n) throw ShapeMismatch("positive index out of range");
      is_pos[static_cast<size_t>(j)] = 1;
    }
    sp.clear();
    for (size_t j = 0; j < n; ++j) {
      s[j] = sets[j].row(k).dot(f.row(0)) / tau;
      if (is_pos[j]) sp.push_back(s[j]);
    }
    const T lse_all = detail::log_sum_exp(s.data(), n);
    const T lse_pos = detail::log_sum_exp(sp.data(), sp.size());
    loss += lse_all - lse_pos;
    if (df) {
      for (size_t j = 0; j < n; ++j) {
        const T p = std::exp(s[j] - lse_all);
        const T q = is_pos[j] ? std::exp(s[j] - lse_pos) : T(0);
        df->row(0) += (p - q) / tau * sets[j].row(k);
      }
    }
  }
  return loss;
}

// Same positive set P at every position k.
template <typename T>
T contrastive_loss(const Matrix<T>& f, const std::vector<Matrix<T>>& sets, const std::vector<int>& positives,
                   T tau, Matrix<T>* df = nullptr) {
  if (positives.empty()) throw EmptyPositiveSet("contrastive loss needs at least one positive");
  if (sets.empty()) throw ShapeMismatch("contrastive loss needs candidate query sets");
  return contrastive_loss(f, sets, std::vector<std::vector<int>>(static_cast<size_t>(sets[0].rows()), positives),
                          tau, df);
}

// Mean over rows of two-class cross-entropy; labels[i] is the class index.
template <typename T>
T supervised_loss(const Matrix<T>& logits, const std::vector<uint8_t>& labels, Matrix<T>* dlogits = nullptr) {
  if (logits.cols() != 2 || static_cast<size_t>(logits.rows()) != labels.size())
    throw ShapeMismatch("supervised loss expects N×2 logits aligned with N labels");
  const auto n = logits.rows();
  if (dlogits) *dlogits = Matrix<T>::Zero(n, 2);
  if (n == 0) return T(0);
  T loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T row[2] = {logits(i, 0), logits(i, 1)};
    const T lse = detail::log_sum_exp(row, 2);
    const int y = labels[static_cast<size_t>(i)] ? 1 : 0;
    loss += lse - row[y];
    if (dlogits) {
      for (int c = 0; c < 2; ++c) (*dlogits)(i, c) = (std::exp(row[c] - lse) - (c == y ? T(1) : T(0))) / T(n);
    }
  }
  return loss / T(n);
}

// InfoNCE of each predicted location embedding against the M location
// sentence embeddings, averaged over entries with a stated location
// (targets[i] >= 0). Zero when no entry has one.
template <typename T>
T location_loss(const std::vector<Matrix<T>>& predicted, const std::vector<int>& targets, const Matrix<T>& table,
                T tau, std::vector<Matrix<T>>* dpred = nullptr) {
  if (predicted.size() != targets.size()) throw ShapeMismatch("location loss: predictions and targets differ in length");
  if (dpred) {
    dpred->assign(predicted.size(), Matrix<T>());
    for (size_t i = 0; i < predicted.size(); ++i) (*dpred)[i] = Matrix<T>::Zero(1, predicted[i].cols());
  }
  int located = 0;
  for (int t : targets) located += t >= 0;
  if (located == 0) return T(0);
  const auto m = static_cast<size_t>(table.rows());
  std::vector<T> s(m);
  T loss = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    const int t = targets[i];
    if (t < 0) continue;
    if (static_cast<size_t>(t) >= m) throw ShapeMismatch("location index out of range");
    for (size_t l = 0; l < m; ++l) s[l] = table.row(static_cast<Eigen::Index>(l)).dot(predicted[i].row(0)) / tau;
    const T lse = detail::log_sum_exp(s.data(), m);
    loss += lse - s[static_cast<size_t>(t)];
    if (dpred) {
      for (size_t l = 0; l < m; ++l) {
        const T g = (std::exp(s[l] - lse) - (l == static_cast<size_t>(t) ? T(1) : T(0))) / (tau * T(located));
        (*dpred)[i].row(0) += g * table.row(static_cast<Eigen::Index>(l));
      }
    }
  }
  return loss / T(located);
}

struct LossParts {
  double contrastive = 0, supervised = 0, location = 0;
};

inline double total_loss(const LossWeights& w, const LossParts& p) {
  return w.alpha * p.contrastive + w.beta * p.supervised + w.gamma * p.location;
}

inline nlohmann::json loss_weights_json(const LossWeights& w) {
  return {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}, {"tau", w.tau}};
}

}  // namespace mavl
