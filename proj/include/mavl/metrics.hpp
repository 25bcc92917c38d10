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

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mavl/common.hpp"
#include "mavl/grid.hpp"

namespace mavl {

// Mann-Whitney AUC with midranks for ties.
inline double auc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
  if (scores.size() != labels.size()) throw ShapeMismatch("auc: scores and labels differ in length");
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  size_t npos = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]]) pos_rank_sum += midrank, ++npos;
    i = j + 1;
  }
  const size_t nneg = n - npos;
  if (npos == 0 || nneg == 0) throw SingleClass("auc needs both positive and negative labels");
  const double np = static_cast<double>(npos), nn = static_cast<double>(nneg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// Midranks (1-based) with ties sharing their average rank.
inline std::vector<double> midranks(const std::vector<double>& x) {
  std::vector<size_t> order(x.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    for (size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

// Pearson correlation of the midranks; 0 when either side is constant.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeMismatch("spearman: length mismatch");
  const auto rx = midranks(x), ry = midranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < rx.size(); ++i) mx += rx[i] / n, my += ry[i] / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxx > 0 && syy > 0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

struct ThresholdMetrics {
  double f1 = 0, acc = 0, precision = 0, recall = 0;
};

// Predicted positive iff score >= threshold. F1 is 0 when precision and
// recall are both 0.
inline ThresholdMetrics threshold_metrics(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                                          double threshold = 0.5) {
  if (scores.size() != labels.size()) throw ShapeMismatch("threshold metrics: length mismatch");
  if (scores.empty()) throw ShapeMismatch("threshold metrics need at least one sample");
  size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i]) ++tp;
    else if (pred) ++fp;
    else if (labels[i]) ++fn;
    else ++tn;
  }
  ThresholdMetrics m;
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
  m.acc = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  return m;
}

struct GroundingMetrics {
  double iou = 0, dice = 0, pixel_acc = 0;
};

// Heatmap binarized at `threshold` (>=) against a 0/1 mask. Two empty sets
// score IoU = Dice = 1.
template <typename H>
GroundingMetrics grounding_metrics(const Grid<H>& heatmap, const Grid<uint8_t>& mask, double threshold) {
  if (heatmap.height != mask.height || heatmap.width != mask.width)
    throw ShapeMismatch("heatmap and mask shapes differ");
  size_t inter = 0, a = 0, b = 0, agree = 0;
  for (size_t i = 0; i < mask.data.size(); ++i) {
    const bool p = static_cast<double>(heatmap.data[i]) >= threshold;
    const bool t = mask.data[i] != 0;
    inter += p && t;
    a += p;
    b += t;
    agree += p == t;
  }
  GroundingMetrics m;
  const size_t uni = a + b - inter;
  m.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  m.dice = a + b == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
  m.pixel_acc = mask.data.empty() ? 1.0 : static_cast<double>(agree) / static_cast<double>(mask.data.size());
  return m;
}

// Bilinear resize with half-pixel centres and edge clamping.
inline Grid<double> upsample_bilinear(const Grid<double>& coarse, int height, int width) {
  Grid<double> out(height, width);
  const double sy = static_cast<double>(coarse.height) / height;
  const double sx = static_cast<double>(coarse.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, coarse.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, coarse.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, coarse.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, coarse.width - 1);
      const double tx = fx - x0;
      out.at(y, x) = (1 - ty) * ((1 - tx) * coarse.at(y0, x0) + tx * coarse.at(y0, x1)) +
                     ty * ((1 - tx) * coarse.at(y1, x0) + tx * coarse.at(y1, x1));
    }
  }
  return out;
}

// Maps to [0, 1]; a constant map becomes all zeros.
inline void minmax_normalize(Grid<double>& g) {
  if (g.data.empty()) return;
  const auto [lo, hi] = std::minmax_element(g.data.begin(), g.data.end());
  const double a = *lo, span = *hi - *lo;
  for (auto& v : g.data) v = span > 0 ? (v - a) / span : 0.0;
}

}  // namespace mavl
