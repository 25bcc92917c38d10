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

// Central finite-difference checks of the full model on a tiny float64
// configuration: d=8, 2×2 feature grid, two diseases, two aspects.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mavl/losses.hpp"
#include "mavl/model.hpp"

namespace mavl::testing {

inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.image_size = 16;
  c.channels = {4, 8, 8};
  c.kernels = {4, 4, 2};
  c.pool_heads = 2;
  c.heads = 2;
  c.layers = 2;
  c.ffn_dim = 16;
  c.queries = 3;  // definition + K=2 aspects
  c.tau = 0.5;
  c.init_seed = 99;
  return c;
}

struct TinyProblem {
  Model<double> model;
  Matrix<double> image;
  std::vector<Matrix<double>> sets;  // N=2 query sets
  Matrix<double> locations;          // M=3 unit rows
  std::vector<int> positives = {0};
  std::vector<uint8_t> labels = {1, 0};
  std::vector<int> targets = {2, -1};
};

inline Matrix<double> unit_rows(Rng& rng, int rows, int d) {
  Matrix<double> m(rows, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  for (int r = 0; r < rows; ++r) m.row(r).normalize();
  return m;
}

// Every parameter gets a random offset so that biases, gains and
// positions all carry non-trivial gradients.
inline TinyProblem tiny_problem(uint64_t seed = 5) {
  const ModelConfig cfg = tiny_model_config();
  auto params = init_params<double>(cfg);
  Rng rng(seed);
  params.visit([&](const std::string&, Matrix<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.1 * rng.normal();
  });
  TinyProblem p{Model<double>(cfg, std::move(params)), Matrix<double>(cfg.image_size * cfg.image_size, 1), {}, {}};
  for (Eigen::Index i = 0; i < p.image.size(); ++i) p.image(i) = rng.uniform();
  for (int j = 0; j < 2; ++j) p.sets.push_back(unit_rows(rng, cfg.queries, cfg.dim()));
  p.locations = unit_rows(rng, 3, cfg.dim());
  return p;
}

// α·L_cl + β·L_sup + γ·L_loc for one sample; accumulates parameter
// gradients and, optionally, the image gradient.
inline double tiny_loss(const Model<double>& model, const TinyProblem& p, const Matrix<double>& image,
                        const LossWeights& w, ModelParams<double>* grads = nullptr, Matrix<double>* dimage = nullptr) {
  typename Model<double>::Options opt;
  opt.diseases = {0, 1};
  ForwardCache<double> c;
  model.forward(image, p.sets, opt, c);
  typename Model<double>::Upstream up;
  Matrix<double> df;
  double total = w.alpha * contrastive_loss(c.f, p.sets, p.positives, w.tau, &df);
  up.df = df * w.alpha;
  Matrix<double> logits(2, 2), dlogits;
  std::vector<Matrix<double>> preds, dpred;
  for (int j = 0; j < 2; ++j) {
    logits.row(j) = c.ground[static_cast<size_t>(j)].logits.row(0);
    preds.push_back(c.ground[static_cast<size_t>(j)].location);
  }
  total += w.beta * supervised_loss(logits, p.labels, &dlogits);
  total += w.gamma * location_loss(preds, p.targets, p.locations, w.tau, &dpred);
  for (int j = 0; j < 2; ++j) {
    up.dlogits.push_back(dlogits.row(j) * w.beta);
    up.dlocation.push_back(dpred[static_cast<size_t>(j)] * w.gamma);
  }
  if (grads) model.backward(c, up, *grads, dimage);
  return total;
}

struct GradCheck {
  std::map<std::string, double> group_error;  // conv, pool, dec, cls, loc
  double input_error = 0;
  double worst() const {
    double w = input_error;
    for (const auto& [_, e] : group_error) w = std::max(w, e);
    return w;
  }
};

// ‖a − n‖ / max(‖a‖ + ‖n‖, 1e-12); zero when both sides vanish.
inline double relative_error(double diff2, double a2, double n2) {
  const double den = std::sqrt(a2) + std::sqrt(n2);
  return den < 1e-12 ? 0.0 : std::sqrt(diff2) / den;
}

inline GradCheck check_gradients(const LossWeights& w, uint64_t seed = 5, double h = 1e-6) {
  TinyProblem p = tiny_problem(seed);
  ModelParams<double> grads = p.model.params().zeros_like();
  Matrix<double> dimage;
  tiny_loss(p.model, p, p.image, w, &grads, &dimage);

  std::vector<std::pair<std::string, Matrix<double>*>> live, analytic;
  p.model.params().visit([&](const std::string& n, Matrix<double>& m) { live.emplace_back(n, &m); });
  grads.visit([&](const std::string& n, Matrix<double>& m) { analytic.emplace_back(n, &m); });

  std::map<std::string, std::array<double, 3>> acc;  // diff², analytic², numeric²
  for (size_t t = 0; t < live.size(); ++t) {
    const std::string group = live[t].first.substr(0, live[t].first.find_first_of(".0123456789"));
    auto& a = acc[group];
    Matrix<double>& m = *live[t].second;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + h;
      const double lp = tiny_loss(p.model, p, p.image, w);
      m.data()[i] = saved - h;
      const double lm = tiny_loss(p.model, p, p.image, w);
      m.data()[i] = saved;
      const double num = (lp - lm) / (2 * h), ana = analytic[t].second->data()[i];
      a[0] += (num - ana) * (num - ana);
      a[1] += ana * ana;
      a[2] += num * num;
    }
  }
  GradCheck out;
  for (const auto& [g, a] : acc) out.group_error[g] = relative_error(a[0], a[1], a[2]);

  std::array<double, 3> ai{};
  for (Eigen::Index i = 0; i < p.image.size(); ++i) {
    Matrix<double> xp = p.image, xm = p.image;
    xp(i) += h;
    xm(i) -= h;
    const double num = (tiny_loss(p.model, p, xp, w) - tiny_loss(p.model, p, xm, w)) / (2 * h);
    ai[0] += (num - dimage(i)) * (num - dimage(i));
    ai[1] += dimage(i) * dimage(i);
    ai[2] += num * num;
  }
  out.input_error = relative_error(ai[0], ai[1], ai[2]);
  return out;
}

}  // namespace mavl::testing
