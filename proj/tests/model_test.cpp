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

#include "mavl/model.hpp"

#include <gtest/gtest.h>

#include "grad_check.hpp"
#include "test_util.hpp"

namespace mavl {
namespace {

using testing::check_gradients;
using testing::tiny_loss;
using testing::tiny_model_config;
using testing::tiny_problem;
using testing::unit_rows;

constexpr double kTol = 1e-4;

void expect_gradients_match(const LossWeights& w) {
  const auto r = check_gradients(w);
  for (const auto& [group, err] : r.group_error) EXPECT_LT(err, kTol) << group;
  EXPECT_LT(r.input_error, kTol) << "image";
}

TEST(ModelGradients, ContrastiveLossMatchesFiniteDifferences) { expect_gradients_match({1, 0, 0, 0.5}); }
TEST(ModelGradients, SupervisedLossMatchesFiniteDifferences) { expect_gradients_match({0, 1, 0, 0.5}); }
TEST(ModelGradients, LocationLossMatchesFiniteDifferences) { expect_gradients_match({0, 0, 1, 0.5}); }
TEST(ModelGradients, TotalLossMatchesFiniteDifferences) { expect_gradients_match({0.7, 1.3, 0.4, 0.5}); }

TEST(ModelGradients, HeadIsolation) {
  auto p = tiny_problem();
  auto norm = [](const ModelParams<double>& g, const std::string& prefix) {
    double s = 0;
    g.visit([&](const std::string& n, const Matrix<double>& m) {
      if (n.rfind(prefix, 0) == 0) s += m.squaredNorm();
    });
    return s;
  };
  auto g = p.model.params().zeros_like();
  tiny_loss(p.model, p, p.image, {1, 0, 0, 0.5}, &g);
  EXPECT_EQ(norm(g, "cls"), 0.0);
  EXPECT_EQ(norm(g, "loc"), 0.0);
  EXPECT_EQ(norm(g, "dec"), 0.0);
  EXPECT_GT(norm(g, "pool"), 0.0);
  g = p.model.params().zeros_like();
  tiny_loss(p.model, p, p.image, {0, 1, 0, 0.5}, &g);
  EXPECT_EQ(norm(g, "pool"), 0.0);
  EXPECT_EQ(norm(g, "loc"), 0.0);
  EXPECT_GT(norm(g, "cls"), 0.0);
  g = p.model.params().zeros_like();
  tiny_loss(p.model, p, p.image, {0, 0, 1, 0.5}, &g);
  EXPECT_EQ(norm(g, "pool"), 0.0);
  EXPECT_EQ(norm(g, "cls"), 0.0);
  EXPECT_GT(norm(g, "loc"), 0.0);
}

TEST(Model, DefaultEncoderGivesFourByFourBySixtyFour) {
  const ModelConfig cfg;
  EXPECT_EQ(cfg.grid(), 4);
  EXPECT_EQ(cfg.dim(), 64);
  Model<float> model(cfg);
  Rng rng(1);
  Matrix<float> x(64 * 64, 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = static_cast<float>(rng.uniform());
  ForwardCache<float> c;
  const auto V = model.encode_image(x, c);
  EXPECT_EQ(V.rows(), 16);
  EXPECT_EQ(V.cols(), 64);
  EXPECT_THROW(model.encode_image(Matrix<float>::Zero(32 * 32, 1), c), ShapeMismatch);
}

TEST(Model, ZeroImageGivesZeroFeatureMap) {
  Model<double> model(tiny_model_config());
  ForwardCache<double> c;
  EXPECT_EQ(model.encode_image(Matrix<double>::Zero(256, 1), c).norm(), 0.0);
}

TEST(Model, PoolOverConstantMapAttendsUniformly) {
  auto cfg = tiny_model_config();
  cfg.positional = false;
  Model<double> model(cfg);
  Rng rng(2);
  Matrix<double> V(cfg.cells(), cfg.dim());
  const auto row = unit_rows(rng, 1, cfg.dim());
  for (int i = 0; i < cfg.cells(); ++i) V.row(i) = row;
  ForwardCache<double> c;
  const auto f = model.attention_pool(V, c);
  EXPECT_NEAR(f.norm(), 1.0, 1e-12);
  for (const auto& probs : c.pool_att.probs)
    for (Eigen::Index j = 0; j < probs.cols(); ++j) EXPECT_NEAR(probs(0, j), 1.0 / cfg.cells(), 1e-12);
}

TEST(Model, HeatmapIsADistributionOverCells) {
  auto p = tiny_problem();
  const auto out = p.model.forward_all(p.image, p.sets);
  ASSERT_EQ(out.heatmaps.size(), 2u);
  for (const auto& h : out.heatmaps) {
    EXPECT_EQ(h.rows(), 1);
    EXPECT_EQ(h.cols(), 4);
    EXPECT_NEAR(h.sum(), 1.0, 1e-12);
    EXPECT_GE(h.minCoeff(), 0.0);
  }
  auto cfg = tiny_model_config();
  cfg.heatmap = "per_aspect";
  Model<double> per(cfg, p.model.params());
  const auto out2 = per.forward_all(p.image, p.sets);
  EXPECT_EQ(out2.heatmaps[0].rows(), 3);
  EXPECT_TRUE(out2.heatmaps[0].colwise().mean().isApprox(out.heatmaps[0], 1e-12));
}

TEST(Model, GroundingIsPermutationEquivariantWithoutPositions) {
  auto cfg = tiny_model_config();
  cfg.positional = false;
  Model<double> model(cfg);
  Rng rng(3);
  Matrix<double> V(cfg.cells(), cfg.dim());
  for (Eigen::Index i = 0; i < V.size(); ++i) V.data()[i] = rng.normal();
  const auto Q = unit_rows(rng, cfg.queries, cfg.dim());
  const std::vector<int> perm = {2, 0, 3, 1};
  Matrix<double> Vp(V.rows(), V.cols());
  for (int i = 0; i < 4; ++i) Vp.row(i) = V.row(perm[static_cast<size_t>(i)]);
  const auto a = model.ground(Q, V), b = model.ground(Q, Vp);
  EXPECT_TRUE(a.features.isApprox(b.features, 1e-12));
  EXPECT_TRUE(a.logits.isApprox(b.logits, 1e-12));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(b.heatmap(0, i), a.heatmap(0, perm[static_cast<size_t>(i)]), 1e-12);
}

TEST(Model, ZeroClassifierGivesEvenOdds) {
  auto p = tiny_problem();
  auto cfg = tiny_model_config();
  cfg.classifier_bias = false;
  auto params = p.model.params();
  params.cls_w.setZero();
  Model<double> model(cfg, params);
  const auto out = model.forward_all(p.image, p.sets);
  for (Eigen::Index j = 0; j < out.logits.rows(); ++j) {
    const double p1 = 1.0 / (1.0 + std::exp(out.logits(j, 0) - out.logits(j, 1)));
    EXPECT_EQ(p1, 0.5);
  }
}

TEST(Model, DiseasesAreGroundedIndependently) {
  auto p = tiny_problem();
  Rng rng(4);
  const auto a = p.model.forward_all(p.image, p.sets);
  auto other = p.sets;
  other[1] = unit_rows(rng, 3, 8);
  const auto b = p.model.forward_all(p.image, other);
  EXPECT_EQ(a.logits.row(0), b.logits.row(0));
  EXPECT_EQ(a.heatmaps[0], b.heatmaps[0]);
  EXPECT_NE(a.logits.row(1), b.logits.row(1));
  EXPECT_EQ(a.f, b.f);
}

TEST(Model, WrongQueryShapesRejected) {
  auto p = tiny_problem();
  Rng rng(6);
  EXPECT_THROW(p.model.forward_all(p.image, {unit_rows(rng, 2, 8)}), ShapeMismatch);
  EXPECT_THROW(p.model.forward_all(p.image, {unit_rows(rng, 3, 6)}), ShapeMismatch);
}

TEST(Model, CheckpointRoundTripIsBitwise) {
  auto p = tiny_problem();
  const auto dir = testing::scratch_dir("model_ckpt");
  save_model(p.model, dir / "m.ckpt");
  const auto loaded = load_model<double>(dir / "m.ckpt");
  EXPECT_EQ(model_config_json(loaded.config()), model_config_json(p.model.config()));
  std::vector<Matrix<double>> a, b;
  p.model.params().visit([&](const std::string&, const Matrix<double>& m) { a.push_back(m); });
  loaded.params().visit([&](const std::string&, const Matrix<double>& m) { b.push_back(m); });
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(loaded.forward_all(p.image, p.sets).logits, p.model.forward_all(p.image, p.sets).logits);
}

TEST(Model, FloatCastAgreesWithDouble) {
  auto p = tiny_problem();
  Model<float> f(tiny_model_config(), p.model.params().cast<float>());
  std::vector<Matrix<float>> sets;
  for (const auto& s : p.sets) sets.push_back(s.cast<float>());
  const auto a = p.model.forward_all(p.image, p.sets);
  const auto b = f.forward_all(p.image.cast<float>(), sets);
  EXPECT_TRUE(a.logits.cast<float>().isApprox(b.logits, 1e-4f));
}

TEST(ModelConfig, ValidationAndJson) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(model_config_json(parse_model_config(model_config_json(c))), model_config_json(c));
  auto bad = c;
  bad.kernels = {3, 4, 2, 2};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.kernels = {4, 4};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.heads = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.image_size = 60;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_model_config({{"width", 3}}), ConfigError);
}

TEST(Model, InitialisationIsSeeded) {
  const auto cfg = tiny_model_config();
  const auto a = init_params<double>(cfg), b = init_params<double>(cfg);
  EXPECT_EQ(a.conv_w[0], b.conv_w[0]);
  EXPECT_EQ(a.layers[1].w2, b.layers[1].w2);
  auto cfg2 = cfg;
  cfg2.init_seed = 100;
  EXPECT_NE(init_params<double>(cfg2).conv_w[0], a.conv_w[0]);
}

}  // namespace
}  // namespace mavl
