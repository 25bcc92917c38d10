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

#include "mavl/eval.hpp"

#include <gtest/gtest.h>

#include "mavl/synth.hpp"

namespace mavl {
namespace {

struct Fixture {
  Corpus corpus;
  Model<float> model;
  QueryBank<float> bank;
};

ModelConfig small_config(int queries) {
  ModelConfig c;
  c.channels = {4, 8, 8, 16};
  c.heads = 2;
  c.pool_heads = 2;
  c.ffn_dim = 32;
  c.queries = queries;
  return c;
}

const Fixture& fixture() {
  static const Fixture f = [] {
    GeneratorConfig g;
    g.splits = {40, 40, 60, 60};
    g.prevalence = 0.3;
    Corpus corpus = make_split(g, synthetic_kb());
    const int total = corpus.kb.num_aspects() + 1;
    const auto cfg = small_config(total);
    auto bank = build_query_bank<float>(corpus.kb, TextEmbedder(cfg.dim(), cfg.text_seed), leading_positions(0, total));
    return Fixture{std::move(corpus), Model<float>(cfg), std::move(bank)};
  }();
  return f;
}

TEST(ContrastiveProbability, MatchesTwoWaySoftmaxMean) {
  Rng rng(1);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = rng.range(1, 6), d = rng.range(2, 8);
    const double tau = rng.uniform(0.05, 2.0);
    Matrix<double> f(1, d), a(k, d), h(k, d);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal() * 0.3;
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal() * 0.3, h.data()[i] = rng.normal() * 0.3;
    double want = 0, lo = 1, hi = 0;
    for (int r = 0; r < k; ++r) {
      const double ed = std::exp(a.row(r).dot(f.row(0)) / tau), eh = std::exp(h.row(r).dot(f.row(0)) / tau);
      const double p = ed / (ed + eh);
      want += p / k;
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    worst = std::max({worst, std::abs(contrastive_probability(f, a, h, tau) - want),
                      std::abs(contrastive_probability(f, a, h, tau, "min") - lo),
                      std::abs(contrastive_probability(f, a, h, tau, "max") - hi)});
  }
  EXPECT_LT(worst, 1e-12);
  const Matrix<double> z = Matrix<double>::Zero(1, 3);
  EXPECT_THROW(contrastive_probability(z, z, z, 1.0, "median"), ConfigError);
}

TEST(SupervisedProbability, IsSoftmaxOfPresentColumn) {
  Matrix<double> l(1, 2);
  l << 0.3, 1.7;
  EXPECT_NEAR(supervised_probability(l), std::exp(1.7) / (std::exp(0.3) + std::exp(1.7)), 1e-15);
  EXPECT_GT(sigmoid(800), 0.999);
  EXPECT_LT(sigmoid(-800), 1e-300);
}

TEST(PeakPixel, CentreOfStrongestCell) {
  Matrix<double> coarse = Matrix<double>::Zero(1, 16);
  coarse(0, 6) = 1;  // row 1, column 2 of a 4×4 grid
  EXPECT_EQ(peak_pixel(coarse, 4, 64), static_cast<size_t>((16 + 8) * 64 + 32 + 8));
  Matrix<double> tie = Matrix<double>::Ones(2, 16);
  EXPECT_EQ(peak_pixel(tie, 4, 64), static_cast<size_t>(8 * 64 + 8));
}

TEST(HeatmapImage, NormalizedAndPeaksOverStrongestCell) {
  Matrix<double> coarse(1, 4);
  coarse << 0.1, 0.2, 0.6, 0.1;
  const auto img = heatmap_image(coarse, 2, 16);
  EXPECT_EQ(img.height, 16);
  EXPECT_DOUBLE_EQ(*std::max_element(img.data.begin(), img.data.end()), 1.0);
  EXPECT_DOUBLE_EQ(*std::min_element(img.data.begin(), img.data.end()), 0.0);
  EXPECT_DOUBLE_EQ(img.at(15, 0), 1.0);
}

TEST(Predict, BothHeadsGiveProbabilityAndHeatmap) {
  const auto& f = fixture();
  const auto& img = f.corpus.split("test-seen").samples[0].image;
  for (Head h : {Head::contrastive, Head::supervised}) {
    const auto p = predict(f.model, f.bank, img, "d1", h);
    EXPECT_GT(p.probability, 0.0);
    EXPECT_LT(p.probability, 1.0);
    EXPECT_EQ(p.heatmap.height, 64);
    EXPECT_LT(p.peak, 64u * 64u);
  }
  EXPECT_THROW(predict(f.model, f.bank, img, "nope", Head::supervised), UnknownEntity);
  auto no_healthy = f.bank;
  no_healthy.names[static_cast<size_t>(healthy_index(f.bank))] = "other";
  EXPECT_THROW(zero_shot_contrastive(f.model, no_healthy, img, "d1"), MissingHealthyEntry);
}

TEST(EvaluateSplit, DeterministicAndMacroIsMean) {
  const auto& f = fixture();
  const auto& split = f.corpus.split("test-seen");
  const auto a = evaluate_split(f.model, f.bank, f.corpus.kb, split, f.corpus.seen, {Head::contrastive, Head::supervised});
  const auto b = evaluate_split(f.model, f.bank, f.corpus.kb, split, f.corpus.seen, {Head::contrastive, Head::supervised});
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].to_json().dump(), b[0].to_json().dump());
  EXPECT_EQ(a[1].to_json().dump(), b[1].to_json().dump());
  for (const auto& r : a) {
    double s = 0;
    int n = 0;
    for (const auto& d : r.diseases)
      if (d.auc) s += *d.auc, ++n;
    EXPECT_EQ(n, r.auc_diseases);
    EXPECT_NEAR(r.macro_auc, s / n, 1e-12);
    EXPECT_EQ(r.diseases.size(), f.corpus.seen.size());
  }
  // Grounding comes from the decoder and is the same in both reports.
  EXPECT_EQ(a[0].macro_iou, a[1].macro_iou);
  EXPECT_GT(a[0].grounded_diseases, 0);
  const auto& d0 = a[1].diseases[0];
  EXPECT_EQ(d0.positives + d0.negatives, static_cast<int>(split.samples.size()));
}

TEST(EvaluateSplit, HoldoutAbsentFromSeenSplitHasNoAuc) {
  const auto& f = fixture();
  const auto r = evaluate_split(f.model, f.bank, f.corpus.kb, f.corpus.split("test-seen"), f.corpus.holdout,
                                {Head::contrastive});
  for (const auto& d : r[0].diseases) {
    EXPECT_EQ(d.positives, 0);
    EXPECT_FALSE(d.auc.has_value());
  }
  EXPECT_EQ(r[0].auc_diseases, 0);
  const auto u = evaluate_split(f.model, f.bank, f.corpus.kb, f.corpus.split("test-unseen"), f.corpus.holdout,
                                {Head::contrastive});
  EXPECT_EQ(u[0].auc_diseases, 2);
}

TEST(GroundingThreshold, SelectedFromGridAndMaximizesDice) {
  const auto& f = fixture();
  const auto& valid = f.corpus.split("valid");
  const double t = select_grounding_threshold(f.model, f.bank, f.corpus.kb, valid, f.corpus.seen);
  const auto grid = threshold_grid();
  EXPECT_NE(std::find(grid.begin(), grid.end(), t), grid.end());
  EvalConfig best;
  best.grounding_threshold = t;
  const double chosen = evaluate_split(f.model, f.bank, f.corpus.kb, valid, f.corpus.seen, {Head::supervised}, best)[0].macro_dice;
  for (double g : grid) {
    EvalConfig ec;
    ec.grounding_threshold = g;
    EXPECT_LE(evaluate_split(f.model, f.bank, f.corpus.kb, valid, f.corpus.seen, {Head::supervised}, ec)[0].macro_dice,
              chosen + 1e-12);
  }
}

TEST(MetricReport, JsonAndTable) {
  const auto& f = fixture();
  const auto r = evaluate_split(f.model, f.bank, f.corpus.kb, f.corpus.split("test-seen"), {"d1", "d2"}, {Head::supervised});
  const auto j = r[0].to_json();
  EXPECT_EQ(j["head"], "supervised");
  EXPECT_TRUE(j["per_disease"].contains("d1"));
  EXPECT_NE(r[0].table().find("macro"), std::string::npos);
  EXPECT_THROW(r[0].at("d9"), UnknownEntity);
  EXPECT_EQ(parse_heads("both").size(), 2u);
  EXPECT_THROW(parse_head("fusion"), ConfigError);
}

}  // namespace
}  // namespace mavl
