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

#include "mavl/report.hpp"

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace mavl {
namespace {

class ReportTest : public ::testing::Test {
 protected:
  void SetUp() override { kb_ = load_kb(testing::fixture("kb.sample")); }
  KnowledgeBase kb_;
};

TEST_F(ReportTest, ParsesNegationAndLocationPerSentence) {
  const auto r = parse_report("No pneumothorax. Edema in left lung.", kb_);
  const std::vector<EntityTriplet> want = {{"pneumothorax", std::nullopt, 0},
                                           {"edema", "left lung", 1}};
  EXPECT_EQ(r.triplets, want);
  EXPECT_EQ(r.dropped, 0);
}

TEST_F(ReportTest, EmptyReportYieldsNothing) {
  const auto r = parse_report("", kb_);
  EXPECT_TRUE(r.triplets.empty());
  EXPECT_EQ(r.dropped, 0);
}

TEST_F(ReportTest, SynonymsLongestMatchAndDroppedSentences) {
  const auto r = parse_report(
      "Pulmonary edema is seen in the right lung. The heart is normal. Lungs are free of effusion",
      kb_);
  const std::vector<EntityTriplet> want = {{"edema", "right lung", 1},
                                           {"pleural effusion", std::nullopt, 0}};
  EXPECT_EQ(r.triplets, want);
  EXPECT_EQ(r.dropped, 1);
  // "d1" must not match inside "d10".
  const auto r2 = parse_report("D10 in the left upper lung.", kb_);
  ASSERT_EQ(r2.triplets.size(), 1u);
  EXPECT_EQ(r2.triplets[0].entity, "d10");
  EXPECT_EQ(r2.triplets[0].location, "left upper lung");
}

TEST_F(ReportTest, WithoutCueNegates) {
  const auto r = parse_report("The study is without cardiomegaly.", kb_);
  ASSERT_EQ(r.triplets.size(), 1u);
  EXPECT_EQ(r.triplets[0].exist, 0);
}

TEST_F(ReportTest, TargetsFromSingleTriplet) {
  KnowledgeBase kb;
  kb.aspect_names = {"texture"};
  kb.locations = {"l1", "l2"};
  for (const char* n : {"c1", "c2", "c3"}) kb.diseases.push_back({n, "def", {"t"}, true});
  const auto t = build_targets({{"c2", "l1", 1}}, kb);
  EXPECT_EQ(t.presence, (std::vector<uint8_t>{0, 1, 0}));
  EXPECT_EQ(t.location_index[1], 0);
  EXPECT_EQ(t.location_index[0], kNoLocation);

  const auto empty = build_targets({}, kb);
  EXPECT_EQ(empty.presence, (std::vector<uint8_t>{0, 0, 0}));

  const auto last = build_targets({{"c1", std::nullopt, 1}, {"c1", std::nullopt, 0}}, kb);
  EXPECT_EQ(last.presence[0], 0);
}

TEST_F(ReportTest, StrictAndLenientResolution) {
  EXPECT_THROW(build_targets({{"unknown", std::nullopt, 1}}, kb_, true), UnknownEntity);
  EXPECT_THROW(build_targets({{"edema", "kidney", 1}}, kb_, true), UnknownLocation);
  const auto lenient = build_targets({{"unknown", std::nullopt, 1}, {"edema", "kidney", 1}}, kb_);
  const auto j = static_cast<size_t>(*kb_.disease_index("edema"));
  EXPECT_EQ(lenient.presence[j], 1);
  EXPECT_EQ(lenient.location_index[j], kNoLocation);
  int total = 0;
  for (auto p : lenient.presence) total += p;
  EXPECT_EQ(total, 1);
}

// Location is set only where presence is 1.
TEST_F(ReportTest, NegatedMentionCarriesNoTargetLocation) {
  const auto t = build_targets({{"edema", "left lung", 0}}, kb_);
  const auto j = static_cast<size_t>(*kb_.disease_index("edema"));
  EXPECT_EQ(t.presence[j], 0);
  EXPECT_EQ(t.location_index[j], kNoLocation);
}

// Every template, every disease and every location: rendering then parsing
// returns the generating triplet.
TEST_F(ReportTest, RoundTripExhaustiveOverTemplates) {
  int checked = 0;
  for (const auto& d : kb_.diseases) {
    if (d.name == kHealthyEntity) continue;
    for (const auto& loc : kb_.locations)
      for (const auto& tmpl : positive_templates()) {
        const EntityTriplet t{d.name, loc, 1};
        const auto r = parse_report(fill_template(tmpl, t), kb_);
        ASSERT_EQ(r.triplets, std::vector<EntityTriplet>{t}) << fill_template(tmpl, t);
        ++checked;
      }
    for (const auto& tmpl : unlocated_positive_templates()) {
      const EntityTriplet t{d.name, std::nullopt, 1};
      ASSERT_EQ(parse_report(fill_template(tmpl, t), kb_).triplets, std::vector<EntityTriplet>{t});
      ++checked;
    }
    for (const auto& tmpl : negative_templates()) {
      const EntityTriplet t{d.name, std::nullopt, 0};
      ASSERT_EQ(parse_report(fill_template(tmpl, t), kb_).triplets, std::vector<EntityTriplet>{t});
      ++checked;
    }
  }
  EXPECT_GT(checked, 500);
}

TEST_F(ReportTest, RoundTripRandomMultiSentenceReports) {
  Rng rng(7);
  std::vector<std::string> names;
  for (const auto& d : kb_.diseases)
    if (d.name != kHealthyEntity) names.push_back(d.name);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<EntityTriplet> ts;
    const int n = rng.range(0, 5);
    for (int i = 0; i < n; ++i) {
      EntityTriplet t;
      t.entity = names[rng.below(names.size())];
      t.exist = rng.bernoulli(0.6) ? 1 : 0;
      if (t.exist && rng.bernoulli(0.8)) t.location = kb_.locations[rng.below(kb_.locations.size())];
      ts.push_back(t);
    }
    const bool normal = ts.empty() || rng.bernoulli(0.2);
    const auto text = render_report(ts, rng, normal);
    const auto r = parse_report(text, kb_);
    ASSERT_EQ(r.triplets, ts) << text;
    EXPECT_EQ(r.dropped, normal ? 1 : 0);
  }
}

}  // namespace
}  // namespace mavl
