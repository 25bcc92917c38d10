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

#include "mavl/synth.hpp"

#include <gtest/gtest.h>

#include <set>

#include "test_util.hpp"

namespace mavl {
namespace {

class SynthTest : public ::testing::Test {
 protected:
  void SetUp() override {
    kb_ = synthetic_kb();
    std::vector<std::string> names;
    for (const auto& [name, comp] : synthetic_catalogue()) names.push_back(name);
    renderers_ = derive_renderers(kb_, names, default_renderer_keywords());
  }
  std::vector<double> all_prevalence(double p) const {
    std::vector<double> prev(static_cast<size_t>(kb_.num_diseases()), 0.0);
    for (const auto& [j, c] : renderers_) prev[static_cast<size_t>(j)] = p;
    return prev;
  }
  KnowledgeBase kb_;
  RendererSet renderers_;
};

TEST_F(SynthTest, CompositionIsReadBackFromKbText) {
  for (const auto& [name, comp] : synthetic_catalogue())
    EXPECT_EQ(derive_composition(kb_, name, default_renderer_keywords()), comp) << name;
}

TEST_F(SynthTest, RendererWithUnknownAspectIsConfigError) {
  auto kw = default_renderer_keywords();
  kw["sparkle"] = {{"on", "sparkly"}};
  EXPECT_THROW(derive_composition(kb_, "d1", kw), ConfigError);
  RendererSet bad = renderers_;
  bad.begin()->second["sparkle"] = "on";
  EXPECT_THROW(generate_sample(1, kb_, bad, Difficulty{}, all_prevalence(0.2)), ConfigError);
}

TEST_F(SynthTest, SameSeedSameSample) {
  const auto a = generate_sample(7, kb_, renderers_, Difficulty{}, all_prevalence(0.3));
  const auto b = generate_sample(7, kb_, renderers_, Difficulty{}, all_prevalence(0.3));
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.report, b.report);
  EXPECT_EQ(a.masks, b.masks);
  EXPECT_EQ(a.target, b.target);
  const auto c = generate_sample(8, kb_, renderers_, Difficulty{}, all_prevalence(0.3));
  EXPECT_NE(a.image, c.image);
}

TEST_F(SynthTest, AllAbsentGivesEmptyMasksAndNegativeReport) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = generate_sample(seed, kb_, renderers_, Difficulty{}, all_prevalence(0.0));
    EXPECT_TRUE(s.masks.empty());
    for (auto p : s.target.presence) EXPECT_EQ(p, 0);
    EXPECT_EQ(s.report.rfind(kNormalStatement, 0), 0u) << s.report;
    for (const auto& t : parse_report(s.report, kb_).triplets) EXPECT_EQ(t.exist, 0);
  }
}

// Direct pixel measurement: lesion mean differs from far background by at
// least the configured opacity delta.
TEST_F(SynthTest, LesionContrastMeetsOpacityDelta) {
  const Difficulty diff;
  int measured = 0;
  for (uint64_t seed = 0; seed < 300; ++seed) {
    const auto s = generate_sample(seed, kb_, renderers_, diff, all_prevalence(0.25));
    const int n = s.image.height;
    Grid<uint8_t> near(n, n, 0);
    for (const auto& [j, m] : s.masks)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (m.at(y, x))
            for (int dy = -4; dy <= 4; ++dy)
              for (int dx = -4; dx <= 4; ++dx) {
                const int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < n && xx >= 0 && xx < n) near.at(yy, xx) = 1;
              }
    double bg = 0;
    int nbg = 0;
    for (size_t i = 0; i < s.image.data.size(); ++i)
      if (!near.data[i]) bg += s.image.data[i], ++nbg;
    ASSERT_GT(nbg, 0);
    bg /= nbg;
    for (const auto& [j, m] : s.masks) {
      double in = 0;
      int nin = 0;
      for (size_t i = 0; i < m.data.size(); ++i)
        if (m.data[i]) in += s.image.data[i], ++nin;
      ASSERT_GT(nin, 0);
      EXPECT_GE(std::abs(in / nin - bg), diff.opacity_delta)
          << "seed " << seed << " disease " << kb_.diseases[static_cast<size_t>(j)].name;
      ++measured;
    }
  }
  EXPECT_GT(measured, 300);
}

TEST_F(SynthTest, MasksTargetsAndReportsAgree) {
  const ReportParser parser(kb_);
  for (uint64_t seed = 100; seed < 400; ++seed) {
    const auto s = generate_sample(seed, kb_, renderers_, Difficulty{}, all_prevalence(0.25));
    for (int j = 0; j < kb_.num_diseases(); ++j) {
      const bool has_mask = s.masks.count(j) > 0;
      EXPECT_EQ(has_mask, s.target.presence[static_cast<size_t>(j)] == 1);
      if (has_mask) {
        int on = 0;
        for (auto v : s.masks.at(j).data) on += v;
        EXPECT_GT(on, 0);
        EXPECT_NE(s.target.location_index[static_cast<size_t>(j)], kNoLocation);
      }
    }
    const auto parsed = parser.parse(s.report);
    EXPECT_EQ(parsed.triplets, s.triplets) << s.report;
    EXPECT_EQ(build_targets(parsed.triplets, kb_, true), s.target);
    for (float v : s.image.data) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST_F(SynthTest, BlobsSitInTheirStatedQuadrant) {
  for (uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = generate_sample(seed, kb_, renderers_, Difficulty{}, all_prevalence(0.25));
    for (const auto& [j, m] : s.masks) {
      const auto& loc = kb_.locations[static_cast<size_t>(s.target.location_index[static_cast<size_t>(j)])];
      double sx = 0, sy = 0;
      int cnt = 0;
      for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
          if (m.at(y, x)) sx += x, sy += y, ++cnt;
      const bool left = sx / cnt < m.width / 2.0, upper = sy / cnt < m.height / 2.0;
      EXPECT_EQ(left, loc.find("left") != std::string::npos) << loc;
      EXPECT_EQ(upper, loc.find("upper") != std::string::npos) << loc;
    }
  }
}

GeneratorConfig small_config() {
  GeneratorConfig cfg;
  cfg.splits = {400, 40, 40, 60};
  return cfg;
}

TEST_F(SynthTest, SplitKeepsHoldoutOutOfTraining) {
  const auto corpus = make_split(small_config(), kb_);
  const auto h11 = static_cast<size_t>(*kb_.disease_index("d11"));
  const auto h12 = static_cast<size_t>(*kb_.disease_index("d12"));
  for (const char* name : {"train", "valid", "test-seen"})
    for (const auto& s : corpus.split(name).samples) {
      EXPECT_EQ(s.target.presence[h11], 0);
      EXPECT_EQ(s.target.presence[h12], 0);
    }
  int unseen_pos = 0;
  for (const auto& s : corpus.split("test-unseen").samples)
    unseen_pos += s.target.presence[h11] + s.target.presence[h12];
  EXPECT_GT(unseen_pos, 0);
  EXPECT_EQ(corpus.seen.size(), 10u);
}

TEST_F(SynthTest, SplitSeedsAreDisjoint) {
  const auto corpus = make_split(small_config(), kb_);
  std::set<uint64_t> all;
  size_t total = 0;
  for (const auto& [name, split] : corpus.splits) {
    std::set<uint64_t> mine;
    for (const auto& s : split.samples) mine.insert(s.seed);
    EXPECT_EQ(mine.size(), split.samples.size());
    total += mine.size();
    all.insert(mine.begin(), mine.end());
  }
  EXPECT_EQ(all.size(), total);
}

// Counting oracle over the generated train split.
TEST_F(SynthTest, TrainMarginalsMatchRequestedPrevalence) {
  auto cfg = small_config();
  cfg.splits.train = 2000;
  const auto corpus = make_split(cfg, kb_);
  const auto m = class_marginals(corpus.split("train"), kb_.num_diseases());
  for (const auto& name : corpus.seen) {
    const auto j = static_cast<size_t>(*kb_.disease_index(name));
    EXPECT_NEAR(m[j], cfg.prevalence, cfg.balance_tolerance) << name;
  }
  for (const auto& name : corpus.holdout) EXPECT_EQ(m[static_cast<size_t>(*kb_.disease_index(name))], 0.0);
}

TEST_F(SynthTest, HoldoutErrors) {
  auto cfg = small_config();
  cfg.holdout.clear();
  for (const auto& [name, c] : synthetic_catalogue()) cfg.holdout.push_back(name);
  EXPECT_THROW(make_split(cfg, kb_), ConfigError);
  cfg.holdout = {"nope"};
  EXPECT_THROW(make_split(cfg, kb_), ConfigError);
}

TEST_F(SynthTest, CorpusDiskRoundTripIsExactAndDeterministic) {
  auto cfg = small_config();
  cfg.splits = {12, 4, 4, 6};
  const auto corpus = make_split(cfg, kb_);
  const auto a = testing::scratch_dir("corpus_a");
  const auto b = testing::scratch_dir("corpus_b");
  save_corpus(corpus, a);
  save_corpus(make_split(cfg, kb_), b);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a);
    ASSERT_EQ(read_file(entry.path()), read_file(b / rel)) << rel;
  }
  const auto loaded = load_corpus(a);
  EXPECT_EQ(loaded.kb, corpus.kb);
  EXPECT_EQ(loaded.seen, corpus.seen);
  EXPECT_EQ(corpus_fingerprint(loaded), corpus_fingerprint(corpus));
  for (const auto& [name, split] : corpus.splits) {
    const auto& other = loaded.split(name);
    ASSERT_EQ(other.samples.size(), split.samples.size());
    for (size_t i = 0; i < split.samples.size(); ++i) {
      EXPECT_EQ(other.samples[i].image, split.samples[i].image);
      EXPECT_EQ(other.samples[i].report, split.samples[i].report);
      EXPECT_EQ(other.samples[i].masks, split.samples[i].masks);
      EXPECT_EQ(other.samples[i].target, split.samples[i].target);
      EXPECT_EQ(other.samples[i].seed, split.samples[i].seed);
    }
  }
}

TEST_F(SynthTest, FingerprintTracksContent) {
  const auto a = make_split(small_config(), kb_);
  EXPECT_EQ(corpus_fingerprint(a), corpus_fingerprint(make_split(small_config(), kb_)));
  auto other = small_config();
  other.seed += 1;
  EXPECT_NE(corpus_fingerprint(make_split(other, kb_)), corpus_fingerprint(a));
  auto edited = a;
  edited.splits.at("valid").samples[0].image.data[0] += 0.5f;
  EXPECT_NE(corpus_fingerprint(edited), corpus_fingerprint(a));
}

TEST_F(SynthTest, GeneratorConfigRejectsUnknownKeys) {
  EXPECT_THROW(parse_generator_config(nlohmann::json{{"sead", 1}}), ConfigError);
  EXPECT_THROW(parse_generator_config(nlohmann::json{{"renderers", {{"texture", {{"glitter", "x"}}}}}}),
               ConfigError);
  const auto c = parse_generator_config(generator_config_json(GeneratorConfig{}));
  EXPECT_EQ(generator_config_json(c), generator_config_json(GeneratorConfig{}));
}

}  // namespace
}  // namespace mavl
