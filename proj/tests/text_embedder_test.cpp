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

#include "mavl/text_embedder.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace mavl {
namespace {

constexpr double kFrozenNear = 0.72368437611729763;
constexpr double kFrozenFar = -0.21919840097923482;

TEST(TextEmbedder, DeterministicAndUnitNorm) {
  const TextEmbedder emb(64);
  const auto a = emb.encode("hazy cloudy texture");
  EXPECT_EQ(a, emb.encode("hazy cloudy texture"));
  for (const char* text : {"x", "less opaque, more transparent", "Édème — fin, granuleux"}) {
    const auto v = emb.encode(text);
    double n = 0;
    for (double x : v) n += x * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6) << text;
  }
  EXPECT_NE(TextEmbedder(64, 1).encode("x"), TextEmbedder(64, 2).encode("x"));
}

TEST(TextEmbedder, EmptyTextRejected) {
  const TextEmbedder emb(16);
  EXPECT_THROW(emb.encode(""), EmptyText);
  EXPECT_THROW(emb.encode(" ,.; "), EmptyText);
}

TEST(TextEmbedder, CaseAndPunctuationInsensitive) {
  const TextEmbedder emb(32);
  EXPECT_EQ(emb.encode("Hazy, cloudy texture."), emb.encode("hazy cloudy texture"));
}

// Frozen regression values, computed once on this fixture phrase set.
TEST(TextEmbedder, SimilarWordingIsCloser) {
  const TextEmbedder emb(64);
  const auto base = emb.encode("hazy cloudy texture");
  const double near = cosine(base, emb.encode("hazy cloudy appearance"));
  const double far = cosine(base, emb.encode("sharp dark line"));
  EXPECT_GT(near, far);
  EXPECT_NEAR(near, kFrozenNear, 1e-9);
  EXPECT_NEAR(far, kFrozenFar, 1e-9);
}

}  // namespace
}  // namespace mavl
