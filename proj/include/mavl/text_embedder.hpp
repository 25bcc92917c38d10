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

#include <string>
#include <vector>

#include "mavl/common.hpp"

namespace mavl {

// Frozen text tower. A text becomes a bag of hashed features (word unigrams
// plus boundary-marked character trigrams), each bucket owns a fixed Gaussian
// row of a virtual (buckets x dim) matrix, and the summed projection is
// L2-normalized. There are no trainable weights; the seed is the whole state.
class TextEmbedder {
 public:
  explicit TextEmbedder(int dim, uint64_t seed = 0x5eed7e47ULL, int buckets = 1 << 16)
      : dim_(dim), seed_(seed), buckets_(buckets) {}

  int dim() const { return dim_; }
  uint64_t seed() const { return seed_; }

  static std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
      if (std::isalnum(c) || c == '-') {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  template <typename T = double>
  std::vector<T> encode(std::string_view text) const {
    const auto toks = words(text);
    if (toks.empty()) throw EmptyText("cannot embed empty text");
    std::vector<double> acc(static_cast<size_t>(dim_), 0.0);
    auto add = [&](std::string_view feature) {
      const uint64_t bucket = fnv1a(feature) % static_cast<uint64_t>(buckets_);
      Rng rng(mix64(seed_ ^ mix64(bucket)));
      for (int i = 0; i < dim_; ++i) acc[static_cast<size_t>(i)] += rng.normal();
    };
    for (const auto& w : toks) {
      add("w:" + w);
      const std::string marked = "#" + w + "#";
      for (size_t i = 0; i + 3 <= marked.size(); ++i) add("c:" + marked.substr(i, 3));
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<T> out(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] / norm);
    return out;
  }

  // Rows are encode(texts[i]).
  template <typename T>
  Matrix<T> encode_rows(const std::vector<std::string>& texts) const {
    Matrix<T> m(static_cast<Eigen::Index>(texts.size()), dim_);
    for (size_t i = 0; i < texts.size(); ++i) {
      const auto v = encode<T>(texts[i]);
      for (int c = 0; c < dim_; ++c) m(static_cast<Eigen::Index>(i), c) = v[static_cast<size_t>(c)];
    }
    return m;
  }

 private:
  int dim_;
  uint64_t seed_;
  int buckets_;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace mavl
