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

// Rule-based report reader producing (entity, location, exist) triplets, the
// report templates the synthetic corpus writes, and multi-label targets.
//
// Grammar handled by the reader:
//   * sentences end at '.', '!', '?', ';' or a newline;
//   * an entity is any KB disease name or a synonym from the fixed table,
//     matched case-insensitively on whole tokens, longest match first;
//   * a sentence containing "no", "without" or "free of" negates every entity
//     in it (exist = 0);
//   * the first KB location named in a sentence is attached to every entity
//     in that sentence.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mavl/kb.hpp"
#include "mavl/text_embedder.hpp"

namespace mavl {

struct EntityTriplet {
  std::string entity;
  std::optional<std::string> location;
  int exist = 1;

  bool operator==(const EntityTriplet&) const = default;
};

struct ParseResult {
  std::vector<EntityTriplet> triplets;
  // Non-empty sentences that yielded no recognized entity.
  int dropped = 0;
};

inline const std::map<std::string, std::vector<std::string>>& entity_synonyms() {
  static const std::map<std::string, std::vector<std::string>> table = {
      {"pleural effusion", {"effusion", "pleural fluid"}},
      {"pneumothorax", {"ptx"}},
      {"cardiomegaly", {"enlarged heart", "enlarged cardiac silhouette"}},
      {"covid-19", {"covid", "sars-cov-2 pneumonia"}},
      {"edema", {"pulmonary edema", "oedema"}},
  };
  return table;
}

namespace detail {

inline std::vector<std::string> sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '.' || c == '!' || c == '?' || c == ';' || c == '\n') {
      if (!trim(cur).empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) out.push_back(cur);
  return out;
}

inline bool tokens_match(const std::vector<std::string>& toks, size_t at,
                         const std::vector<std::string>& phrase) {
  if (phrase.empty() || at + phrase.size() > toks.size()) return false;
  for (size_t i = 0; i < phrase.size(); ++i)
    if (toks[at + i] != phrase[i]) return false;
  return true;
}

}  // namespace detail

class ReportParser {
 public:
  explicit ReportParser(const KnowledgeBase& kb) {
    for (const auto& d : kb.diseases) {
      if (d.name == kHealthyEntity) continue;
      add_alias(TextEmbedder::words(d.name), d.name);
      auto it = entity_synonyms().find(d.name);
      if (it != entity_synonyms().end())
        for (const auto& syn : it->second) add_alias(TextEmbedder::words(syn), d.name);
    }
    for (const auto& l : kb.locations) locations_.push_back({TextEmbedder::words(l), l});
    auto by_length = [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); };
    std::stable_sort(aliases_.begin(), aliases_.end(), by_length);
    std::stable_sort(locations_.begin(), locations_.end(), by_length);
  }

  ParseResult parse(std::string_view text) const {
    ParseResult result;
    for (const auto& sentence : detail::sentences(text)) {
      const auto toks = TextEmbedder::words(sentence);
      if (toks.empty()) continue;
      bool negated = false;
      for (size_t i = 0; i < toks.size(); ++i) {
        if (toks[i] == "no" || toks[i] == "without") negated = true;
        if (toks[i] == "free" && i + 1 < toks.size() && toks[i + 1] == "of") negated = true;
      }
      std::optional<std::string> location;
      for (size_t i = 0; i < toks.size() && !location; ++i)
        for (const auto& [phrase, name] : locations_)
          if (detail::tokens_match(toks, i, phrase)) {
            location = name;
            break;
          }
      size_t found = 0;
      for (size_t i = 0; i < toks.size();) {
        size_t advance = 1;
        for (const auto& [phrase, name] : aliases_) {
          if (detail::tokens_match(toks, i, phrase)) {
            result.triplets.push_back({name, location, negated ? 0 : 1});
            advance = phrase.size();
            ++found;
            break;
          }
        }
        i += advance;
      }
      if (found == 0) ++result.dropped;
    }
    return result;
  }

 private:
  void add_alias(std::vector<std::string> phrase, const std::string& name) {
    if (!phrase.empty()) aliases_.emplace_back(std::move(phrase), name);
  }

  std::vector<std::pair<std::vector<std::string>, std::string>> aliases_;
  std::vector<std::pair<std::vector<std::string>, std::string>> locations_;
};

inline ParseResult parse_report(std::string_view text, const KnowledgeBase& kb) {
  return ReportParser(kb).parse(text);
}

// Per-image supervision. location_index[j] is -1 when absent or unstated.
struct MultiLabelTarget {
  std::vector<uint8_t> presence;
  std::vector<int> location_index;

  bool operator==(const MultiLabelTarget&) const = default;
};

inline constexpr int kNoLocation = -1;

// Later triplets for the same entity override earlier ones. Strict mode raises
// on unresolvable names; lenient mode drops the entity (or just the location).
inline MultiLabelTarget build_targets(const std::vector<EntityTriplet>& triplets,
                                      const KnowledgeBase& kb, bool strict = false) {
  MultiLabelTarget t;
  t.presence.assign(static_cast<size_t>(kb.num_diseases()), 0);
  t.location_index.assign(static_cast<size_t>(kb.num_diseases()), kNoLocation);
  for (const auto& tr : triplets) {
    const auto j = kb.disease_index(tr.entity);
    if (!j) {
      if (strict) throw UnknownEntity(tr.entity);
      continue;
    }
    std::optional<int> loc;
    if (tr.location) {
      loc = kb.location_index(*tr.location);
      if (!loc && strict) throw UnknownLocation(*tr.location);
    }
    const auto jj = static_cast<size_t>(*j);
    t.presence[jj] = tr.exist ? 1 : 0;
    t.location_index[jj] = (tr.exist && loc) ? *loc : kNoLocation;
  }
  return t;
}

// --- Report templates -------------------------------------------------------

inline const std::vector<std::string>& positive_templates() {
  static const std::vector<std::string> t = {
      "{E} in the {L}.", "There is {e} in the {L}.", "Findings consistent with {e} in the {L}.",
      "{E} is seen in the {L}."};
  return t;
}

inline const std::vector<std::string>& unlocated_positive_templates() {
  static const std::vector<std::string> t = {"There is {e}.", "Findings consistent with {e}."};
  return t;
}

inline const std::vector<std::string>& negative_templates() {
  static const std::vector<std::string> t = {"No {e}.", "No evidence of {e}.",
                                             "The lungs are free of {e}.",
                                             "The study is without {e}."};
  return t;
}

inline constexpr const char* kNormalStatement = "No acute cardiopulmonary abnormality.";

inline std::string fill_template(const std::string& tmpl, const EntityTriplet& t) {
  std::string cap = t.entity;
  if (!cap.empty()) cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
  std::string out;
  for (size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 3, "{E}") == 0) {
      out += cap;
      i += 3;
    } else if (tmpl.compare(i, 3, "{e}") == 0) {
      out += t.entity;
      i += 3;
    } else if (tmpl.compare(i, 3, "{L}") == 0) {
      out += t.location.value_or("");
      i += 3;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

// One sentence per triplet, in order. Negative triplets carry no location.
inline std::string render_report(const std::vector<EntityTriplet>& triplets, Rng& rng,
                                 bool normal_statement = false) {
  std::string out;
  auto append = [&out](const std::string& s) {
    if (!out.empty()) out += ' ';
    out += s;
  };
  if (normal_statement) append(kNormalStatement);
  for (const auto& t : triplets) {
    const auto& pool = !t.exist         ? negative_templates()
                       : t.location     ? positive_templates()
                                        : unlocated_positive_templates();
    append(fill_template(pool[rng.below(pool.size())], t));
  }
  return out;
}

}  // namespace mavl
