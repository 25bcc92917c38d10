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

// Aspect knowledge base: diseases, their per-aspect visual descriptions and
// the location vocabulary.
//
// File format (UTF-8 JSON, unknown keys rejected at every level):
//
//   {
//     "version":   "<string>",
//     "aspects":   ["texture", "shape", ...],          // ordered, size K
//     "locations": ["left upper lung", ...],           // ordered, size M
//     "diseases": [                                    // ordered, size N
//       {
//         "name":        "edema",
//         "description": "<clinical definition>",      // query position 0
//         "aspects":     {"texture": "...", ...},      // one entry per aspect
//         "seen":        true                          // optional, default true
//       }
//     ]
//   }
//
// Disease index j, location index and aspect order are part of the contract:
// they fix target vector layout and classifier weight layout.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mavl/common.hpp"

namespace mavl {

inline constexpr const char* kHealthyEntity = "healthy";

inline const std::vector<std::string>& default_aspect_names() {
  static const std::vector<std::string> names = {
      "texture", "shape", "opacity", "location", "border", "fluid", "focality", "other"};
  return names;
}

struct DiseaseEntry {
  std::string name;
  std::string description;
  // Aligned with KnowledgeBase::aspect_names.
  std::vector<std::string> aspects;
  bool seen = true;

  bool operator==(const DiseaseEntry&) const = default;
};

struct KnowledgeBase {
  std::string version = "1";
  std::vector<std::string> aspect_names;
  std::vector<std::string> locations;
  std::vector<DiseaseEntry> diseases;

  int num_aspects() const { return static_cast<int>(aspect_names.size()); }
  int num_diseases() const { return static_cast<int>(diseases.size()); }
  int num_locations() const { return static_cast<int>(locations.size()); }

  std::optional<int> disease_index(std::string_view name) const {
    for (size_t j = 0; j < diseases.size(); ++j)
      if (diseases[j].name == name) return static_cast<int>(j);
    return std::nullopt;
  }
  std::optional<int> location_index(std::string_view name) const {
    for (size_t l = 0; l < locations.size(); ++l)
      if (locations[l] == name) return static_cast<int>(l);
    return std::nullopt;
  }
  std::optional<int> aspect_index(std::string_view name) const {
    for (size_t k = 0; k < aspect_names.size(); ++k)
      if (aspect_names[k] == name) return static_cast<int>(k);
    return std::nullopt;
  }

  const DiseaseEntry& at(std::string_view name) const {
    auto j = disease_index(name);
    if (!j) throw UnknownEntity(std::string(name));
    return diseases[*j];
  }

  bool operator==(const KnowledgeBase&) const = default;
};

// Throws ValidationError naming the first offending entry.
inline void validate_kb(const KnowledgeBase& kb) {
  if (kb.aspect_names.empty()) throw ValidationError("", "aspects", "KB has no aspects");
  if (kb.locations.empty()) throw ValidationError("", "locations", "KB has no locations");
  if (kb.diseases.empty()) throw ValidationError("", "diseases", "KB has no diseases");
  for (size_t a = 0; a < kb.aspect_names.size(); ++a) {
    if (kb.aspect_names[a].empty())
      throw ValidationError("", "aspects", "empty aspect name at position " + std::to_string(a));
    for (size_t b = 0; b < a; ++b)
      if (kb.aspect_names[a] == kb.aspect_names[b])
        throw ValidationError("", kb.aspect_names[a], "duplicate aspect " + kb.aspect_names[a]);
  }
  if (kb.aspect_names.size() == 8 && !kb.aspect_index("other"))
    throw ValidationError("", "other", "an 8-aspect KB must include \"other\"");
  for (size_t l = 0; l < kb.locations.size(); ++l) {
    if (kb.locations[l].empty())
      throw ValidationError("", "locations", "empty location at position " + std::to_string(l));
    for (size_t m = 0; m < l; ++m)
      if (kb.locations[l] == kb.locations[m])
        throw ValidationError(kb.locations[l], "locations", "duplicate location " + kb.locations[l]);
  }
  for (size_t j = 0; j < kb.diseases.size(); ++j) {
    const auto& d = kb.diseases[j];
    if (d.name.empty())
      throw ValidationError("", "name", "empty disease name at position " + std::to_string(j));
    for (size_t i = 0; i < j; ++i)
      if (kb.diseases[i].name == d.name)
        throw ValidationError(d.name, "name", "duplicate disease " + d.name);
    if (trim(d.description).empty())
      throw ValidationError(d.name, "description", d.name + ": empty description");
    if (d.aspects.size() != kb.aspect_names.size())
      throw ValidationError(d.name, "aspects", d.name + ": aspect count mismatch");
    for (size_t k = 0; k < d.aspects.size(); ++k)
      if (trim(d.aspects[k]).empty())
        throw ValidationError(d.name, kb.aspect_names[k],
                              d.name + ": missing or empty aspect \"" + kb.aspect_names[k] + "\"");
  }
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline void reject_unknown_keys(const ojson& obj, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ParseError(where + ": unknown key \"" + it.key() + "\"");
  }
}

inline std::vector<std::string> string_list(const ojson& v, const std::string& where) {
  if (!v.is_array()) throw ParseError(where + " must be a list of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ParseError(where + " must be a list of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline KnowledgeBase parse_kb(std::string_view text) {
  using detail::ojson;
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("KB is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("KB document must be an object");
  detail::reject_unknown_keys(doc, {"version", "aspects", "locations", "diseases"}, "KB");
  for (const char* key : {"version", "aspects", "locations", "diseases"})
    if (!doc.contains(key)) throw ParseError(std::string("KB: missing key \"") + key + "\"");

  KnowledgeBase kb;
  if (!doc["version"].is_string()) throw ParseError("KB: version must be a string");
  kb.version = doc["version"].get<std::string>();
  kb.aspect_names = detail::string_list(doc["aspects"], "KB.aspects");
  kb.locations = detail::string_list(doc["locations"], "KB.locations");
  if (!doc["diseases"].is_array()) throw ParseError("KB.diseases must be a list");
  for (const auto& entry : doc["diseases"]) {
    if (!entry.is_object()) throw ParseError("KB.diseases entries must be objects");
    const std::string where =
        "disease " + (entry.contains("name") && entry["name"].is_string()
                          ? entry["name"].get<std::string>()
                          : std::string("<unnamed>"));
    detail::reject_unknown_keys(entry, {"name", "description", "aspects", "seen"}, where);
    if (!entry.contains("name") || !entry["name"].is_string())
      throw ParseError(where + ": name must be a string");
    if (!entry.contains("description") || !entry["description"].is_string())
      throw ValidationError(entry["name"].get<std::string>(), "description",
                            where + ": missing description");
    DiseaseEntry d;
    d.name = entry["name"].get<std::string>();
    d.description = entry["description"].get<std::string>();
    if (entry.contains("seen")) {
      if (!entry["seen"].is_boolean()) throw ParseError(where + ": seen must be a boolean");
      d.seen = entry["seen"].get<bool>();
    }
    if (!entry.contains("aspects") || !entry["aspects"].is_object())
      throw ParseError(where + ": aspects must be an object");
    const auto& amap = entry["aspects"];
    for (auto it = amap.begin(); it != amap.end(); ++it) {
      if (!kb.aspect_index(it.key()))
        throw ValidationError(d.name, it.key(), where + ": unknown aspect \"" + it.key() + "\"");
      if (!it.value().is_string()) throw ParseError(where + ": aspect text must be a string");
    }
    for (const auto& name : kb.aspect_names) {
      if (!amap.contains(name))
        throw ValidationError(d.name, name, d.name + ": missing aspect \"" + name + "\"");
      d.aspects.push_back(amap[name].get<std::string>());
    }
    kb.diseases.push_back(std::move(d));
  }
  validate_kb(kb);
  return kb;
}

inline KnowledgeBase load_kb(const std::filesystem::path& path) {
  return parse_kb(read_file(path));
}

inline std::string serialize_kb(const KnowledgeBase& kb) {
  using detail::ojson;
  ojson doc;
  doc["version"] = kb.version;
  doc["aspects"] = kb.aspect_names;
  doc["locations"] = kb.locations;
  doc["diseases"] = ojson::array();
  for (const auto& d : kb.diseases) {
    ojson e;
    e["name"] = d.name;
    e["description"] = d.description;
    ojson amap = ojson::object();
    for (size_t k = 0; k < kb.aspect_names.size(); ++k) amap[kb.aspect_names[k]] = d.aspects[k];
    e["aspects"] = std::move(amap);
    e["seen"] = d.seen;
    doc["diseases"].push_back(std::move(e));
  }
  return doc.dump(2) + "\n";
}

inline void save_kb(const KnowledgeBase& kb, const std::filesystem::path& path) {
  validate_kb(kb);
  write_file_atomic(path, serialize_kb(kb));
}

// Position 0 is the clinical definition, positions 1..K follow aspect order.
inline std::vector<std::string> query_aspects(const KnowledgeBase& kb, std::string_view entity) {
  const auto& d = kb.at(entity);
  std::vector<std::string> texts;
  texts.reserve(d.aspects.size() + 1);
  texts.push_back(d.description);
  texts.insert(texts.end(), d.aspects.begin(), d.aspects.end());
  return texts;
}

// Returns a new KB with the entry appended (seen = false); `kb` is untouched
// and prior disease indices are preserved.
inline KnowledgeBase register_novel(const KnowledgeBase& kb, const std::string& entity,
                                    const std::vector<std::string>& descriptions) {
  if (kb.disease_index(entity)) throw DuplicateEntity(entity);
  const size_t want = kb.aspect_names.size() + 1;
  if (descriptions.size() != want)
    throw ArityMismatch(entity + ": expected " + std::to_string(want) + " descriptions, got " +
                        std::to_string(descriptions.size()));
  KnowledgeBase out = kb;
  DiseaseEntry d;
  d.name = entity;
  d.description = descriptions[0];
  d.aspects.assign(descriptions.begin() + 1, descriptions.end());
  d.seen = false;
  out.diseases.push_back(std::move(d));
  validate_kb(out);
  return out;
}

}  // namespace mavl
