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

// Synthetic paired (image, report, mask) corpus.
//
// Every rendered disease is a composition of aspect values (texture, shape,
// opacity, location preference, border, fluid, focality, other). The value of
// each aspect is read back from the disease's own KB text through a keyword
// table, so the pixels a disease produces are caused by the same aspect
// identities its descriptions name. Two diseases sharing an aspect value share
// both the pixels and the aspect text.
//
// Images are split into a 4x4 lattice of cells; the four KB locations are the
// image quadrants (2x2 cells each) and every blob is centred on a free cell
// of its quadrant.

#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "mavl/grid.hpp"
#include "mavl/kb.hpp"
#include "mavl/report.hpp"

namespace mavl {

// aspect -> value -> keyword. A value is selected for a disease when its
// keyword occurs in the disease's aspect text.
using RendererKeywords = std::map<std::string, std::map<std::string, std::string>>;

struct AspectPhrase {
  std::string aspect;
  std::string value;
  std::string text;
  std::string keyword;
};

inline const std::vector<AspectPhrase>& aspect_phrases() {
  static const std::vector<AspectPhrase> table = {
      {"texture", "smooth", "smooth homogeneous texture without internal detail", "smooth"},
      {"texture", "grainy", "fine, grainy, or mottled texture with small speckled spots", "grainy"},
      {"texture", "streaky", "streaky texture made of parallel linear bands", "streaky"},
      {"texture", "blotchy", "coarse blotchy texture with large irregular patches", "blotchy"},
      {"shape", "round", "round, circular shape", "circular"},
      {"shape", "wide", "horizontally elongated oval shape", "horizontally"},
      {"shape", "tall", "vertically elongated oval shape", "vertically"},
      {"shape", "ring", "ring-like shape with a hollow centre", "ring-like"},
      {"opacity", "opaque", "more opaque, less transparent, appearing brighter than the surrounding lung",
       "brighter"},
      {"opacity", "lucent", "less opaque, more transparent, appearing darker than the surrounding lung",
       "darker"},
      {"location", "upper", "located in the upper zones of either lung", "upper zones"},
      {"location", "lower", "located in the lower zones of either lung", "lower zones"},
      {"location", "left", "located anywhere in the left lung", "left lung"},
      {"location", "right", "located anywhere in the right lung", "right lung"},
      {"border", "sharp", "sharply defined, crisp borders", "crisp"},
      {"border", "soft", "ill-defined, blurred borders fading into the surrounding tissue", "blurred"},
      {"fluid", "none", "no fluid level", "no fluid"},
      {"fluid", "level", "a horizontal air-fluid level with a denser lower half", "air-fluid"},
      {"focality", "focal", "a single focal lesion", "single focal"},
      {"focality", "multi", "multifocal, several small separate lesions", "multifocal"},
      {"other", "plain", "no other distinctive feature", "no other"},
      {"other", "dot", "a small contrasting dot at its centre", "contrasting dot"},
  };
  return table;
}

inline RendererKeywords default_renderer_keywords() {
  RendererKeywords kw;
  for (const auto& p : aspect_phrases()) kw[p.aspect][p.value] = p.keyword;
  return kw;
}

inline const std::string& aspect_phrase(const std::string& aspect, const std::string& value) {
  for (const auto& p : aspect_phrases())
    if (p.aspect == aspect && p.value == value) return p.text;
  throw ConfigError("no phrase for " + aspect + "=" + value);
}

// aspect -> value
using Composition = std::map<std::string, std::string>;

// The built-in synthetic catalogue: d1..d10 are seen, d11 and d12 are
// recombinations of seen aspect values reserved as holdout diseases.
inline const std::vector<std::pair<std::string, Composition>>& synthetic_catalogue() {
  auto c = [](const char* tex, const char* shape, const char* op, const char* loc, const char* border,
              const char* fluid, const char* foc, const char* other) {
    return Composition{{"texture", tex}, {"shape", shape},   {"opacity", op},
                       {"location", loc}, {"border", border}, {"fluid", fluid},
                       {"focality", foc}, {"other", other}};
  };
  static const std::vector<std::pair<std::string, Composition>> cat = {
      {"d1", c("grainy", "round", "opaque", "upper", "soft", "none", "focal", "plain")},
      {"d2", c("smooth", "round", "opaque", "lower", "sharp", "none", "focal", "plain")},
      {"d3", c("streaky", "wide", "opaque", "left", "sharp", "none", "focal", "plain")},
      {"d4", c("blotchy", "tall", "opaque", "right", "soft", "none", "focal", "plain")},
      {"d5", c("smooth", "ring", "lucent", "upper", "sharp", "none", "focal", "plain")},
      {"d6", c("grainy", "wide", "lucent", "lower", "soft", "level", "focal", "plain")},
      {"d7", c("smooth", "tall", "opaque", "left", "sharp", "level", "focal", "dot")},
      {"d8", c("streaky", "round", "lucent", "right", "soft", "none", "multi", "plain")},
      {"d9", c("blotchy", "ring", "opaque", "lower", "sharp", "none", "focal", "dot")},
      {"d10", c("smooth", "wide", "opaque", "upper", "soft", "none", "multi", "plain")},
      {"d11", c("grainy", "tall", "opaque", "left", "soft", "none", "focal", "plain")},
      {"d12", c("streaky", "ring", "lucent", "upper", "sharp", "none", "focal", "dot")},
  };
  return cat;
}

inline const std::vector<std::string>& synthetic_locations() {
  static const std::vector<std::string> l = {"left upper lung", "left lower lung", "right upper lung",
                                             "right lower lung"};
  return l;
}

inline DiseaseEntry healthy_entry(const std::vector<std::string>& aspect_names) {
  static const std::map<std::string, std::string> text = {
      {"texture", "normal lung texture with fine branching vascular markings"},
      {"shape", "no abnormal shape or mass"},
      {"opacity", "normal lung density without added opacity or lucency"},
      {"location", "no focal abnormality in any lung zone"},
      {"border", "normal lung margins and clear outlines"},
      {"fluid", "no fluid level"},
      {"focality", "no lesion present"},
      {"other", "no other distinctive feature"},
  };
  DiseaseEntry d;
  d.name = kHealthyEntity;
  d.description = "normal chest radiograph with clear lungs and no acute abnormality";
  for (const auto& a : aspect_names) {
    auto it = text.find(a);
    d.aspects.push_back(it != text.end() ? it->second : "normal appearance");
  }
  return d;
}

// One-sentence overview in the style of a reference description, naming the
// most characteristic findings.
inline std::string synthetic_description(const std::string& name, const Composition& comp) {
  static const std::map<std::string, std::string> words = {
      {"smooth", "smooth"},          {"grainy", "grainy"},
      {"streaky", "streaky"},        {"blotchy", "blotchy"},
      {"round", "round"},            {"wide", "horizontally elongated"},
      {"tall", "vertically elongated"}, {"ring", "ring-shaped"},
      {"opaque", "bright"},          {"lucent", "dark"},
      {"upper", "in the upper zones"}, {"lower", "in the lower zones"},
      {"left", "in the left lung"},  {"right", "in the right lung"},
      {"sharp", "with crisp borders"}, {"soft", "with blurred borders"},
  };
  std::string s = name + " appears as ";
  s += comp.at("focality") == "multi" ? "multifocal " : "a ";
  s += words.at(comp.at("texture")) + ", " + words.at(comp.at("shape")) + ", " + words.at(comp.at("opacity"));
  s += comp.at("focality") == "multi" ? " opacities " : " opacity ";
  s += words.at(comp.at("location")) + " " + words.at(comp.at("border"));
  if (comp.at("fluid") == "level") s += " and an air-fluid level";
  if (comp.at("other") == "dot") s += " and a central dot";
  return s + ".";
}

inline KnowledgeBase synthetic_kb() {
  KnowledgeBase kb;
  kb.version = "synthetic-1";
  kb.aspect_names = default_aspect_names();
  kb.locations = synthetic_locations();
  int n = 0;
  for (const auto& [name, comp] : synthetic_catalogue()) {
    DiseaseEntry d;
    d.name = name;
    d.description = synthetic_description(name, comp);
    for (const auto& a : kb.aspect_names) d.aspects.push_back(aspect_phrase(a, comp.at(a)));
    d.seen = n < 10;
    kb.diseases.push_back(std::move(d));
    ++n;
  }
  kb.diseases.push_back(healthy_entry(kb.aspect_names));
  validate_kb(kb);
  return kb;
}

// Reads each rendered aspect's value back out of the disease's KB text.
inline Composition derive_composition(const KnowledgeBase& kb, const std::string& disease,
                                      const RendererKeywords& keywords) {
  const auto& entry = kb.at(disease);
  Composition comp;
  for (const auto& [aspect, values] : keywords) {
    const auto k = kb.aspect_index(aspect);
    if (!k) throw ConfigError("renderer references unknown aspect \"" + aspect + "\"");
    std::string text = entry.aspects[static_cast<size_t>(*k)];
    std::transform(text.begin(), text.end(), text.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    std::string chosen;
    for (const auto& [value, kw] : values) {
      if (text.find(kw) == std::string::npos) continue;
      if (!chosen.empty())
        throw ConfigError(disease + "/" + aspect + ": ambiguous renderer keywords");
      chosen = value;
    }
    if (chosen.empty())
      throw ConfigError(disease + "/" + aspect + ": text matches no renderer keyword");
    comp[aspect] = chosen;
  }
  return comp;
}

struct Difficulty {
  double background = 0.45;
  double noise_sigma = 0.05;
  int radius_min = 5;
  int radius_max = 8;
  // Minimum |mean(lesion) - mean(background)|; rendered levels are 1.5x this.
  double opacity_delta = 0.2;
  double texture_amplitude = 0.12;
  double halo = 3.0;
  int jitter = 2;
};

struct SyntheticSample {
  std::string id;
  uint64_t seed = 0;
  Grid<float> image;
  std::string report;
  // KB disease index -> lesion mask, only for positively present diseases.
  std::map<int, Grid<uint8_t>> masks;
  MultiLabelTarget target;
  std::vector<EntityTriplet> triplets;
};

// Diseases to render: KB index -> composition.
using RendererSet = std::map<int, Composition>;

inline RendererSet derive_renderers(const KnowledgeBase& kb, const std::vector<std::string>& diseases,
                                    const RendererKeywords& keywords) {
  RendererSet set;
  for (const auto& d : diseases) {
    const auto j = kb.disease_index(d);
    if (!j) throw ConfigError("unknown disease \"" + d + "\"");
    set[*j] = derive_composition(kb, d, keywords);
  }
  return set;
}

namespace detail {

struct Quadrant {
  int qx, qy;
};

inline Quadrant quadrant_of_location(const std::string& name) {
  const bool left = name.find("left") != std::string::npos;
  const bool right = name.find("right") != std::string::npos;
  const bool upper = name.find("upper") != std::string::npos;
  const bool lower = name.find("lower") != std::string::npos;
  if (left == right || upper == lower)
    throw ConfigError("location \"" + name + "\" names no image quadrant");
  return {left ? 0 : 1, upper ? 0 : 1};
}

inline bool location_allowed(const std::string& pref, Quadrant q) {
  if (pref == "upper") return q.qy == 0;
  if (pref == "lower") return q.qy == 1;
  if (pref == "left") return q.qx == 0;
  if (pref == "right") return q.qx == 1;
  throw ConfigError("unknown location preference \"" + pref + "\"");
}

struct Blob {
  double cx, cy, ax, ay;
};

// Signed distance-like value: <= 0 inside the lesion core, roughly pixels
// outside it.
inline double blob_distance(const Blob& b, const std::string& shape, double x, double y) {
  const double q = std::sqrt(((x - b.cx) / b.ax) * ((x - b.cx) / b.ax) +
                             ((y - b.cy) / b.ay) * ((y - b.cy) / b.ay));
  const double scale = std::min(b.ax, b.ay);
  if (shape == "ring") return std::max(q - 1.0, 0.5 - q) * scale;
  return (q - 1.0) * scale;
}

inline double texture_value(const std::string& texture, int x, int y, Rng& rng,
                            const std::vector<double>& lattice, int lattice_w) {
  if (texture == "smooth") return 0.0;
  if (texture == "grainy") return rng.uniform(-1.0, 1.0);
  if (texture == "streaky") return std::sin(6.283185307179586 * x / 4.0);
  if (texture == "blotchy") {
    const double fx = x / 6.0, fy = y / 6.0;
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const double tx = fx - x0, ty = fy - y0;
    auto at = [&](int xx, int yy) { return lattice[static_cast<size_t>(yy * lattice_w + xx)]; };
    return (1 - ty) * ((1 - tx) * at(x0, y0) + tx * at(x0 + 1, y0)) +
           ty * ((1 - tx) * at(x0, y0 + 1) + tx * at(x0 + 1, y0 + 1));
  }
  throw ConfigError("unknown texture \"" + texture + "\"");
}

}  // namespace detail

// Pure function of its arguments. `prevalence[j]` is the chance disease j is
// drawn present; only diseases in `renderers` are ever drawn or negated.
inline SyntheticSample generate_sample(uint64_t seed, const KnowledgeBase& kb,
                                       const RendererSet& renderers, const Difficulty& diff,
                                       const std::vector<double>& prevalence, int image_size = 64,
                                       int max_negations = 2) {
  if (image_size % 4 != 0 || image_size < 16) throw ConfigError("image size must be a multiple of 4, >= 16");
  for (const auto& [j, comp] : renderers)
    for (const auto& [aspect, value] : comp)
      if (!kb.aspect_index(aspect))
        throw ConfigError("renderer for " + kb.diseases[static_cast<size_t>(j)].name +
                          " references unknown aspect \"" + aspect + "\"");
  std::vector<detail::Quadrant> quad;
  for (const auto& l : kb.locations) quad.push_back(detail::quadrant_of_location(l));

  Rng rng(mix64(seed));
  SyntheticSample s;
  s.seed = seed;
  const int n = image_size;
  const double cell = n / 4.0;
  Grid<float> bg(n, n);
  for (auto& v : bg.data) v = static_cast<float>(diff.background + diff.noise_sigma * rng.normal());
  Grid<double> img(n, n);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = bg.data[i];

  std::vector<int> order;
  for (const auto& [j, comp] : renderers) order.push_back(j);
  rng.shuffle(order.begin(), order.end());

  std::array<std::array<bool, 4>, 4> occupied{};
  struct Placement {
    int disease, location, cx, cy;
  };
  std::vector<Placement> placed;
  for (int j : order) {
    const double p = j < static_cast<int>(prevalence.size()) ? prevalence[static_cast<size_t>(j)] : 0.0;
    if (!rng.bernoulli(p)) continue;
    const auto& comp = renderers.at(j);
    const std::string pref = comp.count("location") ? comp.at("location") : "";
    std::vector<int> locs;
    for (int l = 0; l < static_cast<int>(quad.size()); ++l)
      if (pref.empty() || detail::location_allowed(pref, quad[static_cast<size_t>(l)])) locs.push_back(l);
    rng.shuffle(locs.begin(), locs.end());
    bool done = false;
    for (int l : locs) {
      const auto q = quad[static_cast<size_t>(l)];
      std::vector<std::pair<int, int>> isolated, free;
      for (int cy = 2 * q.qy; cy < 2 * q.qy + 2; ++cy)
        for (int cx = 2 * q.qx; cx < 2 * q.qx + 2; ++cx) {
          if (occupied[cy][cx]) continue;
          bool alone = true;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const int yy = cy + dy, xx = cx + dx;
              if (yy >= 0 && yy < 4 && xx >= 0 && xx < 4 && occupied[yy][xx]) alone = false;
            }
          (alone ? isolated : free).push_back({cx, cy});
        }
      const auto& pool = isolated.empty() ? free : isolated;
      if (pool.empty()) continue;
      const auto [cx, cy] = pool[rng.below(pool.size())];
      occupied[cy][cx] = true;
      placed.push_back({j, l, cx, cy});
      done = true;
      break;
    }
    (void)done;
  }

  // Lesions do not blend: each pixel shows the lesion that covers it most
  // deeply (core beats halo, deeper core beats shallower), so masks are
  // disjoint and a lesion's intensity is never shifted by a neighbour.
  Grid<double> best(n, n, 0.0), delta(n, n, 0.0);
  Grid<int> owner(n, n, -1);
  struct Dot {
    double cx, cy, level;
  };
  std::vector<Dot> dots;
  for (size_t li = 0; li < placed.size(); ++li) {
    const auto& pl = placed[li];
    const auto& comp = renderers.at(pl.disease);
    auto get = [&](const char* a, const char* dflt) {
      auto it = comp.find(a);
      return it == comp.end() ? std::string(dflt) : it->second;
    };
    const std::string texture = get("texture", "smooth"), shape = get("shape", "round"),
                      opacity = get("opacity", "opaque"), border = get("border", "sharp"),
                      fluid = get("fluid", "none"), focality = get("focality", "focal"),
                      other = get("other", "plain");
    const double level = (opacity == "lucent" ? -1.5 : 1.5) * diff.opacity_delta;
    // The wall covers three quarters of a ring's outline; the rest is cavity.
    const double wall = shape == "ring" ? level * 4.0 / 3.0 : level;
    const double r = rng.range(diff.radius_min, diff.radius_max);
    const double cx = (pl.cx + 0.5) * cell + rng.range(-diff.jitter, diff.jitter);
    const double cy = (pl.cy + 0.5) * cell + rng.range(-diff.jitter, diff.jitter);
    double ax = r, ay = r;
    if (shape == "wide") ax = 1.4 * r, ay = 0.7 * r;
    if (shape == "tall") ax = 0.7 * r, ay = 1.4 * r;
    if (shape == "ring") ax = ay = 1.1 * r;
    std::vector<detail::Blob> blobs;
    if (focality == "multi") {
      // A central focus with two satellites on opposite sides.
      const double rot = rng.uniform(0.0, 6.283185307179586);
      blobs.push_back({cx, cy, 0.5 * ax, 0.5 * ay});
      for (int b = 0; b < 2; ++b) {
        const double ang = rot + b * 3.141592653589793;
        blobs.push_back({cx + 1.15 * r * std::cos(ang), cy + 1.15 * r * std::sin(ang), 0.45 * ax, 0.45 * ay});
      }
    } else {
      blobs.push_back({cx, cy, ax, ay});
    }
    const int lw = n / 6 + 3;
    std::vector<double> lattice(static_cast<size_t>(lw * lw));
    for (auto& v : lattice) v = rng.uniform(-1.0, 1.0);

    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double dist = 1e9;
        const detail::Blob* nearest = &blobs[0];
        for (const auto& b : blobs) {
          const double dd = detail::blob_distance(b, shape, x + 0.5, y + 0.5);
          if (dd < dist) dist = dd, nearest = &b;
        }
        const double tex = detail::texture_value(texture, x, y, rng, lattice, lw);
        const bool cavity =
            shape == "ring" && dist > 0.0 && detail::blob_distance(*nearest, "round", x + 0.5, y + 0.5) < 0.0;
        double alpha = 0.0, score = 0.0;
        if (dist <= 0.0 || cavity) {
          alpha = 1.0;
          score = 1.0 - std::min(dist, 0.0);
        } else if (border == "soft" && dist < diff.halo) {
          alpha = score = 1.0 - dist / diff.halo;
        }
        if (alpha <= 0.0 || score <= best.at(y, x)) continue;
        double v = cavity ? 0.0 : wall + diff.texture_amplitude * tex;
        if (fluid == "level" && !cavity && alpha >= 1.0 && y + 0.5 > nearest->cy) v += 0.5 * wall;
        best.at(y, x) = score;
        delta.at(y, x) = alpha * v;
        owner.at(y, x) = alpha >= 1.0 ? static_cast<int>(li) : -1;
      }
    }
    if (other == "dot") dots.push_back({blobs[0].cx, blobs[0].cy, level});
  }
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] += delta.data[i];
  for (const auto& d : dots)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double dx = x + 0.5 - d.cx, dy = y + 0.5 - d.cy;
        if (dx * dx + dy * dy <= 2.25) img.at(y, x) = bg.at(y, x) - 0.8 * d.level;
      }
  for (size_t li = 0; li < placed.size(); ++li) {
    Grid<uint8_t> mask(n, n, 0);
    for (size_t i = 0; i < mask.data.size(); ++i)
      mask.data[i] = owner.data[i] == static_cast<int>(li);
    s.masks[placed[li].disease] = std::move(mask);
  }

  s.image = Grid<float>(n, n);
  for (size_t i = 0; i < img.data.size(); ++i)
    s.image.data[i] = static_cast<float>(std::min(1.0, std::max(0.0, img.data[i])));

  std::vector<EntityTriplet> triplets;
  std::set<int> present;
  for (const auto& pl : placed) {
    present.insert(pl.disease);
    triplets.push_back({kb.diseases[static_cast<size_t>(pl.disease)].name,
                        kb.locations[static_cast<size_t>(pl.location)], 1});
  }
  std::vector<int> absent;
  for (const auto& [j, comp] : renderers)
    if (!present.count(j)) absent.push_back(j);
  rng.shuffle(absent.begin(), absent.end());
  const int negations =
      std::min<int>(static_cast<int>(absent.size()), rng.range(0, std::max(0, max_negations)));
  for (int i = 0; i < negations; ++i)
    triplets.push_back({kb.diseases[static_cast<size_t>(absent[static_cast<size_t>(i)])].name,
                        std::nullopt, 0});
  rng.shuffle(triplets.begin(), triplets.end());
  s.report = render_report(triplets, rng, placed.empty());
  s.target = build_targets(triplets, kb, true);
  s.triplets = std::move(triplets);
  return s;
}

// --- Splits -----------------------------------------------------------------

struct SplitSizes {
  int train = 2000;
  int valid = 400;
  int test_seen = 400;
  int test_unseen = 400;
};

struct GeneratorConfig {
  uint64_t seed = 1234;
  std::string kb_path = "kb.synthetic";
  int image_size = 64;
  SplitSizes splits;
  std::vector<std::string> holdout = {"d11", "d12"};
  // Diseases to render; empty means every non-healthy KB disease.
  std::vector<std::string> diseases;
  double prevalence = 0.1;
  double unseen_prevalence = 0.3;
  double balance_tolerance = 0.05;
  int max_negations = 2;
  Difficulty difficulty;
  RendererKeywords renderers = default_renderer_keywords();
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> n = {"train", "valid", "test-seen", "test-unseen"};
  return n;
}

struct Split {
  std::string name;
  std::vector<SyntheticSample> samples;
};

struct Corpus {
  KnowledgeBase kb;
  std::vector<std::string> seen;     // disease names the model trains on
  std::vector<std::string> holdout;  // never positive in train/valid/test-seen
  int image_size = 64;
  std::map<std::string, Split> splits;

  const Split& split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw ConfigError("corpus has no split \"" + name + "\"");
    return it->second;
  }
};

// Content hash of a corpus: KB text, seen/holdout lists, and every sample's
// image, masks and report.
inline uint64_t corpus_fingerprint(const Corpus& c) {
  uint64_t h = fnv1a(serialize_kb(c.kb));
  for (const auto& d : c.seen) h = fnv1a(d + ",", h);
  h = fnv1a("|", h);
  for (const auto& d : c.holdout) h = fnv1a(d + ",", h);
  auto bytes = [](const auto& v) {
    return std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(v[0]));
  };
  for (const auto& [name, split] : c.splits) {
    h = fnv1a(name, h);
    for (const auto& s : split.samples) {
      h = fnv1a(bytes(s.image.data), h);
      h = fnv1a(s.report, h);
      for (const auto& [j, m] : s.masks) h = fnv1a(bytes(m.data), fnv1a(std::to_string(j), h));
    }
  }
  return h;
}

// Global sample seed; the offset ranges of the splits never overlap and the
// mix is a bijection, so per-sample seeds are pairwise distinct.
inline uint64_t sample_seed(uint64_t base, uint64_t offset) { return mix64(base ^ mix64(offset)); }

inline Corpus make_split(const GeneratorConfig& cfg, const KnowledgeBase& kb) {
  std::vector<std::string> rendered = cfg.diseases;
  if (rendered.empty())
    for (const auto& d : kb.diseases)
      if (d.name != kHealthyEntity) rendered.push_back(d.name);
  for (const auto& h : cfg.holdout)
    if (std::find(rendered.begin(), rendered.end(), h) == rendered.end())
      throw ConfigError("holdout disease \"" + h + "\" is not a rendered KB disease");
  Corpus corpus;
  corpus.kb = kb;
  corpus.image_size = cfg.image_size;
  corpus.holdout = cfg.holdout;
  for (const auto& d : rendered)
    if (std::find(cfg.holdout.begin(), cfg.holdout.end(), d) == cfg.holdout.end())
      corpus.seen.push_back(d);
  if (corpus.seen.empty()) throw ConfigError("holdout exhausts all diseases");

  const RendererSet renderers = derive_renderers(kb, rendered, cfg.renderers);
  std::vector<double> seen_prev(static_cast<size_t>(kb.num_diseases()), 0.0);
  for (const auto& d : corpus.seen) seen_prev[static_cast<size_t>(*kb.disease_index(d))] = cfg.prevalence;
  std::vector<double> unseen_prev = seen_prev;
  for (const auto& d : corpus.holdout)
    unseen_prev[static_cast<size_t>(*kb.disease_index(d))] = cfg.unseen_prevalence;

  const std::array<int, 4> sizes = {cfg.splits.train, cfg.splits.valid, cfg.splits.test_seen,
                                    cfg.splits.test_unseen};
  uint64_t offset = 0;
  for (size_t s = 0; s < 4; ++s) {
    Split split;
    split.name = split_names()[s];
    const auto& prev = s == 3 ? unseen_prev : seen_prev;
    for (int i = 0; i < sizes[s]; ++i, ++offset) {
      auto sample = generate_sample(sample_seed(cfg.seed, offset), kb, renderers, cfg.difficulty,
                                    prev, cfg.image_size, cfg.max_negations);
      char id[64];
      std::snprintf(id, sizeof(id), "%s-%06d", split.name.c_str(), i);
      sample.id = id;
      split.samples.push_back(std::move(sample));
    }
    corpus.splits[split.name] = std::move(split);
  }
  return corpus;
}

// Per-disease fraction of positive samples.
inline std::vector<double> class_marginals(const Split& split, int num_diseases) {
  std::vector<double> m(static_cast<size_t>(num_diseases), 0.0);
  if (split.samples.empty()) return m;
  for (const auto& s : split.samples)
    for (int j = 0; j < num_diseases; ++j) m[static_cast<size_t>(j)] += s.target.presence[static_cast<size_t>(j)];
  for (auto& v : m) v /= static_cast<double>(split.samples.size());
  return m;
}

// --- Config & disk I/O ------------------------------------------------------

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
  }
}

}  // namespace detail

inline GeneratorConfig parse_generator_config(const nlohmann::json& j) {
  GeneratorConfig c;
  detail::check_keys(j,
                     {"seed", "kb", "image_size", "splits", "holdout", "diseases", "prevalence",
                      "unseen_prevalence", "balance_tolerance", "max_negations", "difficulty",
                      "renderers"},
                     "generator config");
  try {
    c.seed = j.value("seed", c.seed);
    c.kb_path = j.value("kb", c.kb_path);
    c.image_size = j.value("image_size", c.image_size);
    if (j.contains("splits")) {
      const auto& s = j["splits"];
      detail::check_keys(s, {"train", "valid", "test_seen", "test_unseen"}, "splits");
      c.splits.train = s.value("train", c.splits.train);
      c.splits.valid = s.value("valid", c.splits.valid);
      c.splits.test_seen = s.value("test_seen", c.splits.test_seen);
      c.splits.test_unseen = s.value("test_unseen", c.splits.test_unseen);
    }
    c.holdout = j.value("holdout", c.holdout);
    c.diseases = j.value("diseases", c.diseases);
    c.prevalence = j.value("prevalence", c.prevalence);
    c.unseen_prevalence = j.value("unseen_prevalence", c.unseen_prevalence);
    c.balance_tolerance = j.value("balance_tolerance", c.balance_tolerance);
    c.max_negations = j.value("max_negations", c.max_negations);
    if (j.contains("difficulty")) {
      const auto& d = j["difficulty"];
      detail::check_keys(d,
                         {"background", "noise_sigma", "radius_min", "radius_max", "opacity_delta",
                          "texture_amplitude", "halo", "jitter"},
                         "difficulty");
      auto& f = c.difficulty;
      f.background = d.value("background", f.background);
      f.noise_sigma = d.value("noise_sigma", f.noise_sigma);
      f.radius_min = d.value("radius_min", f.radius_min);
      f.radius_max = d.value("radius_max", f.radius_max);
      f.opacity_delta = d.value("opacity_delta", f.opacity_delta);
      f.texture_amplitude = d.value("texture_amplitude", f.texture_amplitude);
      f.halo = d.value("halo", f.halo);
      f.jitter = d.value("jitter", f.jitter);
    }
    if (j.contains("renderers")) {
      c.renderers = j["renderers"].get<RendererKeywords>();
      const auto builtin = default_renderer_keywords();
      for (const auto& [aspect, values] : c.renderers) {
        auto it = builtin.find(aspect);
        if (it == builtin.end()) continue;  // rejected against the KB in derive_composition
        for (const auto& [value, kw] : values)
          if (!it->second.count(value))
            throw ConfigError("renderer " + aspect + " has no procedural value \"" + value + "\"");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  if (c.difficulty.radius_min < 1 || c.difficulty.radius_max < c.difficulty.radius_min)
    throw ConfigError("difficulty: bad radius range");
  return c;
}

inline nlohmann::json generator_config_json(const GeneratorConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["kb"] = c.kb_path;
  j["image_size"] = c.image_size;
  j["splits"] = {{"train", c.splits.train},
                 {"valid", c.splits.valid},
                 {"test_seen", c.splits.test_seen},
                 {"test_unseen", c.splits.test_unseen}};
  j["holdout"] = c.holdout;
  j["diseases"] = c.diseases;
  j["prevalence"] = c.prevalence;
  j["unseen_prevalence"] = c.unseen_prevalence;
  j["balance_tolerance"] = c.balance_tolerance;
  j["max_negations"] = c.max_negations;
  const auto& f = c.difficulty;
  j["difficulty"] = {{"background", f.background},   {"noise_sigma", f.noise_sigma},
                     {"radius_min", f.radius_min},   {"radius_max", f.radius_max},
                     {"opacity_delta", f.opacity_delta}, {"texture_amplitude", f.texture_amplitude},
                     {"halo", f.halo},               {"jitter", f.jitter}};
  j["renderers"] = c.renderers;
  return j;
}

// Layout:
//   <root>/manifest.json            kb file name, seen/holdout lists, image size
//   <root>/kb.json                  the KB the corpus was rendered from
//   <root>/<split>/index.jsonl      one record per sample
//   <root>/<split>/<id>.img.grid    f32 image
//   <root>/<split>/<id>.txt         report
//   <root>/<split>/<id>.target.grid i32, 2 x N: presence, location index (-1)
//   <root>/<split>/<id>.mask.<disease>.grid  u8 lesion mask
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  write_file_atomic(root / "kb.json", serialize_kb(corpus.kb));
  nlohmann::json manifest = {{"format", "mavl-corpus-1"},
                             {"kb", "kb.json"},
                             {"image_size", corpus.image_size},
                             {"seen", corpus.seen},
                             {"holdout", corpus.holdout},
                             {"splits", nlohmann::json::object()}};
  for (const auto& [name, split] : corpus.splits) {
    manifest["splits"][name] = split.samples.size();
    const fs::path dir = root / name;
    fs::create_directories(dir);
    std::string index;
    for (const auto& s : split.samples) {
      nlohmann::json rec;
      rec["id"] = s.id;
      rec["seed"] = s.seed;
      rec["image"] = s.id + ".img.grid";
      rec["report"] = s.id + ".txt";
      rec["target"] = s.id + ".target.grid";
      rec["masks"] = nlohmann::json::object();
      rec["positives"] = nlohmann::json::array();
      for (const auto& [j, mask] : s.masks) {
        const auto& dname = corpus.kb.diseases[static_cast<size_t>(j)].name;
        const std::string file = s.id + ".mask." + dname + ".grid";
        rec["masks"][dname] = file;
        save_grid(mask, dir / file);
      }
      for (size_t j = 0; j < s.target.presence.size(); ++j)
        if (s.target.presence[j]) rec["positives"].push_back(corpus.kb.diseases[j].name);
      save_grid(s.image, dir / (s.id + ".img.grid"));
      write_file_atomic(dir / (s.id + ".txt"), s.report + "\n");
      const int n = static_cast<int>(s.target.presence.size());
      Grid<int32_t> tg(2, n);
      for (int j = 0; j < n; ++j) {
        tg.at(0, j) = s.target.presence[static_cast<size_t>(j)];
        tg.at(1, j) = s.target.location_index[static_cast<size_t>(j)];
      }
      save_grid(tg, dir / (s.id + ".target.grid"));
      index += rec.dump() + "\n";
    }
    write_file_atomic(dir / "index.jsonl", index);
  }
  write_file_atomic(root / "manifest.json", manifest.dump(2) + "\n");
}

// `splits` empty loads every split listed in the manifest.
inline Corpus load_corpus(const std::filesystem::path& root, std::vector<std::string> splits = {}) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(root / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(root.string() + "/manifest.json: " + e.what());
  }
  Corpus corpus;
  corpus.kb = load_kb(root / manifest.at("kb").get<std::string>());
  corpus.image_size = manifest.at("image_size").get<int>();
  corpus.seen = manifest.at("seen").get<std::vector<std::string>>();
  corpus.holdout = manifest.at("holdout").get<std::vector<std::string>>();
  if (splits.empty())
    for (auto it = manifest["splits"].begin(); it != manifest["splits"].end(); ++it)
      splits.push_back(it.key());
  for (const auto& name : splits) {
    Split split;
    split.name = name;
    const auto dir = root / name;
    std::istringstream lines(read_file(dir / "index.jsonl"));
    std::string line;
    while (std::getline(lines, line)) {
      if (trim(line).empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      SyntheticSample s;
      s.id = rec.at("id").get<std::string>();
      s.seed = rec.at("seed").get<uint64_t>();
      s.image = load_grid<float>(dir / rec.at("image").get<std::string>());
      s.report = trim(read_file(dir / rec.at("report").get<std::string>()));
      const auto tg = load_grid<int32_t>(dir / rec.at("target").get<std::string>());
      for (int j = 0; j < tg.width; ++j) {
        s.target.presence.push_back(static_cast<uint8_t>(tg.at(0, j)));
        s.target.location_index.push_back(tg.at(1, j));
      }
      for (auto it = rec.at("masks").begin(); it != rec.at("masks").end(); ++it) {
        const auto j = corpus.kb.disease_index(it.key());
        if (!j) throw ParseError(s.id + ": mask for unknown disease " + it.key());
        s.masks[*j] = load_grid<uint8_t>(dir / it.value().get<std::string>());
      }
      split.samples.push_back(std::move(s));
    }
    corpus.splits[name] = std::move(split);
  }
  return corpus;
}

}  // namespace mavl
