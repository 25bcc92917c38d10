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

// Zero-shot inference through either head, heatmap extraction, and split
// evaluation into a MetricReport.

#pragma once

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mavl/metrics.hpp"
#include "mavl/model.hpp"
#include "mavl/synth.hpp"

namespace mavl {

enum class Head { contrastive, supervised };

inline std::string head_name(Head h) { return h == Head::contrastive ? "contrastive" : "supervised"; }

inline Head parse_head(const std::string& s) {
  if (s == "contrastive") return Head::contrastive;
  if (s == "supervised") return Head::supervised;
  throw ConfigError("unknown head \"" + s + "\" (contrastive, supervised)");
}

inline std::vector<Head> parse_heads(const std::string& s) {
  if (s == "both") return {Head::contrastive, Head::supervised};
  return {parse_head(s)};
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Per position k, the two-way softmax of f·a_dk/τ against f·a_hk/τ, i.e.
// sigmoid of the scaled difference; aggregated over k by mean, min or max.
template <typename T>
double contrastive_probability(const Matrix<T>& f, const Matrix<T>& disease, const Matrix<T>& healthy, double tau,
                               const std::string& aggregation = "mean") {
  if (disease.rows() != healthy.rows() || disease.cols() != f.cols())
    throw ShapeMismatch("contrastive probability: query sets do not match f");
  double acc = aggregation == "min" ? 1.0 : 0.0;
  for (Eigen::Index k = 0; k < disease.rows(); ++k) {
    const double diff = static_cast<double>(disease.row(k).dot(f.row(0))) - static_cast<double>(healthy.row(k).dot(f.row(0)));
    const double p = sigmoid(diff / tau);
    if (aggregation == "mean") acc += p;
    else if (aggregation == "min") acc = std::min(acc, p);
    else if (aggregation == "max") acc = std::max(acc, p);
    else throw ConfigError("unknown aggregation \"" + aggregation + "\" (mean, min, max)");
  }
  return aggregation == "mean" ? acc / static_cast<double>(disease.rows()) : acc;
}

template <typename T>
double supervised_probability(const Matrix<T>& logits) {
  return sigmoid(static_cast<double>(logits(0, 1)) - static_cast<double>(logits(0, 0)));
}

// Coarse attention (1×cells, or rows×cells averaged over rows) to a full
// resolution map in [0, 1].
template <typename T>
Grid<double> heatmap_image(const Matrix<T>& coarse, int grid, int image_size) {
  Grid<double> g(grid, grid);
  const Matrix<T> mean = coarse.colwise().mean();
  for (int i = 0; i < grid * grid; ++i) g.data[static_cast<size_t>(i)] = static_cast<double>(mean(0, i));
  auto up = upsample_bilinear(g, image_size, image_size);
  minmax_normalize(up);
  return up;
}

// Pixel index of the centre of the strongest coarse cell (first on ties).
// This is the heatmap's argmax without interpolation plateaus at the edges.
template <typename T>
size_t peak_pixel(const Matrix<T>& coarse, int grid, int image_size) {
  const Matrix<T> mean = coarse.colwise().mean();
  Eigen::Index r = 0, cell = 0;
  mean.maxCoeff(&r, &cell);
  const int s = image_size / grid;
  const int y = static_cast<int>(cell) / grid * s + s / 2, x = static_cast<int>(cell) % grid * s + s / 2;
  return static_cast<size_t>(y) * static_cast<size_t>(image_size) + static_cast<size_t>(x);
}

struct PredictionBundle {
  double probability = 0;
  Grid<double> heatmap;
  size_t peak = 0;  // pixel index, see peak_pixel
  Head head = Head::supervised;
};

template <typename T>
int healthy_index(const QueryBank<T>& bank) {
  for (size_t i = 0; i < bank.names.size(); ++i)
    if (bank.names[i] == kHealthyEntity) return static_cast<int>(i);
  throw MissingHealthyEntry("knowledge base has no \"" + std::string(kHealthyEntity) + "\" entry");
}

template <typename T>
PredictionBundle predict(const Model<T>& model, const QueryBank<T>& bank, const Grid<float>& image,
                         const std::string& disease, Head head, const std::string& aggregation = "mean") {
  const int j = bank.index(disease);
  const int h = head == Head::contrastive ? healthy_index(bank) : -1;
  typename Model<T>::Options opt;
  opt.pool = head == Head::contrastive;
  opt.diseases = {j};
  ForwardCache<T> c;
  model.forward(image_matrix<T>(image), bank.sets, opt, c);
  PredictionBundle b;
  b.head = head;
  b.probability = head == Head::contrastive
                      ? contrastive_probability(c.f, bank.sets[static_cast<size_t>(j)], bank.sets[static_cast<size_t>(h)],
                                                model.config().tau, aggregation)
                      : supervised_probability(c.ground[0].logits);
  b.heatmap = heatmap_image(c.ground[0].heatmap, model.config().grid(), model.config().image_size);
  b.peak = peak_pixel(c.ground[0].heatmap, model.config().grid(), model.config().image_size);
  return b;
}

template <typename T>
PredictionBundle zero_shot_contrastive(const Model<T>& model, const QueryBank<T>& bank, const Grid<float>& image,
                                       const std::string& disease, const std::string& aggregation = "mean") {
  return predict(model, bank, image, disease, Head::contrastive, aggregation);
}

template <typename T>
PredictionBundle zero_shot_supervised(const Model<T>& model, const QueryBank<T>& bank, const Grid<float>& image,
                                      const std::string& disease) {
  return predict(model, bank, image, disease, Head::supervised);
}

struct DiseaseMetrics {
  std::string name;
  int positives = 0, negatives = 0;
  std::optional<double> auc;  // absent when the split has a single class
  double f1 = 0, acc = 0;
  int grounded = 0;  // positives with a mask
  double iou = 0, dice = 0, pixel_acc = 0, argmax_hit = 0;
};

struct MetricReport {
  std::string split, head;
  int samples = 0;
  double threshold = 0.5, grounding_threshold = 0.5;
  std::vector<DiseaseMetrics> diseases;
  double macro_auc = 0, macro_f1 = 0, macro_acc = 0;
  int auc_diseases = 0;
  double macro_iou = 0, macro_dice = 0, macro_pixel_acc = 0, macro_argmax_hit = 0;
  int grounded_diseases = 0;

  const DiseaseMetrics& at(const std::string& name) const {
    for (const auto& d : diseases)
      if (d.name == name) return d;
    throw UnknownEntity("report has no disease \"" + name + "\"");
  }

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& d : diseases) {
      nlohmann::json e = {{"positives", d.positives}, {"negatives", d.negatives}, {"f1", d.f1}, {"acc", d.acc},
                          {"grounded", d.grounded}};
      e["auc"] = d.auc ? nlohmann::json(*d.auc) : nlohmann::json(nullptr);
      if (d.grounded > 0) {
        e["iou"] = d.iou;
        e["dice"] = d.dice;
        e["pixel_acc"] = d.pixel_acc;
        e["argmax_hit"] = d.argmax_hit;
      }
      per[d.name] = e;
    }
    return {{"split", split},
            {"head", head},
            {"samples", samples},
            {"threshold", threshold},
            {"classification",
             {{"macro_auc", macro_auc}, {"macro_f1", macro_f1}, {"macro_acc", macro_acc}, {"diseases", auc_diseases}}},
            {"grounding",
             {{"threshold", grounding_threshold},
              {"macro_iou", macro_iou},
              {"macro_dice", macro_dice},
              {"macro_pixel_acc", macro_pixel_acc},
              {"macro_argmax_hit", macro_argmax_hit},
              {"diseases", grounded_diseases}}},
            {"per_disease", per}};
  }

  std::string table() const {
    std::ostringstream os;
    char line[256];
    os << "split " << split << ", head " << head << ", " << samples << " samples\n";
    std::snprintf(line, sizeof line, "%-18s %5s %5s %7s %7s %7s %7s %7s %7s\n", "disease", "pos", "neg", "AUC", "F1",
                  "ACC", "IoU", "Dice", "hit");
    os << line;
    for (const auto& d : diseases) {
      const std::string a = d.auc ? std::to_string(*d.auc).substr(0, 6) : "-";
      const std::string g1 = d.grounded ? std::to_string(d.iou).substr(0, 6) : "-";
      const std::string g2 = d.grounded ? std::to_string(d.dice).substr(0, 6) : "-";
      const std::string g3 = d.grounded ? std::to_string(d.argmax_hit).substr(0, 6) : "-";
      std::snprintf(line, sizeof line, "%-18s %5d %5d %7s %7.4f %7.4f %7s %7s %7s\n", d.name.c_str(), d.positives,
                    d.negatives, a.c_str(), d.f1, d.acc, g1.c_str(), g2.c_str(), g3.c_str());
      os << line;
    }
    std::snprintf(line, sizeof line, "%-18s %5s %5s %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f\n", "macro", "", "", macro_auc,
                  macro_f1, macro_acc, macro_iou, macro_dice, macro_argmax_hit);
    os << line;
    return os.str();
  }
};

struct EvalConfig {
  double threshold = 0.5;
  double grounding_threshold = 0.5;
  std::string aggregation = "mean";
  bool grounding = true;
};

namespace detail {

// Per-sample heatmaps of positives with masks, grouped per disease.
struct GroundingCase {
  int disease;  // position in the evaluated list
  Grid<double> heatmap;
  size_t peak;
  const Grid<uint8_t>* mask;
};

template <typename T>
void run_split(const Model<T>& model, const QueryBank<T>& bank, const Split& split,
               const std::vector<std::string>& diseases, bool want_con, bool want_sup, bool want_ground,
               const std::string& aggregation, std::vector<std::vector<double>>& con,
               std::vector<std::vector<double>>& sup, std::vector<std::vector<uint8_t>>& labels,
               std::vector<GroundingCase>& cases, const KnowledgeBase& kb) {
  std::vector<int> qidx, kbidx;
  for (const auto& d : diseases) {
    qidx.push_back(bank.index(d));
    const auto k = kb.disease_index(d);
    if (!k) throw UnknownEntity("split KB has no disease \"" + d + "\"");
    kbidx.push_back(*k);
  }
  const int healthy = want_con ? healthy_index(bank) : -1;
  const size_t n = diseases.size();
  con.assign(n, {});
  sup.assign(n, {});
  labels.assign(n, {});
  cases.clear();
  ForwardCache<T> c;
  for (const auto& s : split.samples) {
    typename Model<T>::Options opt;
    opt.pool = want_con;
    std::vector<int> slot(n, -1);
    for (size_t i = 0; i < n; ++i) {
      const bool has_mask = s.masks.count(kbidx[i]) > 0;
      if (want_sup || (want_ground && has_mask)) {
        slot[i] = static_cast<int>(opt.diseases.size());
        opt.diseases.push_back(qidx[i]);
      }
    }
    model.forward(image_matrix<T>(s.image), bank.sets, opt, c);
    for (size_t i = 0; i < n; ++i) {
      labels[i].push_back(s.target.presence[static_cast<size_t>(kbidx[i])]);
      if (want_con)
        con[i].push_back(contrastive_probability(c.f, bank.sets[static_cast<size_t>(qidx[i])],
                                                 bank.sets[static_cast<size_t>(healthy)], model.config().tau,
                                                 aggregation));
      if (want_sup) sup[i].push_back(supervised_probability(c.ground[static_cast<size_t>(slot[i])].logits));
      auto it = s.masks.find(kbidx[i]);
      if (want_ground && it != s.masks.end()) {
        const auto& coarse = c.ground[static_cast<size_t>(slot[i])].heatmap;
        const int grid = model.config().grid(), size = model.config().image_size;
        cases.push_back({static_cast<int>(i), heatmap_image(coarse, grid, size), peak_pixel(coarse, grid, size),
                         &it->second});
      }
    }
  }
}

}  // namespace detail

// One report per requested head over `diseases`. Grounding uses the decoder
// heatmap and is identical in every head's report.
template <typename T>
std::vector<MetricReport> evaluate_split(const Model<T>& model, const QueryBank<T>& bank, const KnowledgeBase& kb,
                                         const Split& split, const std::vector<std::string>& diseases,
                                         const std::vector<Head>& heads, const EvalConfig& cfg = {}) {
  bool want_con = false, want_sup = false;
  for (Head h : heads) (h == Head::contrastive ? want_con : want_sup) = true;
  std::vector<std::vector<double>> con, sup;
  std::vector<std::vector<uint8_t>> labels;
  std::vector<detail::GroundingCase> cases;
  detail::run_split(model, bank, split, diseases, want_con, want_sup, cfg.grounding, cfg.aggregation, con, sup,
                    labels, cases, kb);

  const size_t n = diseases.size();
  std::vector<DiseaseMetrics> ground(n);
  for (size_t i = 0; i < n; ++i) ground[i].name = diseases[i];
  for (const auto& gc : cases) {
    auto& d = ground[static_cast<size_t>(gc.disease)];
    const auto m = grounding_metrics(gc.heatmap, *gc.mask, cfg.grounding_threshold);
    d.grounded += 1;
    d.iou += m.iou;
    d.dice += m.dice;
    d.pixel_acc += m.pixel_acc;
    d.argmax_hit += gc.mask->data[gc.peak] ? 1.0 : 0.0;
  }

  std::vector<MetricReport> out;
  for (Head h : heads) {
    MetricReport r;
    r.split = split.name;
    r.head = head_name(h);
    r.samples = static_cast<int>(split.samples.size());
    r.threshold = cfg.threshold;
    r.grounding_threshold = cfg.grounding_threshold;
    const auto& scores = h == Head::contrastive ? con : sup;
    for (size_t i = 0; i < n; ++i) {
      DiseaseMetrics d = ground[i];
      for (auto l : labels[i]) (l ? d.positives : d.negatives) += 1;
      if (!scores[i].empty()) {
        if (d.positives > 0 && d.negatives > 0) d.auc = auc(scores[i], labels[i]);
        const auto tm = threshold_metrics(scores[i], labels[i], cfg.threshold);
        d.f1 = tm.f1;
        d.acc = tm.acc;
      }
      if (d.grounded > 0) {
        d.iou /= d.grounded;
        d.dice /= d.grounded;
        d.pixel_acc /= d.grounded;
        d.argmax_hit /= d.grounded;
      }
      r.diseases.push_back(d);
    }
    for (const auto& d : r.diseases) {
      if (d.auc) {
        r.macro_auc += *d.auc;
        r.macro_f1 += d.f1;
        r.macro_acc += d.acc;
        ++r.auc_diseases;
      }
      if (d.grounded > 0) {
        r.macro_iou += d.iou;
        r.macro_dice += d.dice;
        r.macro_pixel_acc += d.pixel_acc;
        r.macro_argmax_hit += d.argmax_hit;
        ++r.grounded_diseases;
      }
    }
    if (r.auc_diseases) {
      r.macro_auc /= r.auc_diseases;
      r.macro_f1 /= r.auc_diseases;
      r.macro_acc /= r.auc_diseases;
    }
    if (r.grounded_diseases) {
      r.macro_iou /= r.grounded_diseases;
      r.macro_dice /= r.grounded_diseases;
      r.macro_pixel_acc /= r.grounded_diseases;
      r.macro_argmax_hit /= r.grounded_diseases;
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<double> threshold_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(0.05 * i);
  return g;
}

// The threshold on the grid maximizing macro Dice over positives with masks.
template <typename T>
double select_grounding_threshold(const Model<T>& model, const QueryBank<T>& bank, const KnowledgeBase& kb,
                                  const Split& split, const std::vector<std::string>& diseases) {
  std::vector<std::vector<double>> con, sup;
  std::vector<std::vector<uint8_t>> labels;
  std::vector<detail::GroundingCase> cases;
  detail::run_split(model, bank, split, diseases, false, false, true, "mean", con, sup, labels, cases, kb);
  double best = 0.5, best_dice = -1;
  for (double t : threshold_grid()) {
    std::vector<double> sum(diseases.size(), 0.0);
    std::vector<int> cnt(diseases.size(), 0);
    for (const auto& gc : cases) {
      sum[static_cast<size_t>(gc.disease)] += grounding_metrics(gc.heatmap, *gc.mask, t).dice;
      cnt[static_cast<size_t>(gc.disease)] += 1;
    }
    double macro = 0;
    int used = 0;
    for (size_t i = 0; i < sum.size(); ++i)
      if (cnt[i]) macro += sum[i] / cnt[i], ++used;
    if (used) macro /= used;
    if (macro > best_dice) best_dice = macro, best = t;
  }
  return best;
}

}  // namespace mavl
