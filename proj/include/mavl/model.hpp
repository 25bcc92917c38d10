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

// The matching network:
//
//   image --conv stack--> V (h·w × d) --attention pool--> f (unit, d)
//   V, Q_j --cross-attention decoder--> F_j ((K+1) × d), heatmap
//   F_j --flatten, shared W--> 2 logits
//   F_j --mean, linear, normalize--> location embedding
//
// Everything is templated on the scalar type; training runs in float and
// gradient checks in double.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mavl/checkpoint.hpp"
#include "mavl/common.hpp"
#include "mavl/grid.hpp"
#include "mavl/kb.hpp"
#include "mavl/nn.hpp"
#include "mavl/text_embedder.hpp"

namespace mavl {

struct ModelConfig {
  int image_size = 64;
  std::vector<int> channels = {8, 16, 32, 64};  // one stride-2 block each
  std::vector<int> kernels = {4, 4, 2, 2};      // even sizes, one per block
  int pool_heads = 4;
  int heads = 4;
  int layers = 2;
  int ffn_dim = 128;
  int queries = 9;  // rows of every aspect query set
  double tau = 0.07;
  double dropout = 0.0;
  uint64_t init_seed = 17;
  uint64_t text_seed = 0x5eed7e47ULL;
  bool positional = true;
  bool classifier_bias = true;
  std::string heatmap = "mean";  // or "per_aspect"

  int dim() const { return channels.back(); }
  int grid() const { return image_size >> channels.size(); }
  int cells() const { return grid() * grid(); }

  void validate() const {
    if (channels.empty()) throw ConfigError("model needs at least one conv block");
    for (int c : channels)
      if (c <= 0) throw ConfigError("conv channel counts must be positive");
    if (kernels.size() != channels.size()) throw ConfigError("need one kernel size per conv block");
    for (int k : kernels)
      if (k < 2 || k % 2 != 0) throw ConfigError("conv kernel sizes must be even and >= 2");
    if (image_size <= 0 || (image_size % (1 << channels.size())) != 0)
      throw ConfigError("image size must be divisible by 2^blocks");
    if (heads <= 0 || dim() % heads != 0) throw ConfigError("d must be divisible by heads");
    if (pool_heads <= 0 || dim() % pool_heads != 0) throw ConfigError("d must be divisible by pool_heads");
    if (layers < 1 || ffn_dim < 1 || queries < 1) throw ConfigError("layers, ffn_dim, queries must be positive");
    if (!(tau > 0)) throw ConfigError("tau must be positive");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0, 1)");
    if (heatmap != "mean" && heatmap != "per_aspect") throw ConfigError("heatmap must be mean or per_aspect");
  }
};

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"image_size", c.image_size}, {"channels", c.channels}, {"kernels", c.kernels}, {"pool_heads", c.pool_heads},
          {"heads", c.heads},           {"layers", c.layers},     {"ffn_dim", c.ffn_dim},
          {"queries", c.queries},       {"tau", c.tau},           {"dropout", c.dropout},
          {"init_seed", c.init_seed},   {"text_seed", c.text_seed}, {"positional", c.positional},
          {"classifier_bias", c.classifier_bias}, {"heatmap", c.heatmap}};
}

inline ModelConfig parse_model_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "image_size") c.image_size = v.get<int>();
      else if (k == "channels") c.channels = v.get<std::vector<int>>();
      else if (k == "kernels") c.kernels = v.get<std::vector<int>>();
      else if (k == "pool_heads") c.pool_heads = v.get<int>();
      else if (k == "heads") c.heads = v.get<int>();
      else if (k == "layers") c.layers = v.get<int>();
      else if (k == "ffn_dim") c.ffn_dim = v.get<int>();
      else if (k == "queries") c.queries = v.get<int>();
      else if (k == "tau") c.tau = v.get<double>();
      else if (k == "dropout") c.dropout = v.get<double>();
      else if (k == "init_seed") c.init_seed = v.get<uint64_t>();
      else if (k == "text_seed") c.text_seed = v.get<uint64_t>();
      else if (k == "positional") c.positional = v.get<bool>();
      else if (k == "classifier_bias") c.classifier_bias = v.get<bool>();
      else if (k == "heatmap") c.heatmap = v.get<std::string>();
      else throw ConfigError("unknown model config key \"" + k + "\"");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model config key \"" + k + "\": " + e.what());
    }
  }
  c.validate();
  return c;
}

template <typename T>
struct DecoderLayerParams {
  Matrix<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

template <typename T>
struct ModelParams {
  std::vector<Matrix<T>> conv_w, conv_b;
  Matrix<T> pool_pos, pool_wq, pool_bq, pool_wk, pool_bk, pool_wv, pool_bv, pool_wo, pool_bo;
  Matrix<T> mem_ln_g, mem_ln_b, mem_pos;
  std::vector<DecoderLayerParams<T>> layers;
  Matrix<T> out_ln_g, out_ln_b;
  Matrix<T> cls_w, cls_b;
  Matrix<T> loc_w, loc_b;

  // f(name, matrix) over every parameter in a fixed order. Name prefixes
  // give the groups: conv, pool, dec, cls, loc.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.visit([](const std::string&, Matrix<T>& m) { m.setZero(); });
    return z;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.conv_w.resize(conv_w.size());
    out.conv_b.resize(conv_b.size());
    out.layers.resize(layers.size());
    std::vector<const Matrix<T>*> src;
    visit([&](const std::string&, const Matrix<T>& m) { src.push_back(&m); });
    size_t i = 0;
    out.visit([&](const std::string&, Matrix<U>& m) { m = src[i++]->template cast<U>(); });
    return out;
  }

  size_t count() const {
    size_t n = 0;
    visit([&](const std::string&, const Matrix<T>& m) { n += static_cast<size_t>(m.size()); });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    for (size_t b = 0; b < s.conv_w.size(); ++b) {
      f("conv" + std::to_string(b) + ".w", s.conv_w[b]);
      f("conv" + std::to_string(b) + ".b", s.conv_b[b]);
    }
    f("pool.pos", s.pool_pos);
    f("pool.wq", s.pool_wq);
    f("pool.bq", s.pool_bq);
    f("pool.wk", s.pool_wk);
    f("pool.bk", s.pool_bk);
    f("pool.wv", s.pool_wv);
    f("pool.bv", s.pool_bv);
    f("pool.wo", s.pool_wo);
    f("pool.bo", s.pool_bo);
    f("dec.mem_ln.g", s.mem_ln_g);
    f("dec.mem_ln.b", s.mem_ln_b);
    f("dec.mem_pos", s.mem_pos);
    for (size_t l = 0; l < s.layers.size(); ++l) {
      auto& L = s.layers[l];
      const std::string p = "dec.layer" + std::to_string(l) + ".";
      f(p + "ln1.g", L.ln1_g);
      f(p + "ln1.b", L.ln1_b);
      f(p + "wq", L.wq);
      f(p + "bq", L.bq);
      f(p + "wk", L.wk);
      f(p + "bk", L.bk);
      f(p + "wv", L.wv);
      f(p + "bv", L.bv);
      f(p + "wo", L.wo);
      f(p + "bo", L.bo);
      f(p + "ln2.g", L.ln2_g);
      f(p + "ln2.b", L.ln2_b);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
    }
    f("dec.out_ln.g", s.out_ln_g);
    f("dec.out_ln.b", s.out_ln_b);
    f("cls.w", s.cls_w);
    f("cls.b", s.cls_b);
    f("loc.w", s.loc_w);
    f("loc.b", s.loc_b);
  }
};

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(mix64(cfg.init_seed));
  const int d = cfg.dim();
  auto normal = [&](int r, int c, double sd) {
    Matrix<T> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(sd * rng.normal());
    return m;
  };
  auto zeros = [](int r, int c) { return Matrix<T>::Zero(r, c).eval(); };
  auto ones = [](int r, int c) { return Matrix<T>::Ones(r, c).eval(); };
  auto dense = [&](int in, int out) { return normal(in, out, 1.0 / std::sqrt(double(in))); };

  ModelParams<T> p;
  int cin = 1;
  for (size_t b = 0; b < cfg.channels.size(); ++b) {
    const int c = cfg.channels[b], fan_in = cfg.kernels[b] * cfg.kernels[b] * cin;
    p.conv_w.push_back(normal(fan_in, c, std::sqrt(2.0 / fan_in)));
    p.conv_b.push_back(zeros(1, c));
    cin = c;
  }
  p.pool_pos = normal(cfg.cells() + 1, d, 0.1);
  p.pool_wq = dense(d, d);
  p.pool_bq = zeros(1, d);
  p.pool_wk = dense(d, d);
  p.pool_bk = zeros(1, d);
  p.pool_wv = dense(d, d);
  p.pool_bv = zeros(1, d);
  p.pool_wo = dense(d, d);
  p.pool_bo = zeros(1, d);
  p.mem_ln_g = ones(1, d);
  p.mem_ln_b = zeros(1, d);
  p.mem_pos = normal(cfg.cells(), d, 0.1);
  for (int l = 0; l < cfg.layers; ++l) {
    DecoderLayerParams<T> L;
    L.ln1_g = ones(1, d);
    L.ln1_b = zeros(1, d);
    L.wq = dense(d, d);
    L.bq = zeros(1, d);
    L.wk = dense(d, d);
    L.bk = zeros(1, d);
    L.wv = dense(d, d);
    L.bv = zeros(1, d);
    L.wo = dense(d, d);
    L.bo = zeros(1, d);
    L.ln2_g = ones(1, d);
    L.ln2_b = zeros(1, d);
    L.w1 = dense(d, cfg.ffn_dim);
    L.b1 = zeros(1, cfg.ffn_dim);
    L.w2 = dense(cfg.ffn_dim, d);
    L.b2 = zeros(1, d);
    p.layers.push_back(std::move(L));
  }
  p.out_ln_g = ones(1, d);
  p.out_ln_b = zeros(1, d);
  p.cls_w = dense(cfg.queries * d, 2);
  p.cls_b = zeros(1, 2);
  p.loc_w = dense(d, d);
  p.loc_b = zeros(1, d);
  return p;
}

// Frozen text side: aspect query sets per KB disease and the location table.
template <typename T>
struct QueryBank {
  std::vector<int> positions;            // query positions kept, 0 = definition
  std::vector<std::string> names;        // KB disease order
  std::vector<Matrix<T>> sets;           // per disease, positions.size() × d, unit rows
  std::vector<std::string> location_names;
  Matrix<T> locations;                   // M × d, unit rows

  int index(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    throw UnknownEntity("no query set for \"" + name + "\"");
  }
};

inline std::string location_sentence(const std::string& location) { return "It is located at " + location; }

// The first `count` positions (definition first); count <= 0 keeps all K+1.
inline std::vector<int> leading_positions(int count, int total) {
  if (count <= 0 || count > total) count = total;
  std::vector<int> pos(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) pos[static_cast<size_t>(i)] = i;
  return pos;
}

template <typename T>
QueryBank<T> build_query_bank(const KnowledgeBase& kb, const TextEmbedder& embedder,
                              const std::vector<int>& positions) {
  QueryBank<T> bank;
  bank.positions = positions;
  for (const auto& d : kb.diseases) {
    const auto texts = query_aspects(kb, d.name);
    std::vector<std::string> chosen;
    for (int p : positions) {
      if (p < 0 || p >= static_cast<int>(texts.size())) throw ConfigError("aspect position out of range");
      chosen.push_back(texts[static_cast<size_t>(p)]);
    }
    bank.names.push_back(d.name);
    bank.sets.push_back(embedder.encode_rows<T>(chosen));
  }
  bank.location_names = kb.locations;
  std::vector<std::string> sentences;
  for (const auto& l : kb.locations) sentences.push_back(location_sentence(l));
  bank.locations = embedder.encode_rows<T>(sentences);
  return bank;
}

template <typename T>
Matrix<T> image_matrix(const Grid<float>& img) {
  Matrix<T> x(static_cast<Eigen::Index>(img.height) * img.width, 1);
  for (size_t i = 0; i < img.data.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<T>(img.data[i]);
  return x;
}

template <typename T>
struct DecoderLayerCache {
  Matrix<T> x, h1, q, a, x1, h2, z, zd, drop;
  nn::LayerNormCache<T> ln1, ln2;
  nn::AttentionCache<T> att;
};

template <typename T>
struct GroundCache {
  Matrix<T> queries;
  std::vector<DecoderLayerCache<T>> layers;
  Matrix<T> x_out;
  nn::LayerNormCache<T> out_ln;
  Matrix<T> features;  // F_j
  Matrix<T> loc_mean, loc_u, location;  // location = unit ẽ_j
  T loc_norm = T(0);
  Matrix<T> logits;   // 1×2
  Matrix<T> heatmap;  // 1×cells (mean) or queries×cells (per_aspect)
};

template <typename T>
struct ForwardCache {
  std::vector<Matrix<T>> cols, outs;
  std::vector<int> block_sizes;  // input side length per block
  Matrix<T> V;
  bool has_pool = false;
  Matrix<T> pool_x, pool_qin, pool_q, pool_k, pool_v, pool_o, pool_u, f;
  T pool_norm = T(0);
  nn::AttentionCache<T> pool_att;
  bool has_memory = false;
  nn::LayerNormCache<T> mem_ln;
  Matrix<T> mem, mem_keys;  // mem_keys = mem + positions, feeds keys and values
  std::vector<Matrix<T>> K, Vv;
  std::vector<int> diseases;  // query-set index per ground entry
  std::vector<GroundCache<T>> ground;
};

template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, ModelParams<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
  }
  explicit Model(ModelConfig cfg) : Model(cfg, init_params<T>(cfg)) {}

  const ModelConfig& config() const { return cfg_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }

  // --- Vision encoder -------------------------------------------------------

  Matrix<T> encode_image(const Matrix<T>& image, ForwardCache<T>& c) const {
    const int n = cfg_.image_size;
    if (image.rows() != static_cast<Eigen::Index>(n) * n || image.cols() != 1)
      throw ShapeMismatch("image must be " + std::to_string(n) + "x" + std::to_string(n));
    c.cols.clear();
    c.outs.clear();
    c.block_sizes.clear();
    Matrix<T> x = image;
    int side = n;
    for (size_t b = 0; b < params_.conv_w.size(); ++b) {
      c.block_sizes.push_back(side);
      c.cols.push_back(nn::im2col(x, side, side, cfg_.kernels[b]));
      x = nn::linear(c.cols.back(), params_.conv_w[b], params_.conv_b[b]);
      nn::relu_inplace(x);
      c.outs.push_back(x);
      side /= 2;
    }
    c.V = x;
    return x;
  }

  // Returns d(image) when requested, for input-gradient checks.
  void encode_image_backward(const ForwardCache<T>& c, Matrix<T> dV, ModelParams<T>& g,
                             Matrix<T>* dimage = nullptr) const {
    for (size_t b = params_.conv_w.size(); b-- > 0;) {
      nn::relu_backward_inplace(c.outs[b], dV);
      Matrix<T> dcol = nn::linear_backward(c.cols[b], params_.conv_w[b], dV, g.conv_w[b], g.conv_b[b]);
      if (b == 0 && !dimage) break;
      const int side = c.block_sizes[b];
      const auto cin = b == 0 ? Eigen::Index(1) : params_.conv_w[b - 1].cols();
      dV = nn::col2im(dcol, side, side, cin, cfg_.kernels[b]);
    }
    if (dimage) *dimage = dV;
  }

  // --- Attention pool -------------------------------------------------------

  Matrix<T> attention_pool(const Matrix<T>& V, ForwardCache<T>& c) const {
    const auto& p = params_;
    const auto cells = V.rows();
    c.pool_qin = V.colwise().mean();
    c.pool_x = V;
    if (cfg_.positional) {
      c.pool_qin += p.pool_pos.row(0);
      c.pool_x += p.pool_pos.bottomRows(cells);
    }
    c.pool_q = nn::linear(c.pool_qin, p.pool_wq, p.pool_bq);
    c.pool_k = nn::linear(c.pool_x, p.pool_wk, p.pool_bk);
    c.pool_v = nn::linear(c.pool_x, p.pool_wv, p.pool_bv);
    c.pool_o = nn::attention(c.pool_q, c.pool_k, c.pool_v, cfg_.pool_heads, c.pool_att);
    c.pool_u = nn::linear(c.pool_o, p.pool_wo, p.pool_bo);
    c.f = nn::l2_normalize(c.pool_u, c.pool_norm);
    c.has_pool = true;
    return c.f;
  }

  Matrix<T> attention_pool_backward(const ForwardCache<T>& c, const Matrix<T>& df, ModelParams<T>& g) const {
    const auto& p = params_;
    const Matrix<T> du = nn::l2_normalize_backward(c.f, c.pool_norm, df);
    const Matrix<T> dO = nn::linear_backward(c.pool_o, p.pool_wo, du, g.pool_wo, g.pool_bo);
    Matrix<T> dk = Matrix<T>::Zero(c.pool_k.rows(), c.pool_k.cols());
    Matrix<T> dv = Matrix<T>::Zero(c.pool_v.rows(), c.pool_v.cols());
    const Matrix<T> dq = nn::attention_backward(c.pool_q, c.pool_k, c.pool_v, cfg_.pool_heads, c.pool_att, dO, dk, dv);
    const Matrix<T> dqin = nn::linear_backward(c.pool_qin, p.pool_wq, dq, g.pool_wq, g.pool_bq);
    Matrix<T> dX = nn::linear_backward(c.pool_x, p.pool_wk, dk, g.pool_wk, g.pool_bk);
    dX += nn::linear_backward(c.pool_x, p.pool_wv, dv, g.pool_wv, g.pool_bv);
    if (cfg_.positional) {
      g.pool_pos.row(0) += dqin.row(0);
      g.pool_pos.bottomRows(dX.rows()) += dX;
    }
    Matrix<T> dV = dX;
    dV.rowwise() += dqin.row(0) / T(dX.rows());
    return dV;
  }

  // --- Fusion decoder -------------------------------------------------------

  void prepare_memory(const Matrix<T>& V, ForwardCache<T>& c) const {
    const auto& p = params_;
    c.mem = nn::layer_norm(V, p.mem_ln_g, p.mem_ln_b, c.mem_ln);
    c.mem_keys = c.mem;
    if (cfg_.positional) c.mem_keys += p.mem_pos;
    c.K.clear();
    c.Vv.clear();
    for (const auto& L : p.layers) {
      c.K.push_back(nn::linear(c.mem_keys, L.wk, L.bk));
      c.Vv.push_back(nn::linear(c.mem_keys, L.wv, L.bv));
    }
    c.has_memory = true;
  }

  // Grounds one query set against the prepared memory. `rng` enables dropout.
  void ground(const Matrix<T>& Q, const ForwardCache<T>& c, GroundCache<T>& gc, Rng* rng = nullptr) const {
    const auto& p = params_;
    const int d = cfg_.dim();
    if (Q.cols() != d) throw ShapeMismatch("query width " + std::to_string(Q.cols()) + " != d " + std::to_string(d));
    if (Q.rows() != cfg_.queries)
      throw ShapeMismatch("query set has " + std::to_string(Q.rows()) + " rows, model expects " +
                          std::to_string(cfg_.queries));
    gc.queries = Q;
    gc.layers.resize(p.layers.size());
    Matrix<T> x = Q;
    for (size_t l = 0; l < p.layers.size(); ++l) {
      const auto& L = p.layers[l];
      auto& lc = gc.layers[l];
      lc.x = x;
      lc.h1 = nn::layer_norm(x, L.ln1_g, L.ln1_b, lc.ln1);
      lc.q = nn::linear(lc.h1, L.wq, L.bq);
      lc.a = nn::attention(lc.q, c.K[l], c.Vv[l], cfg_.heads, lc.att);
      lc.x1 = x + nn::linear(lc.a, L.wo, L.bo);
      lc.h2 = nn::layer_norm(lc.x1, L.ln2_g, L.ln2_b, lc.ln2);
      lc.z = nn::linear(lc.h2, L.w1, L.b1);
      nn::relu_inplace(lc.z);
      if (rng && cfg_.dropout > 0) {
        lc.drop.resize(lc.z.rows(), lc.z.cols());
        const T keep = T(1) / T(1 - cfg_.dropout);
        for (Eigen::Index i = 0; i < lc.drop.size(); ++i)
          lc.drop.data()[i] = rng->bernoulli(cfg_.dropout) ? T(0) : keep;
        lc.zd = lc.z.cwiseProduct(lc.drop);
      } else {
        lc.drop.resize(0, 0);
        lc.zd = lc.z;
      }
      x = lc.x1 + nn::linear(lc.zd, L.w2, L.b2);
    }
    gc.x_out = x;
    gc.features = nn::layer_norm(x, p.out_ln_g, p.out_ln_b, gc.out_ln);

    const auto& last = gc.layers.back().att.probs;
    Matrix<T> per_query = last[0];
    for (size_t h = 1; h < last.size(); ++h) per_query += last[h];
    per_query /= T(last.size());
    gc.heatmap = cfg_.heatmap == "per_aspect" ? per_query : Matrix<T>(per_query.colwise().mean());

    gc.logits = classify_supervised(gc.features);
    gc.loc_mean = gc.features.colwise().mean();
    gc.loc_u = nn::linear(gc.loc_mean, p.loc_w, p.loc_b);
    gc.location = nn::l2_normalize(gc.loc_u, gc.loc_norm);
  }

  Matrix<T> classify_supervised(const Matrix<T>& F) const {
    if (F.size() != params_.cls_w.rows())
      throw ShapeMismatch("flattened features have " + std::to_string(F.size()) + " entries, classifier expects " +
                          std::to_string(params_.cls_w.rows()));
    const Eigen::Map<const Matrix<T>> flat(F.data(), 1, F.size());
    Matrix<T> logits = flat * params_.cls_w;
    if (cfg_.classifier_bias) logits += params_.cls_b;
    return logits;
  }

  // dlogits (1×2) and dlocation (1×d) may be empty. Accumulates dK, dVv.
  void ground_backward(const ForwardCache<T>& c, const GroundCache<T>& gc, const Matrix<T>& dlogits,
                       const Matrix<T>& dlocation, ModelParams<T>& g, std::vector<Matrix<T>>& dK,
                       std::vector<Matrix<T>>& dVv) const {
    const auto& p = params_;
    const auto nq = gc.features.rows(), d = gc.features.cols();
    Matrix<T> dF = Matrix<T>::Zero(nq, d);
    if (dlogits.size() > 0) {
      const Eigen::Map<const Matrix<T>> flat(gc.features.data(), 1, gc.features.size());
      g.cls_w.noalias() += flat.transpose() * dlogits;
      if (cfg_.classifier_bias) g.cls_b += dlogits;
      const Matrix<T> dflat = dlogits * p.cls_w.transpose();
      dF += Eigen::Map<const Matrix<T>>(dflat.data(), nq, d);
    }
    if (dlocation.size() > 0) {
      const Matrix<T> du = nn::l2_normalize_backward(gc.location, gc.loc_norm, dlocation);
      const Matrix<T> dmean = nn::linear_backward(gc.loc_mean, p.loc_w, du, g.loc_w, g.loc_b);
      dF.rowwise() += dmean.row(0) / T(nq);
    }
    Matrix<T> dx = nn::layer_norm_backward(dF, p.out_ln_g, gc.out_ln, g.out_ln_g, g.out_ln_b);
    for (size_t l = p.layers.size(); l-- > 0;) {
      const auto& L = p.layers[l];
      auto& G = g.layers[l];
      const auto& lc = gc.layers[l];
      Matrix<T> dz = nn::linear_backward(lc.zd, L.w2, dx, G.w2, G.b2);
      if (lc.drop.size() > 0) dz = dz.cwiseProduct(lc.drop);
      nn::relu_backward_inplace(lc.z, dz);
      const Matrix<T> dh2 = nn::linear_backward(lc.h2, L.w1, dz, G.w1, G.b1);
      const Matrix<T> dx1 = dx + nn::layer_norm_backward(dh2, L.ln2_g, lc.ln2, G.ln2_g, G.ln2_b);
      const Matrix<T> da = nn::linear_backward(lc.a, L.wo, dx1, G.wo, G.bo);
      const Matrix<T> dq = nn::attention_backward(lc.q, c.K[l], c.Vv[l], cfg_.heads, lc.att, da, dK[l], dVv[l]);
      const Matrix<T> dh1 = nn::linear_backward(lc.h1, L.wq, dq, G.wq, G.bq);
      dx = dx1 + nn::layer_norm_backward(dh1, L.ln1_g, lc.ln1, G.ln1_g, G.ln1_b);
    }
  }

  Matrix<T> memory_backward(const ForwardCache<T>& c, const std::vector<Matrix<T>>& dK,
                            const std::vector<Matrix<T>>& dVv, ModelParams<T>& g) const {
    const auto& p = params_;
    Matrix<T> dm = Matrix<T>::Zero(c.mem.rows(), c.mem.cols());
    for (size_t l = 0; l < p.layers.size(); ++l) {
      dm += nn::linear_backward(c.mem_keys, p.layers[l].wk, dK[l], g.layers[l].wk, g.layers[l].bk);
      dm += nn::linear_backward(c.mem_keys, p.layers[l].wv, dVv[l], g.layers[l].wv, g.layers[l].bv);
    }
    if (cfg_.positional) g.mem_pos += dm;
    return nn::layer_norm_backward(dm, p.mem_ln_g, c.mem_ln, g.mem_ln_g, g.mem_ln_b);
  }

  // --- Whole sample ---------------------------------------------------------

  struct Options {
    bool pool = true;
    std::vector<int> diseases;  // query-set indices to ground; empty = none
    Rng* dropout_rng = nullptr;
  };

  void forward(const Matrix<T>& image, const std::vector<Matrix<T>>& query_sets, const Options& opt,
               ForwardCache<T>& c) const {
    encode_image(image, c);
    c.has_pool = false;
    if (opt.pool) attention_pool(c.V, c);
    c.has_memory = false;
    c.diseases = opt.diseases;
    c.ground.resize(opt.diseases.size());
    if (opt.diseases.empty()) return;
    prepare_memory(c.V, c);
    for (size_t i = 0; i < opt.diseases.size(); ++i)
      ground(query_sets.at(static_cast<size_t>(opt.diseases[i])), c, c.ground[i], opt.dropout_rng);
  }

  // Upstream gradients for one sample. Any entry may be empty (no signal);
  // dlogits/dlocation are aligned with cache.ground.
  struct Upstream {
    Matrix<T> df;
    std::vector<Matrix<T>> dlogits, dlocation;
  };

  void backward(const ForwardCache<T>& c, const Upstream& up, ModelParams<T>& g,
                Matrix<T>* dimage = nullptr) const {
    Matrix<T> dV = Matrix<T>::Zero(c.V.rows(), c.V.cols());
    if (c.has_pool && up.df.size() > 0) dV += attention_pool_backward(c, up.df, g);
    if (c.has_memory) {
      bool any = false;
      std::vector<Matrix<T>> dK, dVv;
      for (size_t l = 0; l < c.K.size(); ++l) {
        dK.push_back(Matrix<T>::Zero(c.K[l].rows(), c.K[l].cols()));
        dVv.push_back(Matrix<T>::Zero(c.Vv[l].rows(), c.Vv[l].cols()));
      }
      static const Matrix<T> none;
      for (size_t i = 0; i < c.ground.size(); ++i) {
        const auto& dl = i < up.dlogits.size() ? up.dlogits[i] : none;
        const auto& de = i < up.dlocation.size() ? up.dlocation[i] : none;
        if (dl.size() == 0 && de.size() == 0) continue;
        ground_backward(c, c.ground[i], dl, de, g, dK, dVv);
        any = true;
      }
      if (any) dV += memory_backward(c, dK, dVv, g);
    }
    encode_image_backward(c, dV, g, dimage);
  }

  // --- Convenience entry points ---------------------------------------------

  struct Output {
    Matrix<T> f;                         // 1×d
    Matrix<T> logits;                    // N×2
    std::vector<Matrix<T>> heatmaps;     // per disease
    std::vector<Matrix<T>> locations;    // per disease, 1×d
  };

  Output forward_all(const Matrix<T>& image, const std::vector<Matrix<T>>& query_sets) const {
    Options opt;
    for (size_t j = 0; j < query_sets.size(); ++j) opt.diseases.push_back(static_cast<int>(j));
    ForwardCache<T> c;
    forward(image, query_sets, opt, c);
    Output out;
    out.f = c.f;
    out.logits.resize(static_cast<Eigen::Index>(query_sets.size()), 2);
    for (size_t j = 0; j < c.ground.size(); ++j) {
      out.logits.row(static_cast<Eigen::Index>(j)) = c.ground[j].logits.row(0);
      out.heatmaps.push_back(c.ground[j].heatmap);
      out.locations.push_back(c.ground[j].location);
    }
    return out;
  }

  // Single query set against a raw feature map.
  GroundCache<T> ground(const Matrix<T>& Q, const Matrix<T>& V) const {
    if (V.cols() != cfg_.dim()) throw ShapeMismatch("feature map width does not match d");
    ForwardCache<T> c;
    prepare_memory(V, c);
    GroundCache<T> gc;
    ground(Q, c, gc);
    return gc;
  }

 private:
  ModelConfig cfg_;
  ModelParams<T> params_;
};

// --- Persistence ------------------------------------------------------------

template <typename T>
void put_params(Checkpoint& ck, const ModelParams<T>& p, const std::string& prefix) {
  p.visit([&](const std::string& name, const Matrix<T>& m) { ck.put(prefix + name, m); });
}

template <typename T>
void get_params(const Checkpoint& ck, ModelParams<T>& p, const std::string& prefix) {
  p.visit([&](const std::string& name, Matrix<T>& m) { ck.get_into(prefix + name, m); });
}

template <typename T>
void save_model(const Model<T>& model, const std::filesystem::path& path, nlohmann::json extra = {}) {
  Checkpoint ck;
  ck.meta = {{"kind", "model"}, {"model", model_config_json(model.config())}};
  if (!extra.is_null()) ck.meta["extra"] = std::move(extra);
  put_params(ck, model.params(), "param/");
  save_checkpoint(ck, path);
}

// Loads any checkpoint carrying model parameters (model or training state).
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ck) {
  if (!ck.meta.contains("model")) throw CorruptCheckpoint("checkpoint carries no model config");
  ModelConfig cfg;
  try {
    cfg = parse_model_config(ck.meta.at("model"));
  } catch (const ConfigError& e) {
    throw CorruptCheckpoint(std::string("checkpoint model config: ") + e.what());
  }
  auto params = init_params<T>(cfg);
  get_params(ck, params, "param/");
  return Model<T>(cfg, std::move(params));
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path) {
  return model_from_checkpoint<T>(load_checkpoint(path));
}

}  // namespace mavl
