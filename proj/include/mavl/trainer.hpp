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

// Training loop. Files written under TrainConfig::out_dir:
//
//   train_log.jsonl   one record per optimizer step:
//                     {"step", "epoch", "l_cl", "l_sup", "l_loc", "total", "lr"}
//   epochs.jsonl      one record per epoch: {"epoch", "valid_auc", "best"}
//   best.ckpt         model at the best validation macro-AUC
//   last.ckpt         full training state after the latest epoch
//
// Training config keys (JSON object, all optional):
//   epochs, batch_size, lr, schedule ("cosine" | "constant"), seed,
//   alpha, beta, gamma, tau, head_mode ("dual" | "contrastive" | "supervised"),
//   aspects (leading query positions kept, 0 = all), patience,
//   contrastive_healthy (bool), model (model config object),
//   out_dir, stop_after_epochs (neither enters the config hash)

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mavl/checkpoint.hpp"
#include "mavl/eval.hpp"
#include "mavl/losses.hpp"
#include "mavl/model.hpp"
#include "mavl/plot.hpp"
#include "mavl/synth.hpp"

namespace mavl {

enum class HeadMode { dual, contrastive, supervised };

inline std::string head_mode_name(HeadMode m) {
  switch (m) {
    case HeadMode::dual: return "dual";
    case HeadMode::contrastive: return "contrastive";
    case HeadMode::supervised: return "supervised";
  }
  return "dual";
}

inline HeadMode parse_head_mode(const std::string& s) {
  if (s == "dual") return HeadMode::dual;
  if (s == "contrastive") return HeadMode::contrastive;
  if (s == "supervised") return HeadMode::supervised;
  throw ConfigError("unknown head_mode \"" + s + "\" (dual, contrastive, supervised)");
}

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  std::string schedule = "cosine";
  uint64_t seed = 1;
  LossWeights weights;
  HeadMode head_mode = HeadMode::dual;
  int aspects = 0;
  int patience = 5;
  bool contrastive_healthy = true;
  ModelConfig model;
  std::string out_dir = "run";
  int stop_after_epochs = 0;  // > 0 halts after that many epochs, as an interruption would

  // Weights after the head mode has been applied.
  LossWeights effective_weights() const {
    LossWeights w = weights;
    if (head_mode == HeadMode::contrastive) w.beta = w.gamma = 0;
    if (head_mode == HeadMode::supervised) w.alpha = w.gamma = 0;
    return w;
  }

  void validate() const {
    if (epochs <= 0 || batch_size <= 0 || !(lr > 0)) throw ConfigError("epochs, batch_size and lr must be positive");
    if (schedule != "cosine" && schedule != "constant") throw ConfigError("schedule must be cosine or constant");
    if (aspects < 0) throw ConfigError("aspects must be >= 0");
    if (patience <= 0) throw ConfigError("patience must be positive");
    weights.validate();
    const auto w = effective_weights();
    if (w.alpha + w.beta + w.gamma <= 0) throw ConfigError("every loss weight is zero in this head mode");
    model.validate();
  }
};

// Keys that define the computation; paths and the interruption point are
// excluded so that a resumed run hashes like the original.
inline nlohmann::json train_config_json(const TrainConfig& c, bool with_paths = true) {
  nlohmann::json j = {{"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"lr", c.lr},
                      {"schedule", c.schedule},
                      {"seed", c.seed},
                      {"alpha", c.weights.alpha},
                      {"beta", c.weights.beta},
                      {"gamma", c.weights.gamma},
                      {"tau", c.weights.tau},
                      {"head_mode", head_mode_name(c.head_mode)},
                      {"aspects", c.aspects},
                      {"patience", c.patience},
                      {"contrastive_healthy", c.contrastive_healthy},
                      {"model", model_config_json(c.model)}};
  if (with_paths) {
    j["out_dir"] = c.out_dir;
    j["stop_after_epochs"] = c.stop_after_epochs;
  }
  return j;
}

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    try {
      if (k == "epochs") c.epochs = v.get<int>();
      else if (k == "batch_size") c.batch_size = v.get<int>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "schedule") c.schedule = v.get<std::string>();
      else if (k == "seed") c.seed = v.get<uint64_t>();
      else if (k == "alpha") c.weights.alpha = v.get<double>();
      else if (k == "beta") c.weights.beta = v.get<double>();
      else if (k == "gamma") c.weights.gamma = v.get<double>();
      else if (k == "tau") c.weights.tau = v.get<double>();
      else if (k == "head_mode") c.head_mode = parse_head_mode(v.get<std::string>());
      else if (k == "aspects") c.aspects = v.get<int>();
      else if (k == "patience") c.patience = v.get<int>();
      else if (k == "contrastive_healthy") c.contrastive_healthy = v.get<bool>();
      else if (k == "model") c.model = parse_model_config(v);
      else if (k == "out_dir") c.out_dir = v.get<std::string>();
      else if (k == "stop_after_epochs") c.stop_after_epochs = v.get<int>();
      else throw ConfigError("unknown train config key \"" + k + "\"");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("train config key \"" + k + "\": " + e.what());
    }
  }
  c.model.tau = c.weights.tau;
  c.validate();
  return c;
}

inline std::string config_hash(const TrainConfig& c) { return hex64(fnv1a(train_config_json(c, false).dump())); }

struct TrainResult {
  std::filesystem::path best, last, log;
  int epochs_run = 0;
  int best_epoch = -1;
  double best_metric = -1;
  bool stopped_early = false;
  bool interrupted = false;
  double seconds = 0;
};

struct AdamState {
  ModelParams<float> m, v;
  int64_t step = 0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Corpus& corpus) : cfg_(std::move(cfg)), corpus_(corpus) {
    cfg_.model.tau = cfg_.weights.tau;
    const int total = corpus_.kb.num_aspects() + 1;
    positions_ = leading_positions(cfg_.aspects, total);
    cfg_.model.queries = static_cast<int>(positions_.size());
    cfg_.model.init_seed = cfg_.seed;
    cfg_.validate();
    w_ = cfg_.effective_weights();
    bank_ = build_query_bank<float>(corpus_.kb, TextEmbedder(cfg_.model.dim(), cfg_.model.text_seed), positions_);
    for (const auto& name : corpus_.seen) {
      seen_q_.push_back(bank_.index(name));
      seen_kb_.push_back(*corpus_.kb.disease_index(name));
    }
    candidates_ = seen_q_;
    if (cfg_.contrastive_healthy && corpus_.kb.disease_index(kHealthyEntity))
      candidates_.push_back(bank_.index(kHealthyEntity));
    for (int q : candidates_) candidate_sets_.push_back(bank_.sets[static_cast<size_t>(q)]);
  }

  const TrainConfig& config() const { return cfg_; }
  const QueryBank<float>& bank() const { return bank_; }

  TrainResult train() {
    model_.emplace(cfg_.model);
    adam_.m = model_->params().zeros_like();
    adam_.v = model_->params().zeros_like();
    adam_.step = 0;
    rng_ = Rng(mix64(cfg_.seed ^ 0x7a11ULL));
    next_epoch_ = 0;
    best_metric_ = -1;
    best_epoch_ = -1;
    since_best_ = 0;
    finished_ = false;
    std::filesystem::create_directories(cfg_.out_dir);
    write_file_atomic(log_path(), "");
    write_file_atomic(epochs_path(), "");
    write_file_atomic(std::filesystem::path(cfg_.out_dir) / "train_config.json",
                      train_config_json(cfg_).dump(2) + "\n");
    return loop();
  }

  TrainResult resume(const std::filesystem::path& checkpoint) {
    const auto ck = load_checkpoint(checkpoint);
    if (ck.meta.value("kind", "") != "train_state") throw CorruptCheckpoint("not a training-state checkpoint");
    if (ck.meta.value("config_hash", "") != config_hash(cfg_))
      throw ConfigMismatch("checkpoint config hash " + ck.meta.value("config_hash", std::string("?")) +
                           " differs from " + config_hash(cfg_));
    model_.emplace(model_from_checkpoint<float>(ck));
    adam_.m = model_->params().zeros_like();
    adam_.v = model_->params().zeros_like();
    get_params(ck, adam_.m, "adam_m/");
    get_params(ck, adam_.v, "adam_v/");
    const auto& s = ck.meta.at("state");
    adam_.step = s.at("step").get<int64_t>();
    next_epoch_ = s.at("next_epoch").get<int>();
    best_metric_ = s.at("best_metric").get<double>();
    best_epoch_ = s.at("best_epoch").get<int>();
    since_best_ = s.at("since_best").get<int>();
    finished_ = s.at("finished").get<bool>();
    rng_.set_state(s.at("rng").get<uint64_t>());
    std::filesystem::create_directories(cfg_.out_dir);
    truncate_to(log_path(), s.at("log_bytes").get<uint64_t>());
    truncate_to(epochs_path(), s.at("epochs_bytes").get<uint64_t>());
    return loop();
  }

  // Full training state, as stored in last.ckpt.
  Checkpoint state_checkpoint() const {
    Checkpoint ck;
    ck.meta = {{"kind", "train_state"},
               {"model", model_config_json(model_->config())},
               {"train", train_config_json(cfg_, false)},
               {"config_hash", config_hash(cfg_)},
               {"state",
                {{"step", adam_.step},
                 {"next_epoch", next_epoch_},
                 {"best_metric", best_metric_},
                 {"best_epoch", best_epoch_},
                 {"since_best", since_best_},
                 {"finished", finished_},
                 {"rng", rng_.state()},
                 {"log_bytes", file_size_or_zero(log_path())},
                 {"epochs_bytes", file_size_or_zero(epochs_path())}}}};
    put_params(ck, model_->params(), "param/");
    put_params(ck, adam_.m, "adam_m/");
    put_params(ck, adam_.v, "adam_v/");
    return ck;
  }

  const Model<float>& model() const { return *model_; }

  // One optimizer step's losses for a batch, accumulating gradients.
  LossParts batch_gradient(const std::vector<const SyntheticSample*>& batch, ModelParams<float>& grads) {
    LossParts parts;
    const float scale = 1.0f / static_cast<float>(batch.size());
    const float tau = static_cast<float>(w_.tau);
    ForwardCache<float> c;
    for (const auto* s : batch) {
      typename Model<float>::Options opt;
      opt.pool = w_.alpha > 0;
      if (w_.beta > 0 || w_.gamma > 0) opt.diseases = seen_q_;
      opt.dropout_rng = &rng_;
      model_->forward(image_matrix<float>(s->image), bank_.sets, opt, c);
      typename Model<float>::Upstream up;
      if (opt.pool) {
        std::vector<int> pos;
        for (size_t i = 0; i < seen_kb_.size(); ++i)
          if (s->target.presence[static_cast<size_t>(seen_kb_[i])]) pos.push_back(static_cast<int>(i));
        if (!pos.empty()) {
          Matrix<float> df;
          parts.contrastive += contrastive_loss(c.f, candidate_sets_, pos, tau, &df);
          up.df = df * static_cast<float>(w_.alpha) * scale;
        }
      }
      if (!opt.diseases.empty()) {
        const size_t n = seen_kb_.size();
        Matrix<float> logits(static_cast<Eigen::Index>(n), 2);
        std::vector<uint8_t> labels(n);
        std::vector<Matrix<float>> preds(n);
        std::vector<int> targets(n);
        for (size_t i = 0; i < n; ++i) {
          const auto k = static_cast<size_t>(seen_kb_[i]);
          logits.row(static_cast<Eigen::Index>(i)) = c.ground[i].logits.row(0);
          labels[i] = s->target.presence[k];
          preds[i] = c.ground[i].location;
          targets[i] = s->target.presence[k] ? s->target.location_index[k] : -1;
        }
        Matrix<float> dlogits;
        std::vector<Matrix<float>> dpred;
        parts.supervised += supervised_loss(logits, labels, &dlogits);
        parts.location += location_loss(preds, targets, bank_.locations, tau, &dpred);
        up.dlogits.resize(n);
        up.dlocation.resize(n);
        for (size_t i = 0; i < n; ++i) {
          if (w_.beta > 0) up.dlogits[i] = dlogits.row(static_cast<Eigen::Index>(i)) * static_cast<float>(w_.beta) * scale;
          if (w_.gamma > 0 && targets[i] >= 0) up.dlocation[i] = dpred[i] * static_cast<float>(w_.gamma) * scale;
        }
      }
      model_->backward(c, up, grads);
    }
    parts.contrastive /= static_cast<double>(batch.size());
    parts.supervised /= static_cast<double>(batch.size());
    parts.location /= static_cast<double>(batch.size());
    return parts;
  }

  // Validation score driving checkpoint selection: macro AUC over seen
  // diseases from the supervised head, or the contrastive head when the
  // supervised head is not trained.
  double validation_metric() const {
    const Head h = w_.beta > 0 ? Head::supervised : Head::contrastive;
    EvalConfig ec;
    ec.grounding = false;
    const auto r = evaluate_split(*model_, bank_, corpus_.kb, corpus_.split("valid"), corpus_.seen, {h}, ec);
    return r[0].auc_diseases ? r[0].macro_auc : 0.0;
  }

 private:
  std::filesystem::path log_path() const { return std::filesystem::path(cfg_.out_dir) / "train_log.jsonl"; }
  std::filesystem::path epochs_path() const { return std::filesystem::path(cfg_.out_dir) / "epochs.jsonl"; }

  static uint64_t file_size_or_zero(const std::filesystem::path& p) {
    return std::filesystem::exists(p) ? static_cast<uint64_t>(std::filesystem::file_size(p)) : 0;
  }

  static void truncate_to(const std::filesystem::path& p, uint64_t n) {
    std::string s = std::filesystem::exists(p) ? read_file(p) : std::string();
    if (s.size() < n) throw CorruptCheckpoint("log " + p.string() + " is shorter than the checkpoint records");
    s.resize(n);
    write_file_atomic(p, s);
  }

  int64_t total_steps() const {
    const int64_t per_epoch =
        (static_cast<int64_t>(corpus_.split("train").samples.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
    return per_epoch * cfg_.epochs;
  }

  double learning_rate(int64_t step) const {
    if (cfg_.schedule == "constant") return cfg_.lr;
    const double t = static_cast<double>(step) / static_cast<double>(std::max<int64_t>(1, total_steps()));
    return cfg_.lr * 0.5 * (1.0 + std::cos(3.141592653589793 * std::min(1.0, t)));
  }

  void adam_update(const ModelParams<float>& grads, double lr) {
    ++adam_.step;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const float c1 = static_cast<float>(1.0 - std::pow(b1, static_cast<double>(adam_.step)));
    const float c2 = static_cast<float>(1.0 - std::pow(b2, static_cast<double>(adam_.step)));
    std::vector<Matrix<float>*> P, M, V;
    std::vector<const Matrix<float>*> G;
    model_->params().visit([&](const std::string&, Matrix<float>& x) { P.push_back(&x); });
    adam_.m.visit([&](const std::string&, Matrix<float>& x) { M.push_back(&x); });
    adam_.v.visit([&](const std::string&, Matrix<float>& x) { V.push_back(&x); });
    grads.visit([&](const std::string&, const Matrix<float>& x) { G.push_back(&x); });
    const float lrf = static_cast<float>(lr);
    for (size_t i = 0; i < P.size(); ++i) {
      auto& m = *M[i];
      auto& v = *V[i];
      const auto& g = *G[i];
      m = 0.9f * m + 0.1f * g;
      v = 0.999f * v + 0.001f * g.cwiseProduct(g);
      P[i]->array() -= lrf * (m.array() / c1) / ((v.array() / c2).sqrt() + static_cast<float>(eps));
    }
  }

  TrainResult loop() {
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res;
    res.log = log_path();
    res.best = std::filesystem::path(cfg_.out_dir) / "best.ckpt";
    res.last = std::filesystem::path(cfg_.out_dir) / "last.ckpt";
    const auto& train = corpus_.split("train").samples;
    std::ofstream log(log_path(), std::ios::app | std::ios::binary);
    std::ofstream epochs(epochs_path(), std::ios::app | std::ios::binary);
    int ran = 0;
    while (!finished_ && next_epoch_ < cfg_.epochs) {
      const int epoch = next_epoch_;
      std::vector<size_t> order(train.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng_.shuffle(order.begin(), order.end());
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg_.batch_size)) {
        std::vector<const SyntheticSample*> batch;
        for (size_t i = start; i < std::min(order.size(), start + static_cast<size_t>(cfg_.batch_size)); ++i)
          batch.push_back(&train[order[i]]);
        auto grads = model_->params().zeros_like();
        const auto parts = batch_gradient(batch, grads);
        const double total = total_loss(w_, parts);
        const double lr = learning_rate(adam_.step);
        nlohmann::json rec = {{"step", adam_.step},     {"epoch", epoch},  {"l_cl", parts.contrastive},
                              {"l_sup", parts.supervised}, {"l_loc", parts.location}, {"total", total},
                              {"lr", lr}};
        log << rec.dump() << "\n";
        if (!std::isfinite(total)) {
          log.flush();
          throw NaNLoss("non-finite loss at step " + std::to_string(adam_.step));
        }
        adam_update(grads, lr);
      }
      log.flush();
      const double metric = validation_metric();
      const bool improved = metric > best_metric_;
      if (improved) {
        best_metric_ = metric;
        best_epoch_ = epoch;
        since_best_ = 0;
        save_model(*model_, res.best,
                   {{"epoch", epoch}, {"valid_auc", metric}, {"config_hash", config_hash(cfg_)}});
      } else {
        ++since_best_;
      }
      epochs << nlohmann::json{{"epoch", epoch}, {"valid_auc", metric}, {"best", improved}}.dump() << "\n";
      epochs.flush();
      next_epoch_ = epoch + 1;
      if (since_best_ >= cfg_.patience) {
        finished_ = true;
        res.stopped_early = true;
      }
      if (next_epoch_ >= cfg_.epochs) finished_ = true;
      save_checkpoint(state_checkpoint(), res.last);
      ++ran;
      if (cfg_.stop_after_epochs > 0 && next_epoch_ >= cfg_.stop_after_epochs && !finished_) {
        res.interrupted = true;
        break;
      }
    }
    res.epochs_run = next_epoch_;
    res.best_epoch = best_epoch_;
    res.best_metric = best_metric_;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    (void)ran;
    return res;
  }

  TrainConfig cfg_;
  const Corpus& corpus_;
  std::vector<int> positions_;
  LossWeights w_;
  QueryBank<float> bank_;
  std::vector<int> seen_q_, seen_kb_, candidates_;
  std::vector<Matrix<float>> candidate_sets_;
  std::optional<Model<float>> model_;
  AdamState adam_;
  Rng rng_;
  int next_epoch_ = 0;
  double best_metric_ = -1;
  int best_epoch_ = -1;
  int since_best_ = 0;
  bool finished_ = false;
};

inline TrainResult train(const TrainConfig& cfg, const Corpus& corpus) { return Trainer(cfg, corpus).train(); }

inline TrainResult resume(const TrainConfig& cfg, const Corpus& corpus, const std::filesystem::path& checkpoint) {
  return Trainer(cfg, corpus).resume(checkpoint);
}

// --- Ablations ----------------------------------------------------------------

struct AblationVariant {
  std::string label;
  nlohmann::json delta;  // merged over the base train config
};

struct AblationRow {
  std::string label;
  int aspects = 0;  // query positions used
  std::vector<uint64_t> seeds;
  // Means over seeds; per-seed values alongside.
  double seen_sup = 0, seen_con = 0, unseen_sup = 0, unseen_con = 0, seen_f1 = 0;
  std::vector<double> seen_sup_runs, seen_con_runs, unseen_sup_runs, unseen_con_runs;
};

inline std::vector<AblationVariant> head_grid() {
  return {{"dual", {{"head_mode", "dual"}}},
          {"single-con", {{"head_mode", "contrastive"}}},
          {"single-sup", {{"head_mode", "supervised"}}}};
}

inline std::vector<AblationVariant> aspect_grid(const std::vector<int>& counts) {
  std::vector<AblationVariant> v;
  for (int n : counts) v.push_back({"aspects-" + std::to_string(n), {{"aspects", n}}});
  return v;
}

struct RunSummary {
  std::string hash;
  int aspects = 0;
  double seen_sup = 0, seen_con = 0, unseen_sup = 0, unseen_con = 0, seen_f1 = 0;
};

// Trains (or reuses a finished run under runs_dir/<hash>, keyed by the
// config hash and the corpus content) and evaluates the best checkpoint.
inline RunSummary train_and_evaluate(TrainConfig cfg, const Corpus& corpus, const std::filesystem::path& runs_dir) {
  Trainer probe(cfg, corpus);
  const auto hash = hex64(fnv1a(config_hash(probe.config()), corpus_fingerprint(corpus)));
  cfg.out_dir = (runs_dir / hash).string();
  cfg.stop_after_epochs = 0;
  Trainer trainer(cfg, corpus);
  const auto summary_path = runs_dir / hash / "summary.json";
  if (std::filesystem::exists(summary_path)) {
    const auto j = nlohmann::json::parse(read_file(summary_path));
    RunSummary s;
    s.hash = hash;
    s.aspects = j.at("aspects");
    s.seen_sup = j.at("seen_sup");
    s.seen_con = j.at("seen_con");
    s.unseen_sup = j.at("unseen_sup");
    s.unseen_con = j.at("unseen_con");
    s.seen_f1 = j.at("seen_f1");
    return s;
  }
  const auto res = trainer.train();
  const auto model = load_model<float>(res.best);
  const auto& bank = trainer.bank();
  EvalConfig ec;
  ec.grounding = false;
  const std::vector<Head> both = {Head::contrastive, Head::supervised};
  const auto seen = evaluate_split(model, bank, corpus.kb, corpus.split("test-seen"), corpus.seen, both, ec);
  const auto unseen = evaluate_split(model, bank, corpus.kb, corpus.split("test-unseen"), corpus.holdout, both, ec);
  RunSummary s;
  s.hash = hash;
  s.aspects = static_cast<int>(bank.positions.size());
  s.seen_con = seen[0].macro_auc;
  s.seen_sup = seen[1].macro_auc;
  s.seen_f1 = seen[1].macro_f1;
  s.unseen_con = unseen[0].macro_auc;
  s.unseen_sup = unseen[1].macro_auc;
  write_file_atomic(summary_path, nlohmann::json{{"aspects", s.aspects},
                                                 {"seen_sup", s.seen_sup},
                                                 {"seen_con", s.seen_con},
                                                 {"unseen_sup", s.unseen_sup},
                                                 {"unseen_con", s.unseen_con},
                                                 {"seen_f1", s.seen_f1},
                                                 {"epochs_run", res.epochs_run},
                                                 {"best_epoch", res.best_epoch},
                                                 {"seconds", res.seconds}}
                                      .dump(2) + "\n");
  return s;
}

inline nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& delta) {
  base.merge_patch(delta);
  return base;
}

inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const Corpus& corpus,
                                             const std::vector<AblationVariant>& variants,
                                             const std::vector<uint64_t>& seeds, const std::filesystem::path& out_dir) {
  std::vector<AblationRow> rows;
  const auto base_json = train_config_json(base);
  for (const auto& v : variants) {
    AblationRow row;
    row.label = v.label;
    for (uint64_t seed : seeds) {
      auto j = merge_config(base_json, v.delta);
      j["seed"] = seed;
      const auto cfg = parse_train_config(j);
      const auto s = train_and_evaluate(cfg, corpus, out_dir / "runs");
      row.aspects = s.aspects;
      row.seeds.push_back(seed);
      row.seen_sup_runs.push_back(s.seen_sup);
      row.seen_con_runs.push_back(s.seen_con);
      row.unseen_sup_runs.push_back(s.unseen_sup);
      row.unseen_con_runs.push_back(s.unseen_con);
      row.seen_f1 += s.seen_f1 / static_cast<double>(seeds.size());
    }
    auto mean = [](const std::vector<double>& x) {
      double s = 0;
      for (double v : x) s += v;
      return x.empty() ? 0.0 : s / static_cast<double>(x.size());
    };
    row.seen_sup = mean(row.seen_sup_runs);
    row.seen_con = mean(row.seen_con_runs);
    row.unseen_sup = mean(row.unseen_sup_runs);
    row.unseen_con = mean(row.unseen_con_runs);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string ablation_tsv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant\taspects\tseeds\tseen_auc_sup\tseen_auc_con\tunseen_auc_sup\tunseen_auc_con\tseen_f1_sup\n";
  for (const auto& r : rows) {
    os << r.label << "\t" << r.aspects << "\t" << r.seeds.size() << "\t" << r.seen_sup << "\t" << r.seen_con << "\t"
       << r.unseen_sup << "\t" << r.unseen_con << "\t" << r.seen_f1 << "\n";
  }
  return os.str();
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-14s %7s %9s %9s %9s %9s\n", "variant", "aspects", "seen-sup", "seen-con",
                "unseen-sup", "unseen-con");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %7d %9.4f %9.4f %9.4f %9.4f\n", r.label.c_str(), r.aspects, r.seen_sup,
                  r.seen_con, r.unseen_sup, r.unseen_con);
    os << line;
  }
  return os.str();
}

inline nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"variant", r.label},
                   {"aspects", r.aspects},
                   {"seeds", r.seeds},
                   {"seen_auc_sup", r.seen_sup},
                   {"seen_auc_con", r.seen_con},
                   {"unseen_auc_sup", r.unseen_sup},
                   {"unseen_auc_con", r.unseen_con},
                   {"seen_f1_sup", r.seen_f1},
                   {"runs",
                    {{"seen_auc_sup", r.seen_sup_runs},
                     {"seen_auc_con", r.seen_con_runs},
                     {"unseen_auc_sup", r.unseen_sup_runs},
                     {"unseen_auc_con", r.unseen_con_runs}}}});
  return out;
}

struct DirectionCheck {
  std::string claim;
  bool pass = false;
  std::string detail;
};

inline const AblationRow& find_row(const std::vector<AblationRow>& rows, const std::string& label) {
  for (const auto& r : rows)
    if (r.label == label) return r;
  throw UnknownEntity("ablation has no variant \"" + label + "\"");
}

// Dual- against single-head claims over seed means; rows from head_grid().
inline std::vector<DirectionCheck> head_directions(const std::vector<AblationRow>& rows) {
  const auto& dual = find_row(rows, "dual");
  const auto& con = find_row(rows, "single-con");
  const auto& sup = find_row(rows, "single-sup");
  auto fmt = [](double a, double b) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.4f vs %.4f", a, b);
    return std::string(buf);
  };
  return {{"dual-sup seen AUC >= single-sup seen AUC - 0.01", dual.seen_sup >= sup.seen_sup - 0.01,
           fmt(dual.seen_sup, sup.seen_sup)},
          {"dual-con unseen AUC >= single-con unseen AUC - 0.01", dual.unseen_con >= con.unseen_con - 0.01,
           fmt(dual.unseen_con, con.unseen_con)},
          {"dual-con unseen AUC > single-sup unseen AUC", dual.unseen_con > sup.unseen_sup,
           fmt(dual.unseen_con, sup.unseen_sup)}};
}

// Spearman correlation of contrastive unseen AUC (seed mean) with the
// number of query aspects.
inline DirectionCheck aspect_direction(const std::vector<AblationRow>& rows) {
  std::vector<double> x, y;
  for (const auto& r : rows) {
    x.push_back(r.aspects);
    y.push_back(r.unseen_con);
  }
  const double rho = spearman(x, y);
  char buf[64];
  std::snprintf(buf, sizeof buf, "spearman %.4f over %zu counts", rho, rows.size());
  return {"unseen contrastive AUC rises with aspect count", rho > 0, buf};
}

inline std::string directions_text(const std::vector<DirectionCheck>& checks) {
  std::string out;
  for (const auto& c : checks) out += std::string(c.pass ? "PASS " : "FAIL ") + c.claim + " (" + c.detail + ")\n";
  return out;
}

// AUC against aspect count, one point per row.
inline std::string aspect_plot_svg(const std::vector<AblationRow>& rows) {
  PlotSeries con{"unseen, contrastive", {}, {}}, sup{"unseen, supervised", {}, {}}, seen{"seen, supervised", {}, {}};
  for (const auto& r : rows) {
    con.x.push_back(r.aspects);
    con.y.push_back(r.unseen_con);
    sup.x.push_back(r.aspects);
    sup.y.push_back(r.unseen_sup);
    seen.x.push_back(r.aspects);
    seen.y.push_back(r.seen_sup);
  }
  return line_plot_svg("Macro AUC against number of query aspects", "query aspects (definition first)", "macro AUC",
                       {con, sup, seen});
}

inline std::string aspect_plot_tsv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "aspects\tunseen_auc_con\tunseen_auc_sup\tseen_auc_sup\n";
  for (const auto& r : rows) os << r.aspects << "\t" << r.unseen_con << "\t" << r.unseen_sup << "\t" << r.seen_sup << "\n";
  return os.str();
}

}  // namespace mavl
