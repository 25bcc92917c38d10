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

// mavl: knowledge base, corpus, training, evaluation, grounding and
// ablation commands.
//
//   mavl [--config FILE] [--seed N] [--out DIR] <command> ...
//
// The config file is a JSON object with optional sections "generator",
// "train" and "eval". Flags override config values.

#include <chrono>
#include <ctime>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mavl/llm_client.hpp"
#include "mavl/trainer.hpp"

namespace {

using namespace mavl;
namespace fs = std::filesystem;

constexpr const char* kToolVersion = "0.1.0";

struct Globals {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out = ".";
};

class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  void config(const fs::path& p) {
    configs_.push_back({{"path", p.string()}, {"hash", hex64(fnv1a(read_file(p)))}});
  }
  void output(const fs::path& p) { outputs_.push_back(p); }
  void seed(uint64_t s) { seed_ = s; }

  void write(const fs::path& dir) const {
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& p : outputs_) {
      if (!fs::exists(p)) throw IoError("declared output " + p.string() + " was not written");
      outs.push_back(p.string());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    char stamp[32];
    const std::time_t now = std::time(nullptr);
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    nlohmann::json j = {{"command", command_},
                        {"configs", configs_},
                        {"seed", seed_ ? nlohmann::json(*seed_) : nlohmann::json(nullptr)},
                        {"tool_version", kToolVersion},
                        {"outputs", outs},
                        {"duration_seconds", secs},
                        {"finished_at", stamp}};
    fs::create_directories(dir);
    write_file_atomic(dir / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  nlohmann::json configs_ = nlohmann::json::array();
  std::vector<fs::path> outputs_;
  std::optional<uint64_t> seed_;
};

nlohmann::json load_config(const Globals& g, Manifest& m) {
  if (g.config.empty()) return nlohmann::json::object();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(g.config));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(g.config + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(g.config + ": config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "generator" && it.key() != "train" && it.key() != "eval")
      throw ConfigError(g.config + ": unknown section \"" + it.key() + "\" (generator, train, eval)");
  m.config(g.config);
  return j;
}

nlohmann::json section(const nlohmann::json& cfg, const char* name) {
  return cfg.contains(name) ? cfg.at(name) : nlohmann::json::object();
}

KnowledgeBase kb_from(const std::string& path) {
  if (path.empty() || path == "kb.synthetic") return synthetic_kb();
  return load_kb(path);
}

// Loads a saved corpus, or renders one in memory from the generator section.
Corpus corpus_from(const std::string& dir, const nlohmann::json& cfg) {
  if (!dir.empty()) return load_corpus(dir);
  const auto g = parse_generator_config(section(cfg, "generator"));
  return make_split(g, kb_from(g.kb_path));
}

QueryBank<float> bank_for(const Model<float>& model, const KnowledgeBase& kb) {
  const auto& c = model.config();
  return build_query_bank<float>(kb, TextEmbedder(c.dim(), c.text_seed),
                                 leading_positions(c.queries, kb.num_aspects() + 1));
}

EvalConfig eval_config(const nlohmann::json& cfg) {
  EvalConfig ec;
  const auto e = section(cfg, "eval");
  for (auto it = e.begin(); it != e.end(); ++it) {
    if (it.key() == "threshold") ec.threshold = it.value().get<double>();
    else if (it.key() == "grounding_threshold") ec.grounding_threshold = it.value().get<double>();
    else if (it.key() == "aggregation") ec.aggregation = it.value().get<std::string>();
    else throw ConfigError("unknown eval config key \"" + it.key() + "\"");
  }
  return ec;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& p : split(s, ','))
    if (!trim(p).empty()) out.push_back(trim(p));
  return out;
}

std::vector<std::string> read_descriptions(const fs::path& p) {
  std::vector<std::string> out;
  for (const auto& line : split(read_file(p), '\n'))
    if (!trim(line).empty()) out.push_back(trim(line));
  return out;
}

std::string pgm_of(const Grid<double>& g) {
  Grid<float> f(g.height, g.width);
  for (size_t i = 0; i < g.data.size(); ++i) f.data[i] = static_cast<float>(g.data[i]);
  return encode_pgm(f);
}

std::string pgm_of(const Grid<uint8_t>& g) {
  Grid<float> f(g.height, g.width);
  for (size_t i = 0; i < g.data.size(); ++i) f.data[i] = g.data[i] ? 1.0f : 0.0f;
  return encode_pgm(f);
}

// --- kb -------------------------------------------------------------------------

int kb_validate(const std::string& path) {
  const auto kb = load_kb(path);
  validate_kb(kb);
  std::cout << "ok " << path << ": " << kb.num_diseases() << " diseases, " << kb.num_aspects() << " aspects, "
            << kb.locations.size() << " locations\n";
  return 0;
}

int kb_describe(const std::string& path, const std::string& disease) {
  const auto kb = load_kb(path);
  for (const auto& d : kb.diseases) {
    if (!disease.empty() && d.name != disease) continue;
    std::cout << d.name << (d.seen ? "" : " (novel)") << "\n  definition: " << d.description << "\n";
    for (int k = 0; k < kb.num_aspects(); ++k)
      std::cout << "  " << kb.aspect_names[static_cast<size_t>(k)] << ": " << d.aspects[static_cast<size_t>(k)]
                << "\n";
  }
  if (!disease.empty()) (void)kb.at(disease);
  return 0;
}

struct AddNovelArgs {
  std::string entity, kb, from_file, prompt, output;
  bool fetch = false;
};

int kb_add_novel(const Globals& g, const AddNovelArgs& a) {
  Manifest m("kb add-novel");
  const auto kb = load_kb(a.kb);
  m.config(a.kb);
  std::vector<std::string> descs;
  if (!a.from_file.empty()) {
    descs = read_descriptions(a.from_file);
    m.config(a.from_file);
  } else if (a.fetch) {
    auto cfg = LlmClientConfig::from_env();
    if (!a.prompt.empty()) {
      cfg.prompt_template = trim(read_file(a.prompt));
      m.config(a.prompt);
    }
    std::vector<std::string> asked = {"definition"};
    asked.insert(asked.end(), kb.aspect_names.begin(), kb.aspect_names.end());
    const auto got = fetch_descriptions(a.entity, asked, cfg);
    for (const auto& name : asked) descs.push_back(got.at(name));
  } else {
    throw ConfigError("add-novel needs --from-file or --fetch");
  }
  const auto out_kb = register_novel(kb, a.entity, descs);
  const fs::path out = a.output.empty() ? fs::path(g.out) / "kb.json" : fs::path(a.output);
  if (fs::exists(out) && fs::equivalent(out, a.kb)) throw ConfigError("refusing to overwrite the input KB " + a.kb);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_kb(out_kb, out);
  m.output(out);
  m.write(g.out);
  std::cout << "added " << a.entity << " -> " << out.string() << " (" << out_kb.num_diseases() << " diseases)\n";
  return 0;
}

int kb_synthetic(const Globals& g) {
  Manifest m("kb synthetic");
  const fs::path out = fs::path(g.out) / "kb.json";
  fs::create_directories(g.out);
  save_kb(synthetic_kb(), out);
  m.output(out);
  m.write(g.out);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

// --- synth ----------------------------------------------------------------------

int cmd_synth(const Globals& g, const std::string& holdout) {
  Manifest m("synth");
  const auto cfg = load_config(g, m);
  auto gen = parse_generator_config(section(cfg, "generator"));
  if (g.seed) gen.seed = *g.seed;
  if (!holdout.empty()) gen.holdout = split_list(holdout);
  m.seed(gen.seed);
  const auto corpus = make_split(gen, kb_from(gen.kb_path));
  save_corpus(corpus, g.out);
  write_file_atomic(fs::path(g.out) / "generator_config.json", generator_config_json(gen).dump(2) + "\n");
  m.output(fs::path(g.out) / "manifest.json");
  m.output(fs::path(g.out) / "generator_config.json");
  for (const auto& [name, split] : corpus.splits) {
    m.output(fs::path(g.out) / name / "index.jsonl");
    std::cout << name << ": " << split.samples.size() << " samples\n";
  }
  m.write(g.out);
  return 0;
}

// --- train ----------------------------------------------------------------------

TrainConfig train_config(const Globals& g, const nlohmann::json& cfg) {
  auto j = section(cfg, "train");
  if (g.seed) j["seed"] = *g.seed;
  j["out_dir"] = g.out;
  return parse_train_config(j);
}

int cmd_train(const Globals& g, const std::string& corpus_dir, bool resume_run) {
  Manifest m("train");
  const auto cfg = load_config(g, m);
  const auto tc = train_config(g, cfg);
  m.seed(tc.seed);
  const auto corpus = corpus_from(corpus_dir, cfg);
  Trainer trainer(tc, corpus);
  const auto res = resume_run ? trainer.resume(fs::path(g.out) / "last.ckpt") : trainer.train();
  for (const auto& p : {res.best, res.last, res.log}) m.output(p);
  m.output(fs::path(g.out) / "epochs.jsonl");
  m.write(g.out);
  std::printf("trained %d epochs (best %d, valid AUC %.4f)%s in %.1f s\n", res.epochs_run, res.best_epoch,
              res.best_metric, res.interrupted ? ", interrupted" : (res.stopped_early ? ", stopped early" : ""),
              res.seconds);
  return 0;
}

// --- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string corpus, checkpoint, head = "both", split = "test-seen", diseases;
  std::optional<double> grounding_threshold;
};

std::vector<std::string> default_diseases(const Corpus& c, const std::string& split) {
  return split == "test-unseen" ? c.holdout : c.seen;
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  Manifest m("eval");
  const auto cfg = load_config(g, m);
  auto ec = eval_config(cfg);
  const auto corpus = corpus_from(a.corpus, cfg);
  const auto model = load_model<float>(a.checkpoint);
  m.config(a.checkpoint);
  const auto bank = bank_for(model, corpus.kb);
  const auto diseases = a.diseases.empty() ? default_diseases(corpus, a.split) : split_list(a.diseases);
  if (a.grounding_threshold) ec.grounding_threshold = *a.grounding_threshold;
  else if (corpus.splits.count("valid"))
    ec.grounding_threshold = select_grounding_threshold(model, bank, corpus.kb, corpus.split("valid"), corpus.seen);
  const auto reports = evaluate_split(model, bank, corpus.kb, corpus.split(a.split), diseases, parse_heads(a.head), ec);
  nlohmann::json j = {{"checkpoint", a.checkpoint}, {"reports", nlohmann::json::array()}};
  for (const auto& r : reports) {
    j["reports"].push_back(r.to_json());
    std::cout << r.table() << "\n";
  }
  fs::create_directories(g.out);
  const fs::path out = fs::path(g.out) / ("report." + a.split + ".json");
  write_file_atomic(out, j.dump(2) + "\n");
  m.output(out);
  m.write(g.out);
  return 0;
}

// --- ground ---------------------------------------------------------------------

struct GroundArgs {
  std::string corpus, checkpoint, disease, split = "test-seen", sample;
  int limit = 8;
  std::optional<double> threshold;
};

int cmd_ground(const Globals& g, const GroundArgs& a) {
  Manifest m("ground");
  const auto cfg = load_config(g, m);
  auto ec = eval_config(cfg);
  const auto corpus = corpus_from(a.corpus, cfg);
  const auto model = load_model<float>(a.checkpoint);
  m.config(a.checkpoint);
  const auto bank = bank_for(model, corpus.kb);
  const auto found_index = corpus.kb.disease_index(a.disease);
  if (!found_index) throw UnknownEntity("no disease \"" + a.disease + "\" in the corpus KB");
  const int j = *found_index;
  if (a.threshold) ec.grounding_threshold = *a.threshold;
  else if (corpus.splits.count("valid"))
    ec.grounding_threshold = select_grounding_threshold(model, bank, corpus.kb, corpus.split("valid"), corpus.seen);

  const auto& split = corpus.split(a.split);
  const fs::path dir = fs::path(g.out) / "heatmaps";
  fs::create_directories(dir);
  std::string tsv = "sample\tdisease\tprobability\tiou\tdice\targmax_hit\n";
  int written = 0;
  bool found = a.sample.empty();
  for (const auto& s : split.samples) {
    if (!a.sample.empty() && s.id != a.sample) continue;
    const auto mask = s.masks.find(j);
    if (a.sample.empty() && mask == s.masks.end()) continue;
    if (a.sample.empty() && written >= a.limit) break;
    found = true;
    const auto p = predict(model, bank, s.image, a.disease, Head::supervised);
    const std::string stem = s.id + "." + a.disease;
    write_file_atomic(dir / (stem + ".heatmap.pgm"), pgm_of(p.heatmap));
    write_file_atomic(dir / (stem + ".image.pgm"), encode_pgm(s.image));
    m.output(dir / (stem + ".heatmap.pgm"));
    m.output(dir / (stem + ".image.pgm"));
    char line[256];
    if (mask != s.masks.end()) {
      write_file_atomic(dir / (stem + ".mask.pgm"), pgm_of(mask->second));
      m.output(dir / (stem + ".mask.pgm"));
      const auto gm = grounding_metrics(p.heatmap, mask->second, ec.grounding_threshold);
      const int hit = mask->second.data[p.peak] ? 1 : 0;
      std::snprintf(line, sizeof line, "%s %s p=%.4f IoU=%.4f Dice=%.4f hit=%d\n", s.id.c_str(), a.disease.c_str(),
                    p.probability, gm.iou, gm.dice, hit);
      tsv += s.id + "\t" + a.disease + "\t" + std::to_string(p.probability) + "\t" + std::to_string(gm.iou) + "\t" +
             std::to_string(gm.dice) + "\t" + std::to_string(hit) + "\n";
    } else {
      std::snprintf(line, sizeof line, "%s %s p=%.4f no mask (finding absent)\n", s.id.c_str(), a.disease.c_str(),
                    p.probability);
      tsv += s.id + "\t" + a.disease + "\t" + std::to_string(p.probability) + "\t\t\t\n";
    }
    std::cout << line;
    ++written;
  }
  if (!found) throw UnknownEntity("no sample \"" + a.sample + "\" in split " + a.split);
  const auto report = evaluate_split(model, bank, corpus.kb, split, {a.disease}, {Head::supervised}, ec)[0];
  std::printf("%s over %s: IoU=%.4f Dice=%.4f hit=%.4f (threshold %.2f, %d positives with masks)\n",
              a.disease.c_str(), a.split.c_str(), report.macro_iou, report.macro_dice, report.macro_argmax_hit,
              ec.grounding_threshold, report.diseases[0].grounded);
  write_file_atomic(fs::path(g.out) / "grounding.tsv", tsv);
  write_file_atomic(fs::path(g.out) / "grounding_report.json", report.to_json().dump(2) + "\n");
  m.output(fs::path(g.out) / "grounding.tsv");
  m.output(fs::path(g.out) / "grounding_report.json");
  m.write(g.out);
  return 0;
}

// --- ablate ---------------------------------------------------------------------

struct AblateArgs {
  std::string corpus, grid, seeds = "1,2,3", counts = "1,3,5,0";
};

int cmd_ablate(const Globals& g, const AblateArgs& a) {
  Manifest m("ablate");
  const auto cfg = load_config(g, m);
  const auto base = train_config(g, cfg);
  const auto corpus = corpus_from(a.corpus, cfg);
  std::vector<uint64_t> seeds;
  for (const auto& s : split_list(a.seeds)) seeds.push_back(std::stoull(s));
  if (g.seed) seeds = {*g.seed};
  std::vector<AblationVariant> variants;
  if (a.grid == "heads") {
    variants = head_grid();
  } else {
    std::vector<int> counts;
    for (const auto& c : split_list(a.counts)) counts.push_back(std::stoi(c));
    variants = aspect_grid(counts);
  }
  const auto rows = run_ablation(base, corpus, variants, seeds, g.out);
  const fs::path out(g.out);
  write_file_atomic(out / ("ablation_" + a.grid + ".tsv"), ablation_tsv(rows));
  write_file_atomic(out / ("ablation_" + a.grid + ".json"), ablation_json(rows).dump(2) + "\n");
  m.output(out / ("ablation_" + a.grid + ".tsv"));
  m.output(out / ("ablation_" + a.grid + ".json"));
  std::cout << ablation_table(rows);
  std::vector<DirectionCheck> checks;
  if (a.grid == "heads") {
    checks = head_directions(rows);
  } else {
    write_file_atomic(out / "aspect_auc.svg", aspect_plot_svg(rows));
    write_file_atomic(out / "aspect_auc.tsv", aspect_plot_tsv(rows));
    m.output(out / "aspect_auc.svg");
    m.output(out / "aspect_auc.tsv");
    checks = {aspect_direction(rows)};
  }
  const auto text = directions_text(checks);
  std::cout << text;
  write_file_atomic(out / ("directions_" + a.grid + ".txt"), text);
  m.output(out / ("directions_" + a.grid + ".txt"));
  m.write(g.out);
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-aspect vision-language pretraining on a synthetic corpus"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config with generator/train/eval sections");
  app.add_option("--seed", g.seed, "Overrides the generator seed (synth) or training seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.set_version_flag("--version", kToolVersion);

  std::function<int()> run;

  auto* kb = app.add_subcommand("kb", "Knowledge base tools");
  kb->require_subcommand(1);
  std::string kb_path, disease;
  auto* kv = kb->add_subcommand("validate", "Check a KB file");
  kv->add_option("path", kb_path)->required();
  kv->callback([&] { run = [&] { return kb_validate(kb_path); }; });
  auto* kd = kb->add_subcommand("describe", "Print the query texts of a KB");
  kd->add_option("path", kb_path)->required();
  kd->add_option("disease", disease);
  kd->callback([&] { run = [&] { return kb_describe(kb_path, disease); }; });
  AddNovelArgs novel;
  auto* ka = kb->add_subcommand("add-novel", "Write a copy of a KB with a novel disease appended");
  ka->add_option("entity", novel.entity)->required();
  ka->add_option("--kb", novel.kb, "Input KB")->default_val("fixtures/kb.sample");
  auto* from = ka->add_option("--from-file", novel.from_file, "Definition then one line per aspect");
  ka->add_flag("--fetch", novel.fetch, "Fetch descriptions from MAVL_LLM_URL")->excludes(from);
  ka->add_option("--prompt", novel.prompt, "Prompt template file ({entity}, {aspect})");
  ka->add_option("-o,--output", novel.output, "Output KB path (default <out>/kb.json)");
  ka->callback([&] { run = [&] { return kb_add_novel(g, novel); }; });
  auto* ks = kb->add_subcommand("synthetic", "Write the built-in synthetic KB to <out>/kb.json");
  ks->callback([&] { run = [&] { return kb_synthetic(g); }; });

  std::string holdout;
  auto* sy = app.add_subcommand("synth", "Render a synthetic corpus into <out>");
  sy->add_option("--holdout", holdout, "Comma-separated holdout diseases");
  sy->callback([&] { run = [&] { return cmd_synth(g, holdout); }; });

  std::string corpus_dir;
  bool resume_run = false;
  auto* tr = app.add_subcommand("train", "Train into <out>");
  tr->add_option("--corpus", corpus_dir, "Saved corpus directory (default: render from config)");
  tr->add_flag("--resume", resume_run, "Continue from <out>/last.ckpt");
  tr->callback([&] { run = [&] { return cmd_train(g, corpus_dir, resume_run); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  e->add_option("--corpus", ev.corpus, "Saved corpus directory");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--head", ev.head)->check(CLI::IsMember({"contrastive", "supervised", "both"}))->capture_default_str();
  e->add_option("--split", ev.split)->check(CLI::IsMember(split_names()))->capture_default_str();
  e->add_option("--diseases", ev.diseases, "Comma-separated (default: seen, or holdout on test-unseen)");
  e->add_option("--grounding-threshold", ev.grounding_threshold, "Default: selected on valid");
  e->callback([&] { run = [&] { return cmd_eval(g, ev); }; });

  GroundArgs gr;
  auto* gd = app.add_subcommand("ground", "Write heatmaps and grounding metrics for one disease");
  gd->add_option("--corpus", gr.corpus, "Saved corpus directory");
  gd->add_option("--checkpoint", gr.checkpoint)->required();
  gd->add_option("--disease", gr.disease)->required();
  gd->add_option("--split", gr.split)->check(CLI::IsMember(split_names()))->capture_default_str();
  gd->add_option("--sample", gr.sample, "One sample id (default: the first positives)");
  gd->add_option("--limit", gr.limit, "Heatmaps to write")->capture_default_str();
  gd->add_option("--threshold", gr.threshold, "Binarization threshold (default: selected on valid)");
  gd->callback([&] { run = [&] { return cmd_ground(g, gr); }; });

  AblateArgs ab;
  auto* ad = app.add_subcommand("ablate", "Head or aspect-count ablation");
  ad->add_option("--corpus", ab.corpus, "Saved corpus directory");
  ad->add_option("--grid", ab.grid)->required()->check(CLI::IsMember({"heads", "aspects"}));
  ad->add_option("--seeds", ab.seeds)->capture_default_str();
  ad->add_option("--counts", ab.counts, "Aspect counts; 0 means all K+1")->capture_default_str();
  ad->callback([&] { run = [&] { return cmd_ablate(g, ab); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: UsageError: " << one_line(e.what()) << "\n";
    return 2;
  }
  try {
    return run();
  } catch (const mavl::ValidationError& e) {
    std::cerr << "error: " << e.kind() << ": entity=" << e.entity() << " field=" << e.field() << ": "
              << one_line(e.what()) << "\n";
  } catch (const mavl::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: ConfigError: " << one_line(e.what()) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << one_line(e.what()) << "\n";
  }
  return 1;
}
