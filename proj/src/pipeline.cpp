#include "nnif/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "nnif/common.hpp"
#include "nnif/matrix_io.hpp"
#include "nnif/parallel.hpp"

namespace nnif {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

json default_config_tree() {
  return json::parse(R"({
    "seed": null,
    "threads": 1,
    "output_dir": "nnif-out",
    "corpus": {"path": "", "synonyms": "", "n_per_class": 1500, "min_freq": 1,
               "split": {"train": 0.8, "val": 0.0, "test": 0.2}},
    "model": {"embed_dim": 32, "hidden_dims": [32, 32], "dropout_rate": 0.5, "max_len": 64},
    "train": {"epochs": 3, "learning_rate": 0.005, "weight_decay": 0.01, "batch_size": 32},
    "attack": {"name": "char",
               "char": {"max_word_fraction": 0.5, "max_attempts": 60, "ops": ["swap", "drop", "add", "keyboard"],
                        "keyboard": "", "greedy": true},
               "word": {"population_size": 20, "generations": 10, "top_k_synonyms": 8,
                        "max_perturb_fraction": 0.5}},
    "detection": {"size": 400},
    "detectors": ["nnif", "mahal_penult", "mahal_ensemble", "lid"],
    "nnif": {"m": 200, "sample_size": 6000, "layer": "h2", "l2": 1.0,
             "lissa": {"depth": 100, "repeats": 4, "scale": 25.0, "damping": 0.01, "batch_size": 16}},
    "mahal": {"lambda": 0.001, "relative": true, "l2": 1.0},
    "lid": {"k_grid": [10, 20, 100], "l2": 1.0},
    "analysis": {"m_sweep": true, "m_values": [5, 10, 25, 50, 100],
                 "scenes": true, "n_pairs": 50, "top_k": 25, "dedup": false,
                 "perplexity": 15.0, "iterations": 500, "learning_rate": 100.0,
                 "svm_lambda": 0.001, "svm_iterations": 2000}
  })");
}

namespace {

void merge_checked(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError("config: " + (where.empty() ? std::string("root") : where) + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) merge_checked(slot, it.value(), key);
    else slot = it.value();
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + where + "." + key + "' has the wrong type");
  }
}

std::string resolve(const std::string& p, const std::string& base_dir) {
  if (p.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base_dir) / path).lexically_normal().string();
}

CharOp parse_op(const std::string& s) {
  if (s == "swap") return CharOp::swap;
  if (s == "drop") return CharOp::drop;
  if (s == "add") return CharOp::add;
  if (s == "keyboard") return CharOp::keyboard;
  throw ConfigError("config: unknown char op '" + s + "'");
}

}  // namespace

ExperimentConfig parse_config(const json& j, const std::string& base_dir, const ConfigOverrides& overrides) {
  json t = default_config_tree();
  merge_checked(t, j, "");
  if (overrides.seed) t["seed"] = *overrides.seed;
  if (overrides.threads) t["threads"] = *overrides.threads;
  if (overrides.output_dir) t["output_dir"] = *overrides.output_dir;
  if (t["seed"].is_null()) throw ConfigError("config: 'seed' is required");
  if (!t["seed"].is_number_unsigned() && !(t["seed"].is_number_integer() && t["seed"].get<std::int64_t>() >= 0))
    throw ConfigError("config: 'seed' must be a non-negative integer");

  ExperimentConfig c;
  c.seed = t["seed"].get<std::uint64_t>();
  c.threads = get<int>(t, "threads", "");
  if (c.threads < 1) throw ConfigError("config: threads must be >= 1");
  c.output_dir = get<std::string>(t, "output_dir", "");

  const auto& jc = t["corpus"];
  c.corpus_path = resolve(get<std::string>(jc, "path", "corpus"), base_dir);
  c.synonyms_path = resolve(get<std::string>(jc, "synonyms", "corpus"), base_dir);
  if (!c.corpus_path.empty() && !fs::exists(c.corpus_path)) throw ConfigError("config: corpus file not found: " + c.corpus_path);
  if (!c.synonyms_path.empty() && !fs::exists(c.synonyms_path))
    throw ConfigError("config: synonym file not found: " + c.synonyms_path);
  c.n_per_class = get<int>(jc, "n_per_class", "corpus");
  if (c.corpus_path.empty() && c.n_per_class < 1) throw ConfigError("config: corpus.n_per_class must be >= 1");
  c.min_freq = get<int>(jc, "min_freq", "corpus");
  c.fractions = {get<double>(jc["split"], "train", "corpus.split"), get<double>(jc["split"], "val", "corpus.split"),
                 get<double>(jc["split"], "test", "corpus.split")};
  if (c.fractions.test <= 0.0) throw ConfigError("config: corpus.split.test must be > 0");

  const auto& jm = t["model"];
  c.model.embed_dim = get<int>(jm, "embed_dim", "model");
  c.model.hidden_dims = get<std::vector<int>>(jm, "hidden_dims", "model");
  c.model.dropout_rate = get<double>(jm, "dropout_rate", "model");
  c.model.max_len = get<int>(jm, "max_len", "model");
  c.model.seed = derive_seed(c.seed, "model-init");

  const auto& jt = t["train"];
  c.train.epochs = get<int>(jt, "epochs", "train");
  c.train.learning_rate = get<double>(jt, "learning_rate", "train");
  c.train.weight_decay = get<double>(jt, "weight_decay", "train");
  c.train.batch_size = get<int>(jt, "batch_size", "train");
  c.train.seed = derive_seed(c.seed, "train");
  c.train.validate();

  const auto& ja = t["attack"];
  c.attack = get<std::string>(ja, "name", "attack");
  if (c.attack != "char" && c.attack != "word") throw ConfigError("config: attack.name must be 'char' or 'word'");
  const auto& jch = ja["char"];
  c.char_attack.max_word_fraction = get<double>(jch, "max_word_fraction", "attack.char");
  c.char_attack.max_attempts = get<int>(jch, "max_attempts", "attack.char");
  c.char_attack.greedy = get<bool>(jch, "greedy", "attack.char");
  c.char_attack.ops.clear();
  for (const auto& op : get<std::vector<std::string>>(jch, "ops", "attack.char")) c.char_attack.ops.push_back(parse_op(op));
  const auto kb = resolve(get<std::string>(jch, "keyboard", "attack.char"), base_dir);
  if (!kb.empty()) {
    if (!fs::exists(kb)) throw ConfigError("config: keyboard map not found: " + kb);
    c.char_attack.keyboard = load_keyboard_map(kb);
  }
  c.char_attack.validate();
  const auto& jw = ja["word"];
  c.word_attack.population_size = get<int>(jw, "population_size", "attack.word");
  c.word_attack.generations = get<int>(jw, "generations", "attack.word");
  c.word_attack.top_k_synonyms = get<int>(jw, "top_k_synonyms", "attack.word");
  c.word_attack.max_perturb_fraction = get<double>(jw, "max_perturb_fraction", "attack.word");
  c.word_attack.validate();
  if (c.attack == "word" && !c.corpus_path.empty() && c.synonyms_path.empty())
    throw ConfigError("config: the word attack on a corpus file needs corpus.synonyms");

  const auto size = get<std::int64_t>(t["detection"], "size", "detection");
  if (size < 2) throw ConfigError("config: detection.size must be >= 2");
  c.detection_size = static_cast<std::size_t>(size);

  c.detectors = get<std::vector<std::string>>(t, "detectors", "");
  for (const auto& d : c.detectors)
    if (d != "nnif" && d != "mahal_penult" && d != "mahal_ensemble" && d != "lid")
      throw ConfigError("config: unknown detector '" + d + "'");

  const auto& jn = t["nnif"];
  c.nnif.m = get<int>(jn, "m", "nnif");
  if (c.nnif.m < 1) throw ConfigError("config: nnif.m must be >= 1");
  c.nnif.sample_size = get<std::size_t>(jn, "sample_size", "nnif");
  c.nnif.layer = parse_layer(get<std::string>(jn, "layer", "nnif"));
  c.nnif.logreg.l2 = get<double>(jn, "l2", "nnif");
  const auto& jl = jn["lissa"];
  c.nnif.lissa.depth = get<int>(jl, "depth", "nnif.lissa");
  c.nnif.lissa.repeats = get<int>(jl, "repeats", "nnif.lissa");
  c.nnif.lissa.scale = get<double>(jl, "scale", "nnif.lissa");
  c.nnif.lissa.damping = get<double>(jl, "damping", "nnif.lissa");
  c.nnif.lissa.batch_size = get<int>(jl, "batch_size", "nnif.lissa");
  c.nnif.lissa.validate();
  c.nnif.seed = derive_seed(c.seed, "nnif");
  c.nnif.threads = c.threads;

  c.mahal.fit.lambda = get<double>(t["mahal"], "lambda", "mahal");
  c.mahal.fit.relative = get<bool>(t["mahal"], "relative", "mahal");
  c.mahal.logreg.l2 = get<double>(t["mahal"], "l2", "mahal");
  c.lid.k_grid = get<std::vector<int>>(t["lid"], "k_grid", "lid");
  c.lid.logreg.l2 = get<double>(t["lid"], "l2", "lid");

  const auto& jan = t["analysis"];
  c.run_m_sweep = get<bool>(jan, "m_sweep", "analysis");
  c.m_values = get<std::vector<int>>(jan, "m_values", "analysis");
  if (c.run_m_sweep && c.m_values.empty()) throw ConfigError("config: analysis.m_values is empty");
  c.run_scenes = get<bool>(jan, "scenes", "analysis");
  c.n_pairs = get<int>(jan, "n_pairs", "analysis");
  if (c.n_pairs < 1) throw ConfigError("config: analysis.n_pairs must be >= 1");
  c.scene.top_k = get<int>(jan, "top_k", "analysis");
  c.scene.dedup = get<bool>(jan, "dedup", "analysis");
  c.scene.layer = c.nnif.layer;
  c.scene.tsne.perplexity = get<double>(jan, "perplexity", "analysis");
  c.scene.tsne.iterations = get<int>(jan, "iterations", "analysis");
  c.scene.tsne.learning_rate = get<double>(jan, "learning_rate", "analysis");
  c.scene.tsne.seed = derive_seed(c.seed, "tsne");
  c.svm.lambda = get<double>(jan, "svm_lambda", "analysis");
  c.svm.iterations = get<int>(jan, "svm_iterations", "analysis");

  c.tree = std::move(t);
  return c;
}

ExperimentConfig load_config(const std::string& path, const ConfigOverrides& overrides) {
  const auto j = read_json(path);
  return parse_config(j, fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string(),
                      overrides);
}

std::string ExperimentConfig::hash() const {
  json t = tree;
  t.erase("output_dir");
  t.erase("threads");
  return hex64(fnv1a64(t.dump()));
}

json ExperimentConfig::provenance() const { return {{"config_hash", hash()}, {"seed", seed}}; }

std::string ExperimentConfig::provenance_line() const {
  return "config_hash=" + hash() + " seed=" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// Data

Workspace prepare_workspace(const ExperimentConfig& cfg) {
  Workspace ws;
  Corpus corpus;
  if (cfg.corpus_path.empty()) {
    auto [c, syn] = generate_synthetic(derive_seed(cfg.seed, "synthetic"), cfg.n_per_class, SyntheticSpec::sentiment());
    corpus = std::move(c);
    ws.synonyms = std::move(syn);
  } else {
    corpus = load_jsonl(cfg.corpus_path);
  }
  if (!cfg.synonyms_path.empty()) ws.synonyms = load_synonyms_tsv(cfg.synonyms_path);
  ws.splits = split(corpus, cfg.fractions, derive_seed(cfg.seed, "split"));
  ws.vocab = build_vocab(ws.splits.train, cfg.min_freq);
  ws.train = encode_corpus(ws.splits.train, ws.vocab, cfg.model.max_len);
  ws.test = encode_corpus(ws.splits.test, ws.vocab, cfg.model.max_len);
  return ws;
}

TargetModel load_matching_checkpoint(const std::string& path, const Workspace& ws) {
  auto model = load_checkpoint(path);
  if (model.vocab.hash() != ws.vocab.hash())
    throw ConfigError("checkpoint " + path + " was trained on a different vocabulary (hash " + hex64(model.vocab.hash()) +
                      ", config gives " + hex64(ws.vocab.hash()) + ")");
  return model;
}

std::string default_checkpoint_path(const ExperimentConfig& cfg) { return (fs::path(cfg.output_dir) / "model.json").string(); }
std::string default_dataset_path(const ExperimentConfig& cfg) {
  return (fs::path(cfg.output_dir) / "detection.jsonl").string();
}

namespace {

fs::path out_path(const ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output_dir);
  return fs::path(cfg.output_dir) / name;
}

json with_provenance(const ExperimentConfig& cfg, json j) {
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.seed;
  return j;
}

json metrics_json(const DetectorRun& run) {
  json j;
  j["detector"] = run.name;
  j["accuracy"] = run.metrics.accuracy;
  j["auc"] = run.metrics.auc;
  j["tp"] = run.metrics.tp;
  j["fp"] = run.metrics.fp;
  j["tn"] = run.metrics.tn;
  j["fn"] = run.metrics.fn;
  j["n"] = run.metrics.n;
  j["metadata"] = run.metrics.metadata;
  return j;
}

void write_features_csv(const ExperimentConfig& cfg, const DetectorRun& run) {
  auto header = run.feature_names;
  header.push_back("detect_label");
  header.push_back("is_train");
  Eigen::MatrixXd rows(run.features.rows(), run.features.cols() + 2);
  rows.leftCols(run.features.cols()) = run.features;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    rows(i, run.features.cols()) = run.labels[static_cast<std::size_t>(i)];
    rows(i, run.features.cols() + 1) = run.is_train[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  }
  write_csv(out_path(cfg, "features_" + run.name + ".csv").string(), header, rows, cfg.provenance_line());
}

}  // namespace

std::vector<DetectionPair> detection_pairs(const DetectionDataset& ds) {
  std::map<std::int64_t, DetectionPair> by_source;
  std::map<std::int64_t, int> seen;
  for (const auto& r : ds.records) {
    auto& p = by_source[r.source_id];
    p.source_id = r.source_id;
    (r.detect_label == 1 ? p.original : p.adversarial) = r.text;
    seen[r.source_id] |= r.detect_label == 1 ? 1 : 2;
  }
  std::vector<DetectionPair> out;
  for (auto& [id, p] : by_source)
    if (seen[id] == 3) out.push_back(std::move(p));
  return out;
}

// ---------------------------------------------------------------------------
// Commands

json cmd_train(const ExperimentConfig& cfg) {
  const auto ws = prepare_workspace(cfg);
  ModelConfig mc = cfg.model;
  mc.vocab_size = ws.vocab.size();
  mc.n_classes = ws.splits.train.n_classes;
  mc.validate();
  const auto val = encode_corpus(ws.splits.val, ws.vocab, mc.max_len);
  auto result = train(init_model(mc), ws.train, val, cfg.train);
  TargetModel model{std::move(result.params), ws.vocab};
  const double clean = accuracy(model.params, ws.test);

  json m;
  m["clean_accuracy"] = clean;
  m["train_loss"] = result.history.train_loss;
  m["n_train"] = ws.train.size();
  m["n_test"] = ws.test.size();
  m["vocab_size"] = ws.vocab.size();
  m["vocab_hash"] = hex64(ws.vocab.hash());
  m = with_provenance(cfg, m);
  save_checkpoint(model, out_path(cfg, "model.json").string(), cfg.provenance().dump());
  write_json(m, out_path(cfg, "train_metrics.json").string());
  return m;
}

json cmd_attack(const ExperimentConfig& cfg, const std::string& checkpoint) {
  const auto ws = prepare_workspace(cfg);
  const auto model = load_matching_checkpoint(checkpoint, ws);
  AttackFn fn;
  if (cfg.attack == "char") {
    fn = make_char_attack(cfg.char_attack);
  } else {
    if (ws.synonyms.empty()) throw ConfigError("word attack: empty synonym table");
    fn = make_word_attack(ws.synonyms, cfg.word_attack);
  }
  const auto results = attack_corpus(model, ws.splits.test, fn, derive_seed(cfg.seed, "attack"), cfg.threads);
  const auto ds = assemble_detection_dataset(results, cfg.detection_size, derive_seed(cfg.seed, "detection-split"));

  long correct = 0, success = 0, queries = 0;
  for (const auto& ex : ws.test)
    if (predict(model.params, ex.tokens).label == ex.label) ++correct;
  for (const auto& r : results) {
    success += r.success ? 1 : 0;
    queries += r.n_queries;
  }
  const auto n_test = static_cast<double>(ws.test.size());
  json rep;
  rep["attack"] = cfg.attack;
  rep["n_test"] = ws.test.size();
  rep["n_attacked"] = results.size();
  rep["n_success"] = success;
  rep["success_rate"] = results.empty() ? 0.0 : static_cast<double>(success) / static_cast<double>(results.size());
  rep["clean_accuracy"] = static_cast<double>(correct) / n_test;
  rep["accuracy_under_attack"] = static_cast<double>(correct - success) / n_test;
  rep["mean_queries"] = results.empty() ? 0.0 : static_cast<double>(queries) / static_cast<double>(results.size());
  rep["detection_records"] = ds.records.size();
  rep["detection_train"] = ds.train_indices.size();
  rep["detection_test"] = ds.test_indices.size();
  rep["undersized"] = ds.undersized;
  rep = with_provenance(cfg, rep);
  if (ds.undersized)
    std::cerr << "warning: only " << ds.records.size() / 2 << " successful attacks for " << ds.requested_pairs
              << " requested pairs\n";
  save_detection_dataset(ds, out_path(cfg, "detection.jsonl").string(), cfg.provenance().dump());
  write_json(rep, out_path(cfg, "attack_report.json").string());
  return rep;
}

json cmd_detect(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& dataset) {
  const auto ws = prepare_workspace(cfg);
  const auto model = load_matching_checkpoint(checkpoint, ws);
  const auto ds = load_detection_dataset(dataset);
  std::vector<DetectorRun> runs;
  for (const auto& name : cfg.detectors) {
    if (name == "nnif") {
      NnifConfig nc = cfg.nnif;
      runs.push_back(run_nnif_detector(model, ws.train, ds, nc));
    } else if (name == "mahal_penult") {
      runs.push_back(run_mahal_detector(model, ws.train, ds, MahalVariant::penultimate, cfg.mahal));
    } else if (name == "mahal_ensemble") {
      runs.push_back(run_mahal_detector(model, ws.train, ds, MahalVariant::ensemble, cfg.mahal));
    } else {
      runs.push_back(run_lid_detector(model, ws.train, ds, cfg.lid));
    }
  }
  json table = json::array();
  std::ofstream csv(out_path(cfg, "detection_table.csv"), std::ios::binary);
  csv << "# " << cfg.provenance_line() << '\n';
  csv << "detector,accuracy,auc,tp,fp,tn,fn,n\n";
  for (const auto& run : runs) {
    const auto j = with_provenance(cfg, metrics_json(run));
    write_json(j, out_path(cfg, "detect_" + run.name + ".json").string());
    write_features_csv(cfg, run);
    const auto& m = run.metrics;
    csv << run.name << ',' << format_double(m.accuracy) << ',' << format_double(m.auc) << ',' << m.tp << ',' << m.fp
        << ',' << m.tn << ',' << m.fn << ',' << m.n << '\n';
    table.push_back(j);
  }
  return with_provenance(cfg, {{"detectors", table}});
}

json cmd_analyze(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& dataset) {
  const auto ws = prepare_workspace(cfg);
  const auto model = load_matching_checkpoint(checkpoint, ws);
  const auto ds = load_detection_dataset(dataset);
  json out = cfg.provenance();

  if (cfg.run_m_sweep) {
    const auto sweep = m_sweep(model, ws.train, ds, cfg.m_values, cfg.nnif);
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(sweep.curve.size()), 3);
    json curve = json::array();
    for (std::size_t i = 0; i < sweep.curve.size(); ++i) {
      const auto& p = sweep.curve[i];
      rows.row(static_cast<Eigen::Index>(i)) << p.m, p.accuracy, p.auc;
      curve.push_back({{"M", p.m}, {"accuracy", p.accuracy}, {"auc", p.auc}});
    }
    write_csv(out_path(cfg, "m_sweep.csv").string(), {"M", "accuracy", "auc"}, rows, cfg.provenance_line());
    out["m_sweep"] = curve;
    out["m_sweep_ihvp_count"] = sweep.counters.ihvp;
  }

  if (cfg.run_scenes) {
    auto pairs = detection_pairs(ds);
    Rng rng(derive_seed(cfg.seed, "scene-pairs"));
    shuffle_range(pairs.begin(), pairs.end(), rng);
    if (pairs.size() > static_cast<std::size_t>(cfg.n_pairs)) pairs.resize(static_cast<std::size_t>(cfg.n_pairs));
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.source_id < b.source_id; });

    const std::size_t s = std::min(cfg.nnif.sample_size, ws.train.size());
    InfluenceEngine engine(model.params, ws.train, cfg.nnif.lissa, s, derive_seed(cfg.seed, "scene-influence"));
    const auto index = build_index(model.params, ws.train, cfg.scene.layer);
    const SceneContext ctx{model, ws.train, index, &engine};
    std::vector<SubspaceScene> if_scenes(pairs.size()), nn_scenes(pairs.size());
    parallel_for(pairs.size(), cfg.threads, [&](std::size_t i) {
      const auto& p = pairs[i];
      if_scenes[i] = build_scene(ctx, p.original, p.adversarial, p.source_id, SceneView::influence, cfg.scene);
      nn_scenes[i] = build_scene(ctx, p.original, p.adversarial, p.source_id, SceneView::neighbors, cfg.scene);
    });
    fs::create_directories(fs::path(cfg.output_dir) / "scenes");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto id = std::to_string(pairs[i].source_id);
      save_scene_csv(if_scenes[i], out_path(cfg, "scenes/influence_" + id + ".csv").string(), cfg.provenance_line());
      save_scene_csv(nn_scenes[i], out_path(cfg, "scenes/neighbors_" + id + ".csv").string(), cfg.provenance_line());
    }
    const auto sep = separability(if_scenes, nn_scenes, cfg.svm);
    json js;
    js["n_pairs"] = pairs.size();
    js["top_k"] = cfg.scene.top_k;
    js["influence_accuracy"] = sep.influence_mean;
    js["neighbors_accuracy"] = sep.neighbor_mean;
    js["p_value"] = sep.p_value;
    js["n_trials_per_side"] = sep.n_trials;
    js["trial_unit"] = "projected neighbor point";
    js["skipped"] = sep.skipped;
    js["influence_per_pair"] = sep.influence_accuracies;
    js["neighbors_per_pair"] = sep.neighbor_accuracies;
    js = with_provenance(cfg, js);
    write_json(js, out_path(cfg, "separability.json").string());
    out["separability"] = js;
  }
  return out;
}

json cmd_report(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  auto maybe = [&](const std::string& name) -> std::optional<json> {
    const auto p = dir / name;
    if (!fs::exists(p)) return std::nullopt;
    return read_json(p.string());
  };
  std::vector<json> detectors;
  for (const auto& name : cfg.detectors)
    if (auto j = maybe("detect_" + name + ".json")) detectors.push_back(*j);
  const auto train = maybe("train_metrics.json");
  const auto attack = maybe("attack_report.json");
  const auto sep = maybe("separability.json");
  if (detectors.empty() && !train && !attack && !sep)
    throw ConfigError("report: no results found in " + cfg.output_dir);

  std::ostringstream csv, md;
  csv << "# " << cfg.provenance_line() << '\n' << "section,key,value\n";
  md << "# Results\n\n" << "`" << cfg.provenance_line() << "`\n\n";
  auto num = [](const json& j) { return j.is_number() ? format_double(j.get<double>()) : j.dump(); };
  if (train) {
    csv << "train,clean_accuracy," << num(train->at("clean_accuracy")) << '\n';
    md << "Clean accuracy: " << num(train->at("clean_accuracy")) << "\n\n";
  }
  if (attack) {
    for (const char* k : {"success_rate", "clean_accuracy", "accuracy_under_attack", "n_success"})
      csv << "attack," << k << ',' << num(attack->at(k)) << '\n';
    md << "| Attack | Success rate | Accuracy under attack |\n|---|---|---|\n"
       << "| " << attack->at("attack").get<std::string>() << " | " << num(attack->at("success_rate")) << " | "
       << num(attack->at("accuracy_under_attack")) << " |\n\n";
  }
  if (!detectors.empty()) {
    md << "| Detector | Accuracy | AUC |\n|---|---|---|\n";
    for (const auto& d : detectors) {
      const auto name = d.at("detector").get<std::string>();
      csv << "detector_accuracy," << name << ',' << num(d.at("accuracy")) << '\n';
      csv << "detector_auc," << name << ',' << num(d.at("auc")) << '\n';
      md << "| " << name << " | " << num(d.at("accuracy")) << " | " << num(d.at("auc")) << " |\n";
    }
    md << '\n';
  }
  if (sep) {
    for (const char* k : {"influence_accuracy", "neighbors_accuracy", "p_value", "n_trials_per_side"})
      csv << "separability," << k << ',' << num(sep->at(k)) << '\n';
    md << "| View | SVM accuracy |\n|---|---|\n"
       << "| influence | " << num(sep->at("influence_accuracy")) << " |\n"
       << "| neighbors | " << num(sep->at("neighbors_accuracy")) << " |\n\n"
       << "One-tailed p = " << num(sep->at("p_value")) << " (n = " << sep->at("n_trials_per_side").dump()
       << " per side)\n";
  }
  std::ofstream(out_path(cfg, "report.csv"), std::ios::binary) << csv.str();
  std::ofstream(out_path(cfg, "report.md"), std::ios::binary) << md.str();
  return with_provenance(cfg, {{"detectors", detectors.size()}});
}

}  // namespace nnif
