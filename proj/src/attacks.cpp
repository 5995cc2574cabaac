#include "nnif/attacks.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace nnif {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Keyboard

KeyboardMap qwerty_keyboard() {
  const std::string rows[] = {"1234567890", "qwertyuiop", "asdfghjkl", "zxcvbnm"};
  const double offset[] = {0.0, 0.5, 0.75, 1.25};
  KeyboardMap map;
  for (int r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const double x = static_cast<double>(c) + offset[r];
      std::string adj;
      for (int r2 = std::max(0, r - 1); r2 <= std::min(3, r + 1); ++r2) {
        for (std::size_t c2 = 0; c2 < rows[r2].size(); ++c2) {
          if (r2 == r && c2 == c) continue;
          const double dx = std::abs(static_cast<double>(c2) + offset[r2] - x);
          if ((r2 == r && dx == 1.0) || (r2 != r && dx <= 1.0)) adj.push_back(rows[r2][c2]);
        }
      }
      map[rows[r][c]] = adj;
    }
  }
  return map;
}

KeyboardMap load_keyboard_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open keyboard map: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("keyboard map " + path + ": " + e.what());
  }
  KeyboardMap map;
  for (const auto& [key, list] : j.items()) {
    if (key.size() != 1) throw ConfigError("keyboard map: keys must be single characters");
    std::string adj;
    for (const auto& v : list) {
      const auto s = v.get<std::string>();
      if (s.size() != 1) throw ConfigError("keyboard map: neighbours must be single characters");
      adj += s;
    }
    map[key[0]] = adj;
  }
  return map;
}

void save_keyboard_map(const KeyboardMap& map, const std::string& path) {
  json j = json::object();
  for (const auto& [k, adj] : map) {
    json list = json::array();
    for (char c : adj) list.push_back(std::string(1, c));
    j[std::string(1, k)] = list;
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write keyboard map: " + path);
  out << j.dump(1) << '\n';
}

void CharAttackConfig::validate() const {
  if (!(max_word_fraction > 0.0 && max_word_fraction <= 1.0))
    throw ConfigError("char attack: max_word_fraction must be in (0, 1]");
  if (ops.empty()) throw ConfigError("char attack: no operations enabled");
  if (max_attempts < 1) throw ConfigError("char attack: max_attempts must be >= 1");
  for (char c = 'a'; c <= 'z'; ++c)
    if (!keyboard.count(c)) throw ConfigError(std::string("keyboard map lacks '") + c + "'");
  for (char c = '0'; c <= '9'; ++c)
    if (!keyboard.count(c)) throw ConfigError(std::string("keyboard map lacks '") + c + "'");
}

void GAConfig::validate() const {
  if (population_size < 2) throw ConfigError("word attack: population_size must be >= 2");
  if (generations < 1) throw ConfigError("word attack: generations must be >= 1");
  if (top_k_synonyms < 1) throw ConfigError("word attack: top_k_synonyms must be >= 1");
  if (!(max_perturb_fraction > 0.0 && max_perturb_fraction <= 1.0))
    throw ConfigError("word attack: max_perturb_fraction must be in (0, 1]");
}

// ---------------------------------------------------------------------------
// Character attack

namespace {

struct WordParts {
  std::string prefix, core, suffix;
};

WordParts split_punct(const std::string& word) {
  auto punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
  std::size_t b = 0;
  std::size_t e = word.size();
  while (b < e && punct(word[b])) ++b;
  while (e > b && punct(word[e - 1])) --e;
  return {word.substr(0, b), word.substr(b, e - b), word.substr(e)};
}

bool op_applies(const std::string& core, CharOp op, const KeyboardMap& keyboard) {
  switch (op) {
    case CharOp::swap:
      for (std::size_t j = 1; j + 1 < core.size(); ++j)
        if (core[j] != core[j + 1]) return true;
      return false;
    case CharOp::drop: return core.size() >= 3;
    case CharOp::add: return true;
    case CharOp::keyboard:
      for (char c : core)
        if (keyboard.count(static_cast<char>(std::tolower(static_cast<unsigned char>(c))))) return true;
      return false;
  }
  return false;
}

}  // namespace

bool apply_char_op(std::string& word, CharOp op, const KeyboardMap& keyboard, Rng& rng) {
  WordParts parts = split_punct(word);
  std::string& core = parts.core;
  if (!op_applies(core, op, keyboard)) return false;
  switch (op) {
    case CharOp::swap: {
      // exchange positions (j, j + 1) with 1 <= j <= len - 2, skipping identical pairs
      std::vector<std::size_t> cands;
      for (std::size_t j = 1; j + 1 < core.size(); ++j)
        if (core[j] != core[j + 1]) cands.push_back(j);
      const std::size_t j = cands[uniform_index(rng, cands.size())];
      std::swap(core[j], core[j + 1]);
      break;
    }
    case CharOp::drop: {
      const std::size_t j = 1 + uniform_index(rng, core.size() - 2);
      core.erase(j, 1);
      break;
    }
    case CharOp::add: {
      const std::size_t j = uniform_index(rng, core.size() + 1);
      const char c = static_cast<char>('a' + uniform_index(rng, 26));
      core.insert(core.begin() + static_cast<std::ptrdiff_t>(j), c);
      break;
    }
    case CharOp::keyboard: {
      std::vector<std::size_t> cands;
      for (std::size_t j = 0; j < core.size(); ++j) {
        const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(core[j])));
        auto it = keyboard.find(lc);
        if (it != keyboard.end() && !it->second.empty()) cands.push_back(j);
      }
      if (cands.empty()) return false;
      const std::size_t j = cands[uniform_index(rng, cands.size())];
      const bool upper = std::isupper(static_cast<unsigned char>(core[j])) != 0;
      const auto& adj = keyboard.at(static_cast<char>(std::tolower(static_cast<unsigned char>(core[j]))));
      char c = adj[uniform_index(rng, adj.size())];
      if (upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      core[j] = c;
      break;
    }
  }
  word = parts.prefix + core + parts.suffix;
  return true;
}

namespace {

std::vector<int> diff_positions(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<int> out;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

AttackResult char_attack(const TargetModel& model, const Example& example, const CharAttackConfig& cfg) {
  cfg.validate();
  const auto original = split_words(example.text);
  if (original.empty()) throw std::invalid_argument("char_attack: empty text");
  AttackResult res;
  res.original = example;
  res.adversarial_text = example.text;

  const auto base = model.predict(example.text);
  res.n_queries = 1;
  res.original_prediction = base.label;
  res.adversarial_prediction = base.label;
  double current = base.activations.probs[base.label];

  const auto n_words = original.size();
  const auto budget = static_cast<std::size_t>(std::ceil(cfg.max_word_fraction * static_cast<double>(n_words) - 1e-12));
  std::vector<std::string> words = original;
  std::vector<std::size_t> perturbed;
  std::vector<std::size_t> all(n_words);
  for (std::size_t i = 0; i < n_words; ++i) all[i] = i;
  Rng rng(cfg.seed);

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const auto& eligible = perturbed.size() < budget ? all : perturbed;
    const std::size_t pos = eligible[uniform_index(rng, eligible.size())];
    const auto core = split_punct(words[pos]).core;
    std::vector<CharOp> usable;
    for (auto op : cfg.ops)
      if (op_applies(core, op, cfg.keyboard)) usable.push_back(op);
    if (usable.empty()) continue;
    const CharOp op = usable[uniform_index(rng, usable.size())];
    std::string candidate = words[pos];
    if (!apply_char_op(candidate, op, cfg.keyboard, rng) || candidate == words[pos]) continue;

    std::vector<std::string> trial = words;
    trial[pos] = candidate;
    const std::string text = join_words(trial);
    if (tokenize(text).empty()) continue;
    const auto pred = model.predict(text);
    ++res.n_queries;
    const double p_orig = pred.activations.probs[base.label];
    if (!cfg.greedy || pred.label != base.label || p_orig < current) {
      words = std::move(trial);
      current = p_orig;
      if (std::find(perturbed.begin(), perturbed.end(), pos) == perturbed.end()) perturbed.push_back(pos);
      if (pred.label != base.label) {
        res.success = true;
        res.adversarial_prediction = pred.label;
        break;
      }
    }
  }
  res.adversarial_text = join_words(words);
  res.perturbed_positions = diff_positions(original, words);
  return res;
}

// ---------------------------------------------------------------------------
// Genetic word-substitution attack

namespace {

struct Slot {
  std::size_t position;
  WordParts parts;
  std::vector<std::string> candidates;
};

}  // namespace

AttackResult word_attack_ga(const TargetModel& model, const Example& example, const SynonymTable& synonyms,
                            const GAConfig& cfg) {
  cfg.validate();
  const auto original = split_words(example.text);
  if (original.empty()) throw std::invalid_argument("word_attack_ga: empty text");
  AttackResult res;
  res.original = example;
  res.adversarial_text = example.text;

  // Candidate lists are fixed once, before the search.
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < original.size(); ++i) {
    auto parts = split_punct(original[i]);
    std::string key = parts.core;
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    auto it = synonyms.find(key);
    if (it == synonyms.end() || it->second.empty()) continue;
    std::vector<std::string> cands;
    for (const auto& s : it->second) {
      if (static_cast<int>(cands.size()) >= cfg.top_k_synonyms) break;
      if (s != key) cands.push_back(s);
    }
    if (!cands.empty()) slots.push_back({i, std::move(parts), std::move(cands)});
  }
  if (slots.empty()) return res;

  const auto base = model.predict(example.text);
  res.n_queries = 1;
  res.original_prediction = base.label;
  res.adversarial_prediction = base.label;

  const std::size_t n_slots = slots.size();
  const auto budget = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg.max_perturb_fraction * static_cast<double>(original.size()) - 1e-12)));
  using Genome = std::vector<int>;  // -1 keeps the original word
  Rng rng(cfg.seed);

  auto render = [&](const Genome& g) {
    std::vector<std::string> words = original;
    for (std::size_t s = 0; s < n_slots; ++s)
      if (g[s] >= 0) {
        const auto& p = slots[s].parts;
        words[slots[s].position] = p.prefix + slots[s].candidates[static_cast<std::size_t>(g[s])] + p.suffix;
      }
    return words;
  };
  struct Eval {
    double fitness;
    int prediction;
  };
  std::map<Genome, Eval> cache;
  auto evaluate = [&](const Genome& g) -> Eval {
    auto it = cache.find(g);
    if (it != cache.end()) return it->second;
    const auto pred = model.predict(join_words(render(g)));
    ++res.n_queries;
    Eval e{1.0 - pred.activations.probs[base.label], pred.label};
    cache.emplace(g, e);
    return e;
  };
  auto count_subs = [](const Genome& g) {
    return static_cast<std::size_t>(std::count_if(g.begin(), g.end(), [](int x) { return x >= 0; }));
  };
  auto mutate = [&](Genome& g) {
    std::vector<std::size_t> choices;
    if (count_subs(g) >= budget) {
      for (std::size_t s = 0; s < n_slots; ++s)
        if (g[s] >= 0) choices.push_back(s);
    } else {
      for (std::size_t s = 0; s < n_slots; ++s) choices.push_back(s);
    }
    const std::size_t s = choices[uniform_index(rng, choices.size())];
    g[s] = static_cast<int>(uniform_index(rng, slots[s].candidates.size()));
  };

  std::vector<Genome> population;
  for (int i = 0; i < cfg.population_size; ++i) {
    Genome g(n_slots, -1);
    mutate(g);
    population.push_back(std::move(g));
  }

  Genome best_genome = population.front();
  for (int gen = 0; gen < cfg.generations; ++gen) {
    std::vector<Eval> evals;
    evals.reserve(population.size());
    std::size_t best = 0;
    for (std::size_t i = 0; i < population.size(); ++i) {
      evals.push_back(evaluate(population[i]));
      if (evals[i].fitness > evals[best].fitness) best = i;
    }
    best_genome = population[best];
    res.best_fitness.push_back(evals[best].fitness);
    if (evals[best].prediction != base.label) {
      res.success = true;
      res.adversarial_prediction = evals[best].prediction;
      break;
    }
    if (gen + 1 == cfg.generations) break;

    double total = 0.0;
    for (const auto& e : evals) total += e.fitness;
    auto pick_parent = [&]() -> const Genome& {
      if (!(total > 0.0)) return population[uniform_index(rng, population.size())];
      double u = uniform01(rng) * total;
      for (std::size_t i = 0; i < population.size(); ++i) {
        u -= evals[i].fitness;
        if (u < 0.0) return population[i];
      }
      return population.back();
    };
    std::vector<Genome> next;
    next.push_back(population[best]);
    while (static_cast<int>(next.size()) < cfg.population_size) {
      const Genome& a = pick_parent();
      const Genome& b = pick_parent();
      Genome child(n_slots);
      for (std::size_t s = 0; s < n_slots; ++s) child[s] = uniform01(rng) < 0.5 ? a[s] : b[s];
      while (count_subs(child) > budget) {
        std::vector<std::size_t> subs;
        for (std::size_t s = 0; s < n_slots; ++s)
          if (child[s] >= 0) subs.push_back(s);
        child[subs[uniform_index(rng, subs.size())]] = -1;
      }
      mutate(child);
      next.push_back(std::move(child));
    }
    population = std::move(next);
  }
  const auto words = render(best_genome);
  res.adversarial_text = join_words(words);
  res.perturbed_positions = diff_positions(original, words);
  return res;
}

AttackFn make_char_attack(CharAttackConfig cfg) {
  cfg.validate();
  return [cfg](const TargetModel& model, const Example& ex, std::uint64_t seed) {
    CharAttackConfig c = cfg;
    c.seed = seed;
    return char_attack(model, ex, c);
  };
}

AttackFn make_word_attack(SynonymTable synonyms, GAConfig cfg) {
  cfg.validate();
  return [syn = std::move(synonyms), cfg](const TargetModel& model, const Example& ex, std::uint64_t seed) {
    GAConfig c = cfg;
    c.seed = seed;
    return word_attack_ga(model, ex, syn, c);
  };
}

// ---------------------------------------------------------------------------
// Detection dataset

std::vector<AttackResult> attack_corpus(const TargetModel& model, const Corpus& test, const AttackFn& attack,
                                        std::uint64_t seed, int threads, std::size_t stop_after_successes) {
  std::vector<const Example*> eligible;
  for (const auto& ex : test.examples)
    if (model.predict(ex.text).label == ex.label) eligible.push_back(&ex);

  const std::size_t n_threads = static_cast<std::size_t>(std::max(1, threads));
  const std::size_t chunk = stop_after_successes > 0 ? std::max<std::size_t>(16, 4 * n_threads) : eligible.size();
  std::vector<AttackResult> out;
  std::size_t successes = 0;
  for (std::size_t start = 0; start < eligible.size(); start += std::max<std::size_t>(chunk, 1)) {
    const std::size_t end = std::min(eligible.size(), start + std::max<std::size_t>(chunk, 1));
    std::vector<AttackResult> part(end - start);
    std::atomic<std::size_t> next{start};
    auto worker = [&] {
      for (std::size_t i = next++; i < end; i = next++) {
        const auto* ex = eligible[i];
        part[i - start] = attack(model, *ex, derive_seed(seed, "attack", static_cast<std::uint64_t>(ex->id)));
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& r : part) {
      out.push_back(std::move(r));
      if (out.back().success) ++successes;
      if (stop_after_successes > 0 && successes >= stop_after_successes) return out;
    }
  }
  return out;
}

DetectionDataset assemble_detection_dataset(const std::vector<AttackResult>& results, std::size_t target_size,
                                            std::uint64_t seed) {
  DetectionDataset ds;
  ds.requested_pairs = target_size / 2;
  std::vector<const AttackResult*> pairs;
  for (const auto& r : results) {
    if (!r.success) continue;
    if (r.original_prediction != r.original.label) continue;
    if (pairs.size() >= ds.requested_pairs) break;
    pairs.push_back(&r);
  }
  ds.undersized = pairs.size() < ds.requested_pairs;
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "detection-split"));
  shuffle_range(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(pairs.size()) + 0.5));
  std::vector<bool> pair_train(pairs.size(), false);
  for (std::size_t k = 0; k < n_train; ++k) pair_train[order[k]] = true;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& r = *pairs[p];
    ds.records.push_back({r.original.text, 1, r.original.id, pair_train[p]});
    ds.records.push_back({r.adversarial_text, 0, r.original.id, pair_train[p]});
  }
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    (ds.records[i].is_train ? ds.train_indices : ds.test_indices).push_back(i);
  return ds;
}

DetectionDataset build_detection_dataset(const TargetModel& model, const Corpus& test, const AttackFn& attack,
                                         std::size_t target_size, std::uint64_t seed, int threads) {
  const auto results = attack_corpus(model, test, attack, seed, threads, std::max<std::size_t>(target_size / 2, 1));
  return assemble_detection_dataset(results, target_size, seed);
}

void save_detection_dataset(const DetectionDataset& ds, const std::string& path, const std::string& meta_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write detection dataset: " + path);
  if (!meta_json.empty()) out << json{{"__meta__", json::parse(meta_json)}}.dump() << '\n';
  for (const auto& r : ds.records) {
    json j;
    j["text"] = r.text;
    j["detect_label"] = r.detect_label;
    j["source_id"] = r.source_id;
    j["split"] = r.is_train ? "train" : "test";
    out << j.dump() << '\n';
  }
}

DetectionDataset load_detection_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open detection dataset: " + path);
  DetectionDataset ds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError("detection dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1 && j.is_object() && j.contains("__meta__")) continue;
    const auto where = "detection dataset line " + std::to_string(line_no);
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string() || !j.contains("detect_label") ||
        !j["detect_label"].is_number_integer() || !j.contains("source_id") || !j["source_id"].is_number_integer() ||
        !j.contains("split") || !j["split"].is_string())
      throw ConfigError(where + ": schema violation");
    DetectionRecord r;
    r.text = j["text"].get<std::string>();
    r.detect_label = j["detect_label"].get<int>();
    if (r.detect_label != 0 && r.detect_label != 1) throw ConfigError(where + ": detect_label must be 0 or 1");
    r.source_id = j["source_id"].get<std::int64_t>();
    const auto split = j["split"].get<std::string>();
    if (split != "train" && split != "test") throw ConfigError(where + ": split must be train or test");
    r.is_train = split == "train";
    ds.records.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    (ds.records[i].is_train ? ds.train_indices : ds.test_indices).push_back(i);
  ds.requested_pairs = ds.records.size() / 2;
  return ds;
}

}  // namespace nnif
