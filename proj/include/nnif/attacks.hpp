#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nnif/corpus.hpp"
#include "nnif/model.hpp"

namespace nnif {

/// char -> neighbouring keys on the keyboard.
using KeyboardMap = std::map<char, std::string>;

/// QWERTY adjacency (same rows/columns as data/keyboard_qwerty.json).
KeyboardMap qwerty_keyboard();
KeyboardMap load_keyboard_map(const std::string& path);
void save_keyboard_map(const KeyboardMap& map, const std::string& path);

enum class CharOp { swap, drop, add, keyboard };

struct CharAttackConfig {
  double max_word_fraction = 0.5;
  std::vector<CharOp> ops{CharOp::swap, CharOp::drop, CharOp::add, CharOp::keyboard};
  KeyboardMap keyboard = qwerty_keyboard();
  int max_attempts = 60;
  /// Keep a perturbation only if it flips the label or lowers the
  /// original-class probability; otherwise every sampled edit is kept.
  bool greedy = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GAConfig {
  int population_size = 20;
  int generations = 10;
  int top_k_synonyms = 8;
  double max_perturb_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AttackResult {
  Example original;
  std::string adversarial_text;
  bool success = false;
  int original_prediction = 0;
  int adversarial_prediction = 0;
  long n_queries = 0;
  /// Word positions (whitespace words) that differ from the original.
  std::vector<int> perturbed_positions;
  /// Best fitness per generation (word attack only).
  std::vector<double> best_fitness;
};

/// Applies one character operation to `word` in place; false when the
/// operation does not apply (e.g. swap/drop on a word without internal pair).
bool apply_char_op(std::string& word, CharOp op, const KeyboardMap& keyboard, Rng& rng);

AttackResult char_attack(const TargetModel& model, const Example& example, const CharAttackConfig& cfg);

AttackResult word_attack_ga(const TargetModel& model, const Example& example, const SynonymTable& synonyms,
                            const GAConfig& cfg);

/// Any attack; the seed argument is derived per example by the caller.
using AttackFn = std::function<AttackResult(const TargetModel&, const Example&, std::uint64_t seed)>;

AttackFn make_char_attack(CharAttackConfig cfg);
AttackFn make_word_attack(SynonymTable synonyms, GAConfig cfg);

struct DetectionRecord {
  std::string text;
  int detect_label = 1;  // 1 = original, 0 = adversarial
  std::int64_t source_id = 0;
  bool is_train = true;
};

struct DetectionDataset {
  std::vector<DetectionRecord> records;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  /// Fewer successful attacks than target_size / 2.
  bool undersized = false;
  std::size_t requested_pairs = 0;
};

/// Attacks every correctly classified example of `test`, in id order.
/// Per-example seeds derive from (seed, example id); `threads` caps workers.
std::vector<AttackResult> attack_corpus(const TargetModel& model, const Corpus& test, const AttackFn& attack,
                                        std::uint64_t seed, int threads = 1, std::size_t stop_after_successes = 0);

/// Pairs each successful attack with its original; 80-20 pair-atomic split.
DetectionDataset assemble_detection_dataset(const std::vector<AttackResult>& results, std::size_t target_size,
                                            std::uint64_t seed);

DetectionDataset build_detection_dataset(const TargetModel& model, const Corpus& test, const AttackFn& attack,
                                         std::size_t target_size, std::uint64_t seed, int threads = 1);

/// One JSON object per line; an optional first line {"__meta__": {...}}
/// carries provenance and is skipped on load.
void save_detection_dataset(const DetectionDataset& ds, const std::string& path, const std::string& meta_json = "");
DetectionDataset load_detection_dataset(const std::string& path);

}  // namespace nnif
