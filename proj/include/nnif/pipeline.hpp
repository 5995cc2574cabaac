#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnif/analysis.hpp"

namespace nnif {

/// Resolved experiment configuration. `tree` holds every field with its
/// default filled in; the hash covers everything except output_dir and
/// threads (neither changes any numerical output).
struct ExperimentConfig {
  nlohmann::json tree;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir;

  std::string corpus_path;    // empty -> synthetic
  std::string synonyms_path;  // optional, word attack on a file corpus
  int n_per_class = 1500;
  SplitFractions fractions;
  int min_freq = 1;
  ModelConfig model;          // vocab_size filled from data
  TrainConfig train;
  std::string attack = "char";
  CharAttackConfig char_attack;
  GAConfig word_attack;
  std::size_t detection_size = 400;
  std::vector<std::string> detectors;
  NnifConfig nnif;
  MahalConfig mahal;
  LidConfig lid;
  bool run_m_sweep = true;
  std::vector<int> m_values;
  bool run_scenes = true;
  int n_pairs = 50;
  SceneConfig scene;
  SvmConfig svm;

  std::string hash() const;
  /// {"config_hash": ..., "seed": ...}
  nlohmann::json provenance() const;
  std::string provenance_line() const;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> output_dir;
};

/// Unknown keys and out-of-range values raise ConfigError. Relative paths
/// resolve against base_dir.
ExperimentConfig parse_config(const nlohmann::json& j, const std::string& base_dir = ".",
                              const ConfigOverrides& overrides = {});
ExperimentConfig load_config(const std::string& path, const ConfigOverrides& overrides = {});
nlohmann::json default_config_tree();

/// Corpus, splits, vocabulary and encodings, all derived from the config.
struct Workspace {
  Splits splits;
  SynonymTable synonyms;
  Vocab vocab;
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> test;
};

Workspace prepare_workspace(const ExperimentConfig& cfg);

/// Loads a checkpoint and checks its vocabulary against the workspace.
TargetModel load_matching_checkpoint(const std::string& path, const Workspace& ws);

std::string default_checkpoint_path(const ExperimentConfig& cfg);
std::string default_dataset_path(const ExperimentConfig& cfg);

nlohmann::json cmd_train(const ExperimentConfig& cfg);
nlohmann::json cmd_attack(const ExperimentConfig& cfg, const std::string& checkpoint);
nlohmann::json cmd_detect(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& dataset);
nlohmann::json cmd_analyze(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& dataset);
nlohmann::json cmd_report(const ExperimentConfig& cfg);

/// Originals paired with their adversarial twins, in source-id order.
struct DetectionPair {
  std::int64_t source_id = 0;
  std::string original;
  std::string adversarial;
};
std::vector<DetectionPair> detection_pairs(const DetectionDataset& ds);

}  // namespace nnif
