#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnif/analysis.hpp"
#include "nnif/common.hpp"

namespace testing {

inline nnif::ModelConfig mini_config(std::vector<int> hidden = {4, 4}, int n_classes = 3) {
  nnif::ModelConfig c;
  c.vocab_size = 20;
  c.embed_dim = 4;
  c.hidden_dims = std::move(hidden);
  c.n_classes = n_classes;
  c.max_len = 8;
  c.seed = 11;
  return c;
}

// init_model leaves biases at zero; shake everything so ReLUs sit in both regimes
inline nnif::ModelParams random_params(const nnif::ModelConfig& c, std::uint64_t seed, double scale = 0.5) {
  auto p = nnif::init_model(c);
  nnif::Rng rng(seed);
  for (Eigen::Index i = 0; i < p.flat.size(); ++i) p.flat[i] += scale * nnif::standard_normal(rng);
  p.embedding().row(0).setZero();
  return p;
}

inline nnif::EncodedExample random_example(const nnif::ModelConfig& c, nnif::Rng& rng, std::int64_t id) {
  nnif::EncodedExample ex;
  ex.id = id;
  const int len = 1 + static_cast<int>(nnif::uniform_index(rng, static_cast<std::size_t>(c.max_len)));
  ex.tokens.ids.assign(static_cast<std::size_t>(c.max_len), 0);
  for (int t = 0; t < len; ++t)
    ex.tokens.ids[static_cast<std::size_t>(t)] = 1 + static_cast<int>(nnif::uniform_index(rng, static_cast<std::size_t>(c.vocab_size - 1)));
  ex.tokens.true_len = len;
  ex.label = static_cast<int>(nnif::uniform_index(rng, static_cast<std::size_t>(c.n_classes)));
  return ex;
}

inline std::vector<nnif::EncodedExample> random_examples(const nnif::ModelConfig& c, int n, std::uint64_t seed) {
  nnif::Rng rng(seed);
  std::vector<nnif::EncodedExample> out;
  for (int i = 0; i < n; ++i) out.push_back(random_example(c, rng, i));
  return out;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t seed) {
  nnif::Rng rng(seed);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nnif::standard_normal(rng);
  return v;
}

inline double mean_loss(const nnif::ModelParams& p, const std::vector<nnif::EncodedExample>& data) {
  double s = 0.0;
  for (const auto& ex : data) s += nnif::loss(p, ex);
  return s / static_cast<double>(data.size());
}

inline Eigen::VectorXd mean_grad(const nnif::ModelParams& p, const std::vector<nnif::EncodedExample>& data) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p.dim());
  for (const auto& ex : data) g += nnif::grad(p, ex);
  return g / static_cast<double>(data.size());
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_rel_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
  return worst;
}

/// Average ranks (ties get the mean rank).
inline std::vector<double> ranks_of(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks_of(a), rb = ranks_of(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  const Eigen::Map<const Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  return xc.dot(yc) / std::sqrt(xc.squaredNorm() * yc.squaredNorm());
}

/// Small trained sentiment model shared by the slower tests.
struct SmallWorld {
  nnif::Splits splits;
  nnif::SynonymTable synonyms;
  nnif::TargetModel model;
  std::vector<nnif::EncodedExample> train;
  std::vector<nnif::EncodedExample> test;
};

inline SmallWorld make_small_world(int n_per_class = 200, std::uint64_t seed = 5) {
  auto [corpus, syn] = nnif::generate_synthetic(seed, n_per_class, nnif::SyntheticSpec::sentiment());
  auto splits = nnif::split(corpus, {0.8, 0.0, 0.2}, seed);
  auto vocab = nnif::build_vocab(splits.train);
  nnif::ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.embed_dim = 16;
  mc.hidden_dims = {16, 16};
  mc.seed = seed;
  auto train = nnif::encode_corpus(splits.train, vocab, mc.max_len);
  auto test = nnif::encode_corpus(splits.test, vocab, mc.max_len);
  nnif::TrainConfig tc;
  tc.seed = seed;
  tc.epochs = 5;
  auto res = nnif::train(nnif::init_model(mc), train, {}, tc);
  return {std::move(splits), std::move(syn), nnif::TargetModel{std::move(res.params), std::move(vocab)},
          std::move(train), std::move(test)};
}

inline const SmallWorld& small_world() {
  static const SmallWorld w = make_small_world();
  return w;
}

/// Token-diff inspection of one attack result. Returns an empty string when
/// every contract holds, otherwise a description of the first violation.
inline std::string check_char_contract(const nnif::TargetModel& model, const nnif::AttackResult& r,
                                       double max_word_fraction) {
  const auto a = nnif::split_words(r.original.text), b = nnif::split_words(r.adversarial_text);
  if (a.size() != b.size()) return "word count changed";
  std::size_t changed = 0;
  for (std::size_t i = 0; i < a.size(); ++i) changed += a[i] != b[i];
  const auto budget = static_cast<std::size_t>(std::ceil(max_word_fraction * static_cast<double>(a.size()) - 1e-12));
  if (changed > budget) return "budget exceeded";
  if (changed != r.perturbed_positions.size()) return "perturbed_positions disagree with the diff";
  if (r.success) {
    if (changed == 0) return "success without perturbation";
    if (model.predict(r.adversarial_text).label == r.original_prediction) return "recorded flip does not hold";
    if (model.predict(r.original.text).label != r.original_prediction) return "original prediction differs";
  }
  return {};
}

inline std::string check_word_contract(const nnif::TargetModel& model, const nnif::AttackResult& r,
                                       const nnif::SynonymTable& synonyms) {
  const auto a = nnif::split_words(r.original.text), b = nnif::split_words(r.adversarial_text);
  if (a.size() != b.size()) return "word count changed";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    const auto it = synonyms.find(nnif::normalize_word(a[i]));
    if (it == synonyms.end()) return "substituted a word without synonyms: " + a[i];
    const auto sub = nnif::normalize_word(b[i]);
    if (std::find(it->second.begin(), it->second.end(), sub) == it->second.end())
      return "substitute is not a listed synonym: " + a[i] + " -> " + b[i];
  }
  if (r.success && model.predict(r.adversarial_text).label == r.original_prediction) return "recorded flip does not hold";
  return {};
}

/// Char-attack detection dataset over the small world's test split.
inline const nnif::DetectionDataset& small_detection() {
  static const nnif::DetectionDataset ds = [] {
    const auto& w = small_world();
    return nnif::build_detection_dataset(w.model, w.splits.test, nnif::make_char_attack({}), 60, 21, 2);
  }();
  return ds;
}

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("nnif_test_" + name)).string();
}

}  // namespace testing
