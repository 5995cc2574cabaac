#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace nnif {

struct Example {
  std::int64_t id = 0;
  std::string text;
  int label = 0;
};

struct Corpus {
  std::vector<Example> examples;
  int n_classes = 0;
  /// Optional class names; when non-empty, index i names class i.
  std::vector<std::string> label_names;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  const Example& by_id(std::int64_t id) const;
};

/// word -> ordered candidate substitutes. No word maps to itself.
using SynonymTable = std::map<std::string, std::vector<std::string>>;

class Vocab {
public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab();
  /// Builds from an explicit token list (specials are prepended).
  explicit Vocab(const std::vector<std::string>& tokens);

  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  /// Stable content hash used to pair checkpoints with corpora.
  std::uint64_t hash() const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TokenSeq {
  std::vector<int> ids;  // length max_len, pad-filled at the tail
  int true_len = 0;
};

/// Lowercase, split on (unicode) whitespace, strip ASCII punctuation from token
/// edges. Tokens that become empty are dropped.
std::vector<std::string> tokenize(std::string_view text);

/// Whitespace words of the raw text, as the attacks see them.
std::vector<std::string> split_words(std::string_view text);
std::string join_words(const std::vector<std::string>& words);

/// Normalized form of a single word (lowercased, edge punctuation stripped).
std::string normalize_word(std::string_view word);

Corpus load_jsonl(const std::string& path);
void save_jsonl(const Corpus& corpus, const std::string& path);
/// Parses the JSONL payload directly (used by load_jsonl).
Corpus parse_jsonl(std::string_view content);

Vocab build_vocab(const Corpus& corpus, int min_freq = 1);

inline constexpr int kDefaultMaxLen = 64;

TokenSeq encode(std::string_view text, const Vocab& vocab, int max_len = kDefaultMaxLen);
std::vector<std::string> decode(const TokenSeq& seq, const Vocab& vocab);

struct SyntheticSpec {
  std::vector<std::string> class_names;
  /// Disjoint keyword pool per class.
  std::vector<std::vector<std::string>> class_keywords;
  std::vector<std::string> filler;
  /// keyword -> synonyms (all must be filler or otherwise class-neutral words)
  SynonymTable synonyms;
  int words_per_example = 10;
  int keywords_per_example = 2;
  /// Probability of injecting one keyword of a different class.
  double cross_keyword_prob = 0.25;

  /// Sentiment-style two-class default.
  static SyntheticSpec sentiment();
};

std::pair<Corpus, SynonymTable> generate_synthetic(std::uint64_t seed, int n_per_class,
                                                   const SyntheticSpec& spec);

struct Splits {
  Corpus train;
  Corpus val;
  Corpus test;
};

struct SplitFractions {
  double train = 0.8;
  double val = 0.0;
  double test = 0.2;
};

/// Label-stratified, deterministic partition.
Splits split(const Corpus& corpus, SplitFractions fractions, std::uint64_t seed);

SynonymTable load_synonyms_tsv(const std::string& path);
void save_synonyms_tsv(const SynonymTable& table, const std::string& path);

}  // namespace nnif
