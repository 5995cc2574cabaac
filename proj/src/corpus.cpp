#include "nnif/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nnif/common.hpp"

namespace nnif {

using json = nlohmann::json;

namespace {

// Length in bytes of a unicode whitespace sequence starting at text[i], or 0.
std::size_t whitespace_len(std::string_view text, std::size_t i) {
  const auto c = static_cast<unsigned char>(text[i]);
  if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') return 1;
  if (c < 0x80) return 0;
  auto byte = [&](std::size_t k) -> unsigned {
    return i + k < text.size() ? static_cast<unsigned char>(text[i + k]) : 0u;
  };
  if (c == 0xC2 && (byte(1) == 0x85 || byte(1) == 0xA0)) return 2;
  if (c == 0xE1 && byte(1) == 0x9A && byte(2) == 0x80) return 3;  // U+1680
  if (c == 0xE2 && byte(1) == 0x80) {
    const unsigned b2 = byte(2);
    if ((b2 >= 0x80 && b2 <= 0x8A) || b2 == 0xA8 || b2 == 0xA9 || b2 == 0xAF) return 3;
  }
  if (c == 0xE2 && byte(1) == 0x81 && byte(2) == 0x9F) return 3;  // U+205F
  if (c == 0xE3 && byte(1) == 0x80 && byte(2) == 0x80) return 3;  // U+3000
  return 0;
}

bool is_edge_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

std::string trim_copy(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const Example& Corpus::by_id(std::int64_t id) const {
  for (const auto& ex : examples)
    if (ex.id == id) return ex;
  throw std::out_of_range("no example with id " + std::to_string(id));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t ws = whitespace_len(text, i);
    if (ws > 0) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
      i += ws;
    } else {
      current.push_back(text[i]);
      ++i;
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::string normalize_word(std::string_view word) {
  std::size_t b = 0;
  std::size_t e = word.size();
  while (b < e && is_edge_punct(word[b])) ++b;
  while (e > b && is_edge_punct(word[e - 1])) --e;
  std::string out(word.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  for (const auto& w : split_words(text)) {
    auto t = normalize_word(w);
    if (!t.empty()) tokens.push_back(std::move(t));
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// JSONL

Corpus parse_jsonl(std::string_view content) {
  Corpus corpus;
  std::map<std::string, int> label_map;
  int max_label = -1;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool seen_record = false;
  while (pos <= content.size()) {
    std::size_t nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    const std::string line = trim_copy(content.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) {
      if (nl == content.size()) break;
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object())
      throw ConfigError("line " + std::to_string(line_no) + ": expected a JSON object");
    if (obj.contains("__labels__")) {
      if (seen_record || !label_map.empty())
        throw ConfigError("line " + std::to_string(line_no) +
                          ": label header must be the first record");
      const auto& labels = obj["__labels__"];
      if (!labels.is_object())
        throw ConfigError("line " + std::to_string(line_no) + ": __labels__ must be an object");
      for (const auto& [name, idx] : labels.items()) {
        if (!idx.is_number_integer() || idx.get<long long>() < 0)
          throw ConfigError("line " + std::to_string(line_no) + ": label index for '" + name +
                            "' must be a non-negative integer");
        label_map[name] = idx.get<int>();
      }
      continue;
    }
    seen_record = true;
    if (!obj.contains("text") || !obj["text"].is_string())
      throw ConfigError("line " + std::to_string(line_no) + ": missing string field \"text\"");
    if (!obj.contains("label"))
      throw ConfigError("line " + std::to_string(line_no) + ": missing field \"label\"");
    const auto& lab = obj["label"];
    int label = 0;
    if (lab.is_number_integer()) {
      if (lab.get<long long>() < 0)
        throw ConfigError("line " + std::to_string(line_no) + ": negative label");
      label = lab.get<int>();
    } else if (lab.is_string()) {
      auto it = label_map.find(lab.get<std::string>());
      if (it == label_map.end())
        throw ConfigError("line " + std::to_string(line_no) + ": unknown label name '" +
                          lab.get<std::string>() + "'");
      label = it->second;
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": unsupported label type " +
                        std::string(lab.type_name()));
    }
    std::string text = obj["text"].get<std::string>();
    if (trim_copy(text).empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty text");
    corpus.examples.push_back(
        Example{static_cast<std::int64_t>(corpus.examples.size()), std::move(text), label});
    max_label = std::max(max_label, label);
    if (nl == content.size()) break;
  }
  if (corpus.examples.empty()) throw ConfigError("empty corpus");
  int n_classes = max_label + 1;
  for (const auto& [name, idx] : label_map) n_classes = std::max(n_classes, idx + 1);
  corpus.n_classes = n_classes;
  if (!label_map.empty()) {
    corpus.label_names.assign(static_cast<std::size_t>(n_classes), std::string());
    for (const auto& [name, idx] : label_map) corpus.label_names[static_cast<std::size_t>(idx)] = name;
  }
  return corpus;
}

Corpus load_jsonl(const std::string& path) { return parse_jsonl(read_file(path)); }

void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  const bool named = !corpus.label_names.empty();
  if (named) {
    json header;
    header["__labels__"] = json::object();
    for (std::size_t i = 0; i < corpus.label_names.size(); ++i)
      header["__labels__"][corpus.label_names[i]] = static_cast<int>(i);
    out << header.dump() << '\n';
  }
  for (const auto& ex : corpus.examples) {
    json rec;
    rec["text"] = ex.text;
    if (named)
      rec["label"] = corpus.label_names.at(static_cast<std::size_t>(ex.label));
    else
      rec["label"] = ex.label;
    out << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& tokens) {
  tokens_ = {"<pad>", "<unk>"};
  index_["<pad>"] = kPad;
  index_["<unk>"] = kUnk;
  for (const auto& t : tokens) {
    if (index_.count(t)) throw std::invalid_argument("duplicate vocab token: " + t);
    index_[t] = static_cast<int>(tokens_.size());
    tokens_.push_back(t);
  }
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

std::uint64_t Vocab::hash() const {
  std::uint64_t h = fnv1a64("vocab");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\0", 1), h);
  }
  return h;
}

Vocab build_vocab(const Corpus& corpus, int min_freq) {
  if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
  std::map<std::string, int> freq;
  for (const auto& ex : corpus.examples)
    for (auto& t : tokenize(ex.text)) ++freq[t];
  std::vector<std::pair<std::string, int>> entries;
  for (auto& [t, f] : freq)
    if (f >= min_freq && t != "<pad>" && t != "<unk>") entries.emplace_back(t, f);
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& e : entries) tokens.push_back(e.first);
  return Vocab(tokens);
}

TokenSeq encode(std::string_view text, const Vocab& vocab, int max_len) {
  if (max_len < 1) throw std::invalid_argument("encode: max_len must be >= 1");
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw std::invalid_argument("encode: text has no tokens");
  TokenSeq seq;
  seq.ids.assign(static_cast<std::size_t>(max_len), Vocab::kPad);
  const int n = std::min<int>(max_len, static_cast<int>(tokens.size()));
  for (int i = 0; i < n; ++i) seq.ids[static_cast<std::size_t>(i)] = vocab.id(tokens[static_cast<std::size_t>(i)]);
  seq.true_len = n;
  return seq;
}

std::vector<std::string> decode(const TokenSeq& seq, const Vocab& vocab) {
  std::vector<std::string> out;
  for (int i = 0; i < seq.true_len; ++i) out.push_back(vocab.token(seq.ids[static_cast<std::size_t>(i)]));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

SyntheticSpec SyntheticSpec::sentiment() {
  SyntheticSpec s;
  s.class_names = {"neg", "pos"};
  s.class_keywords = {
      {"bad", "awful", "terrible", "boring", "dull", "poor", "weak", "tedious", "clumsy", "painful"},
      {"good", "great", "excellent", "wonderful", "superb", "brilliant", "enjoyable", "delightful",
       "charming", "moving"}};
  s.filler = {"the",    "a",       "movie",    "film",   "story",  "plot",   "actor",  "scene",
              "this",   "was",     "it",       "and",    "of",     "with",   "an",     "really",
              "quite",  "very",    "director", "camera", "music",  "ending", "script", "character",
              "role",   "cast",    "minutes",  "screen", "we",     "saw",    "at",     "night",
              "its",    "overall", "visual",   "sound",  "fine",   "decent", "solid",  "nice",
              "pleasant", "fair",  "mediocre", "lame",   "bland",  "flat",   "average", "plain"};
  s.synonyms = {
      {"bad", {"mediocre", "lame", "poorish"}},
      {"awful", {"lame", "bland", "mediocre"}},
      {"terrible", {"mediocre", "flat", "lame"}},
      {"boring", {"bland", "flat", "plain"}},
      {"dull", {"flat", "plain", "bland"}},
      {"poor", {"average", "mediocre", "fair"}},
      {"weak", {"flat", "average", "plain"}},
      {"tedious", {"plain", "bland", "average"}},
      {"clumsy", {"average", "plain", "fair"}},
      {"painful", {"lame", "average", "flat"}},
      {"good", {"fine", "decent", "nice"}},
      {"great", {"fine", "nice", "solid"}},
      {"excellent", {"solid", "decent", "fine"}},
      {"wonderful", {"pleasant", "nice", "fine"}},
      {"superb", {"solid", "decent", "fair"}},
      {"brilliant", {"decent", "solid", "nice"}},
      {"enjoyable", {"pleasant", "fine", "fair"}},
      {"delightful", {"pleasant", "nice", "decent"}},
      {"charming", {"nice", "pleasant", "fair"}},
      {"moving", {"decent", "fair", "solid"}},
  };
  return s;
}

std::pair<Corpus, SynonymTable> generate_synthetic(std::uint64_t seed, int n_per_class,
                                                   const SyntheticSpec& spec) {
  const std::size_t n_classes = spec.class_keywords.size();
  if (n_classes < 2) throw ConfigError("synthetic spec needs at least 2 classes");
  if (n_per_class < 1) throw ConfigError("synthetic corpus: n_per_class must be >= 1");
  if (spec.filler.empty()) throw ConfigError("synthetic spec: empty filler pool");
  if (spec.keywords_per_example < 1 || spec.words_per_example < spec.keywords_per_example + 1)
    throw ConfigError("synthetic spec: need words_per_example > keywords_per_example >= 1");
  std::set<std::string> seen;
  for (const auto& pool : spec.class_keywords) {
    if (pool.empty()) throw ConfigError("synthetic spec: empty keyword pool");
    for (const auto& w : pool)
      if (!seen.insert(w).second) throw ConfigError("synthetic spec: keyword pools overlap at '" + w + "'");
  }
  for (const auto& w : spec.filler)
    if (seen.count(w)) throw ConfigError("synthetic spec: filler word '" + w + "' is also a keyword");

  SynonymTable table;
  for (const auto& [word, syns] : spec.synonyms) {
    std::vector<std::string> clean;
    for (const auto& s : syns)
      if (s != word && std::find(clean.begin(), clean.end(), s) == clean.end()) clean.push_back(s);
    if (!clean.empty()) table[word] = std::move(clean);
  }

  Rng rng(derive_seed(seed, "synthetic"));
  Corpus corpus;
  corpus.n_classes = static_cast<int>(n_classes);
  corpus.label_names = spec.class_names;
  if (corpus.label_names.size() != n_classes) corpus.label_names.clear();
  for (int i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      std::vector<std::string> words;
      const auto& own = spec.class_keywords[c];
      for (int k = 0; k < spec.keywords_per_example; ++k)
        words.push_back(own[uniform_index(rng, own.size())]);
      if (uniform01(rng) < spec.cross_keyword_prob) {
        std::size_t other = uniform_index(rng, n_classes - 1);
        if (other >= c) ++other;
        const auto& pool = spec.class_keywords[other];
        words.push_back(pool[uniform_index(rng, pool.size())]);
      }
      while (static_cast<int>(words.size()) < spec.words_per_example)
        words.push_back(spec.filler[uniform_index(rng, spec.filler.size())]);
      shuffle_range(words.begin(), words.end(), rng);
      words.back() += ".";
      corpus.examples.push_back(Example{static_cast<std::int64_t>(corpus.examples.size()),
                                        join_words(words), static_cast<int>(c)});
    }
  }
  return {std::move(corpus), std::move(table)};
}

// ---------------------------------------------------------------------------
// Splits

Splits split(const Corpus& corpus, SplitFractions f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must be non-negative and sum to 1");
  const double fr[3] = {f.train, f.val, f.test};
  const int active = (f.train > 0) + (f.val > 0) + (f.test > 0);

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(corpus.n_classes, 1)));
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    const int lab = corpus.examples[i].label;
    if (lab < 0 || lab >= corpus.n_classes) throw ConfigError("example label out of range");
    by_class[static_cast<std::size_t>(lab)].push_back(i);
  }
  std::vector<int> assignment(corpus.examples.size(), 0);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (static_cast<int>(idx.size()) < active)
      throw ConfigError("class " + std::to_string(c) + " has fewer examples than splits");
    Rng rng(derive_seed(seed, "split", c));
    shuffle_range(idx.begin(), idx.end(), rng);
    const double n = static_cast<double>(idx.size());
    std::size_t counts[3];
    double rem[3];
    std::size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      counts[s] = static_cast<std::size_t>(std::floor(fr[s] * n));
      rem[s] = fr[s] * n - static_cast<double>(counts[s]);
      assigned += counts[s];
    }
    while (assigned < idx.size()) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (rem[s] > rem[best]) best = s;
      ++counts[best];
      rem[best] = -1.0;
      ++assigned;
    }
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s)
      for (std::size_t j = 0; j < counts[s]; ++j) assignment[idx[k++]] = s;
  }
  Splits out;
  Corpus* parts[3] = {&out.train, &out.val, &out.test};
  for (auto* p : parts) {
    p->n_classes = corpus.n_classes;
    p->label_names = corpus.label_names;
  }
  for (std::size_t i = 0; i < corpus.examples.size(); ++i)
    parts[assignment[i]]->examples.push_back(corpus.examples[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synonym TSV

SynonymTable load_synonyms_tsv(const std::string& path) {
  const std::string content = read_file(path);
  std::istringstream in(content);
  SynonymTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim_copy(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ConfigError("synonyms line " + std::to_string(line_no) + ": missing TAB");
    const std::string word = trim_copy(line.substr(0, tab));
    std::vector<std::string> syns;
    std::istringstream list(line.substr(tab + 1));
    std::string s;
    while (std::getline(list, s, ',')) {
      s = trim_copy(s);
      if (!s.empty() && s != word && std::find(syns.begin(), syns.end(), s) == syns.end())
        syns.push_back(s);
    }
    if (!syns.empty()) table[word] = std::move(syns);
  }
  return table;
}

void save_synonyms_tsv(const SynonymTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  for (const auto& [word, syns] : table) {
    out << word << '\t';
    for (std::size_t i = 0; i < syns.size(); ++i) out << (i ? "," : "") << syns[i];
    out << '\n';
  }
}

}  // namespace nnif
