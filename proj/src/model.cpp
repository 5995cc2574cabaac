#include "nnif/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace nnif {

using Eigen::VectorXd;
using json = nlohmann::json;

std::string_view layer_name(Layer layer) {
  switch (layer) {
    case Layer::pooled: return "pooled";
    case Layer::h1: return "h1";
    case Layer::h2: return "h2";
    case Layer::logits: return "logits";
  }
  return "?";
}

Layer parse_layer(std::string_view name) {
  if (name == "pooled") return Layer::pooled;
  if (name == "h1") return Layer::h1;
  if (name == "h2") return Layer::h2;
  if (name == "logits") return Layer::logits;
  throw ConfigError("unknown layer '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model: vocab_size must cover the special tokens");
  if (embed_dim < 1) throw ConfigError("model: embed_dim must be >= 1");
  if (hidden_dims.size() > 2) throw ConfigError("model: at most two hidden layers");
  for (int h : hidden_dims)
    if (h < 1) throw ConfigError("model: hidden dims must be >= 1");
  if (n_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model: dropout_rate must be in [0, 1)");
  if (max_len < 1) throw ConfigError("model: max_len must be >= 1");
}

std::vector<Layer> available_layers(const ModelConfig& config) {
  std::vector<Layer> out{Layer::pooled};
  if (!config.hidden_dims.empty()) out.push_back(Layer::h1);
  if (config.hidden_dims.size() > 1) out.push_back(Layer::h2);
  out.push_back(Layer::logits);
  return out;
}

Layer penultimate_layer(const ModelConfig& config) {
  switch (config.hidden_dims.size()) {
    case 0: return Layer::pooled;
    case 1: return Layer::h1;
    default: return Layer::h2;
  }
}

ParamLayout::ParamLayout(const ModelConfig& config)
    : vocab_(config.vocab_size), embed_(config.embed_dim) {
  dims_.push_back(config.embed_dim);
  for (int h : config.hidden_dims) dims_.push_back(h);
  dims_.push_back(config.n_classes);
  std::size_t off = embedding_size();
  for (std::size_t k = 0; k + 1 < dims_.size(); ++k) {
    w_offset_.push_back(off);
    off += static_cast<std::size_t>(dims_[k]) * static_cast<std::size_t>(dims_[k + 1]);
    b_offset_.push_back(off);
    off += static_cast<std::size_t>(dims_[k + 1]);
  }
  total_ = off;
}

const VectorXd& LayerActivations::layer(Layer which) const {
  switch (which) {
    case Layer::pooled: return pooled;
    case Layer::h1:
      if (hidden.empty()) throw ConfigError("model has no h1 layer");
      return hidden[0];
    case Layer::h2:
      if (hidden.size() < 2) throw ConfigError("model has no h2 layer");
      return hidden[1];
    case Layer::logits: return logits;
  }
  throw ConfigError("bad layer");
}

std::vector<EncodedExample> encode_corpus(const Corpus& corpus, const Vocab& vocab, int max_len) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus.examples) out.push_back({ex.id, encode(ex.text, vocab, max_len), ex.label});
  return out;
}

ModelParams init_model(const ModelConfig& config) {
  config.validate();
  ModelParams p(config);
  Rng rng(derive_seed(config.seed, "init"));
  auto E = p.embedding();
  for (Eigen::Index i = 0; i < E.rows(); ++i)
    for (Eigen::Index j = 0; j < E.cols(); ++j) E(i, j) = -0.1 + 0.2 * uniform01(rng);
  E.row(Vocab::kPad).setZero();
  for (int k = 0; k < p.layout.n_dense(); ++k) {
    auto W = p.weight(k);
    const double bound = std::sqrt(6.0 / static_cast<double>(W.cols()));
    for (Eigen::Index c = 0; c < W.cols(); ++c)
      for (Eigen::Index r = 0; r < W.rows(); ++r) W(r, c) = bound * (2.0 * uniform01(rng) - 1.0);
    p.bias(k).setZero();
  }
  return p;
}

namespace {

void softmax_inplace(VectorXd& z, VectorXd& p) {
  const double m = z.maxCoeff();
  p = (z.array() - m).exp();
  p /= p.sum();
}

void check_tokens(const ModelParams& params, const TokenSeq& tokens) {
  if (tokens.true_len < 1) throw std::invalid_argument("forward: empty token sequence");
  if (tokens.true_len > static_cast<int>(tokens.ids.size()))
    throw std::invalid_argument("forward: true_len exceeds sequence length");
  for (int i = 0; i < tokens.true_len; ++i) {
    const int t = tokens.ids[static_cast<std::size_t>(i)];
    if (t < 0 || t >= params.config.vocab_size) throw std::invalid_argument("forward: token id out of range");
  }
}

// Intermediate values of one forward pass, kept for the backward passes.
struct Tape {
  VectorXd x0;
  std::vector<VectorXd> pre;     // pre-activation of each hidden layer
  std::vector<VectorXd> post;    // post-ReLU (and post-dropout) outputs
  VectorXd dropout_scale;        // empty when dropout is off
  VectorXd logits;
  VectorXd probs;
};

Tape run_forward(const ModelParams& params, const TokenSeq& tokens, Rng* dropout_rng) {
  check_tokens(params, tokens);
  const auto& L = params.layout;
  const auto E = params.embedding();
  Tape t;
  t.x0 = VectorXd::Zero(params.config.embed_dim);
  for (int i = 0; i < tokens.true_len; ++i) t.x0 += E.row(tokens.ids[static_cast<std::size_t>(i)]).transpose();
  t.x0 /= static_cast<double>(tokens.true_len);
  const int n_hidden = L.n_dense() - 1;
  const VectorXd* in = &t.x0;
  t.pre.resize(static_cast<std::size_t>(n_hidden));
  t.post.resize(static_cast<std::size_t>(n_hidden));
  for (int k = 0; k < n_hidden; ++k) {
    auto& a = t.pre[static_cast<std::size_t>(k)];
    auto& h = t.post[static_cast<std::size_t>(k)];
    a = params.weight(k) * (*in) + params.bias(k);
    h = a.cwiseMax(0.0);
    if (k == 0 && dropout_rng && params.config.dropout_rate > 0.0) {
      const double keep = 1.0 - params.config.dropout_rate;
      t.dropout_scale.resize(h.size());
      for (Eigen::Index j = 0; j < h.size(); ++j)
        t.dropout_scale[j] = uniform01(*dropout_rng) < keep ? 1.0 / keep : 0.0;
      h.array() *= t.dropout_scale.array();
    }
    in = &h;
  }
  t.logits = params.weight(n_hidden) * (*in) + params.bias(n_hidden);
  softmax_inplace(t.logits, t.probs);
  return t;
}

// out += scale * dL/dtheta for one example, using an existing tape.
void accumulate_grad(const ModelParams& params, const TokenSeq& tokens, int label, const Tape& t,
                     double scale, VectorXd& out) {
  const auto& L = params.layout;
  const int n_hidden = L.n_dense() - 1;
  VectorXd delta = t.probs;
  delta[label] -= 1.0;
  delta *= scale;
  const VectorXd& last_in = n_hidden > 0 ? t.post.back() : t.x0;
  L.weight(out, n_hidden).noalias() += delta * last_in.transpose();
  L.bias(out, n_hidden) += delta;
  VectorXd dh = params.weight(n_hidden).transpose() * delta;
  for (int k = n_hidden - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    if (k == 0 && t.dropout_scale.size() > 0) dh.array() *= t.dropout_scale.array();
    VectorXd da = (t.pre[ku].array() > 0.0).select(dh, 0.0);
    const VectorXd& in = k > 0 ? t.post[ku - 1] : t.x0;
    L.weight(out, k).noalias() += da * in.transpose();
    L.bias(out, k) += da;
    dh = params.weight(k).transpose() * da;
  }
  if (params.config.freeze_embeddings) return;
  auto gE = L.embedding(out);
  dh /= static_cast<double>(tokens.true_len);
  for (int i = 0; i < tokens.true_len; ++i) gE.row(tokens.ids[static_cast<std::size_t>(i)]) += dh.transpose();
}

// out += scale * H(example) * v via the R-operator applied to the backward pass.
void accumulate_hvp(const ModelParams& params, const TokenSeq& tokens, int label, const VectorXd& v,
                    double scale, VectorXd& out) {
  const Tape t = run_forward(params, tokens, nullptr);
  const auto& L = params.layout;
  const int n_hidden = L.n_dense() - 1;
  const bool frozen = params.config.freeze_embeddings;
  const double inv_n = 1.0 / static_cast<double>(tokens.true_len);

  // forward directional derivatives
  VectorXd r_x0 = VectorXd::Zero(params.config.embed_dim);
  if (!frozen) {
    const auto VE = L.embedding(v);
    for (int i = 0; i < tokens.true_len; ++i) r_x0 += VE.row(tokens.ids[static_cast<std::size_t>(i)]).transpose();
    r_x0 *= inv_n;
  }
  std::vector<VectorXd> r_post(static_cast<std::size_t>(n_hidden));
  const VectorXd* in = &t.x0;
  const VectorXd* r_in = &r_x0;
  for (int k = 0; k < n_hidden; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    VectorXd r_a = L.weight(v, k) * (*in) + params.weight(k) * (*r_in) + L.bias(v, k);
    r_post[ku] = (t.pre[ku].array() > 0.0).select(r_a, 0.0);
    in = &t.post[ku];
    r_in = &r_post[ku];
  }
  const VectorXd r_z = L.weight(v, n_hidden) * (*in) + params.weight(n_hidden) * (*r_in) + L.bias(v, n_hidden);
  VectorXd delta = t.probs;
  delta[label] -= 1.0;
  const VectorXd r_delta = t.probs.cwiseProduct(r_z) - t.probs * t.probs.dot(r_z);

  // reverse pass differentiated along v
  L.weight(out, n_hidden).noalias() += scale * (r_delta * in->transpose() + delta * r_in->transpose());
  L.bias(out, n_hidden) += scale * r_delta;
  VectorXd dh = params.weight(n_hidden).transpose() * delta;
  VectorXd r_dh = L.weight(v, n_hidden).transpose() * delta + params.weight(n_hidden).transpose() * r_delta;
  for (int k = n_hidden - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const auto active = (t.pre[ku].array() > 0.0);
    VectorXd da = active.select(dh, 0.0);
    VectorXd r_da = active.select(r_dh, 0.0);
    const VectorXd& x = k > 0 ? t.post[ku - 1] : t.x0;
    const VectorXd& r_x = k > 0 ? r_post[ku - 1] : r_x0;
    L.weight(out, k).noalias() += scale * (r_da * x.transpose() + da * r_x.transpose());
    L.bias(out, k) += scale * r_da;
    dh = params.weight(k).transpose() * da;
    r_dh = L.weight(v, k).transpose() * da + params.weight(k).transpose() * r_da;
  }
  if (frozen) return;
  auto hE = L.embedding(out);
  r_dh *= scale * inv_n;
  for (int i = 0; i < tokens.true_len; ++i) hE.row(tokens.ids[static_cast<std::size_t>(i)]) += r_dh.transpose();
}

LayerActivations to_activations(Tape&& t) {
  LayerActivations act;
  act.pooled = std::move(t.x0);
  act.hidden = std::move(t.post);
  act.logits = std::move(t.logits);
  act.probs = std::move(t.probs);
  return act;
}

}  // namespace

LayerActivations forward(const ModelParams& params, const TokenSeq& tokens, Mode mode, Rng* rng) {
  if (mode == Mode::train && rng == nullptr) throw std::invalid_argument("forward: train mode needs an rng");
  return to_activations(run_forward(params, tokens, mode == Mode::train ? rng : nullptr));
}

double loss(const ModelParams& params, const TokenSeq& tokens, int label) {
  if (label < 0 || label >= params.config.n_classes) throw std::invalid_argument("loss: label out of range");
  const Tape t = run_forward(params, tokens, nullptr);
  // log-softmax directly for accuracy near p -> 1
  const double m = t.logits.maxCoeff();
  const double lse = m + std::log((t.logits.array() - m).exp().sum());
  return lse - t.logits[label];
}

double loss(const ModelParams& params, const EncodedExample& ex) { return loss(params, ex.tokens, ex.label); }

GradientVector grad(const ModelParams& params, const TokenSeq& tokens, int label) {
  if (label < 0 || label >= params.config.n_classes) throw std::invalid_argument("grad: label out of range");
  const Tape t = run_forward(params, tokens, nullptr);
  GradientVector g = GradientVector::Zero(params.dim());
  accumulate_grad(params, tokens, label, t, 1.0, g);
  return g;
}

GradientVector grad(const ModelParams& params, const EncodedExample& ex) { return grad(params, ex.tokens, ex.label); }

GradientVector hvp(const ModelParams& params, std::span<const EncodedExample* const> batch,
                   const GradientVector& v) {
  if (batch.empty()) throw std::invalid_argument("hvp: empty batch");
  if (v.size() != params.dim()) throw std::invalid_argument("hvp: dimension mismatch");
  GradientVector out = GradientVector::Zero(params.dim());
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto* ex : batch) accumulate_hvp(params, ex->tokens, ex->label, v, scale, out);
  return out;
}

GradientVector hvp(const ModelParams& params, std::span<const EncodedExample> batch, const GradientVector& v) {
  std::vector<const EncodedExample*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& ex : batch) ptrs.push_back(&ex);
  return hvp(params, std::span<const EncodedExample* const>(ptrs), v);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
}

TrainResult train(ModelParams params, std::span<const EncodedExample> train_set,
                  std::span<const EncodedExample> val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: empty training set");
  const auto P = params.dim();
  const auto emb_size = static_cast<Eigen::Index>(params.layout.embedding_size());
  const Eigen::Index first_trainable = params.config.freeze_embeddings ? emb_size : 0;
  VectorXd m = VectorXd::Zero(P);
  VectorXd s = VectorXd::Zero(P);
  VectorXd g(P);
  std::vector<std::size_t> order(train_set.size());
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  TrainHistory history;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_range(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      g.setZero();
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = train_set[order[i]];
        const Tape t = run_forward(params, ex.tokens, &dropout_rng);
        const double l = -std::log(std::max(t.probs[ex.label], 1e-300));
        if (!std::isfinite(l)) throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch + 1));
        epoch_loss += l;
        accumulate_grad(params, ex.tokens, ex.label, t, scale, g);
      }
      if (!g.allFinite()) throw NumericalError("train: non-finite gradient at epoch " + std::to_string(epoch + 1));
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (Eigen::Index j = first_trainable; j < P; ++j) {
        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
        s[j] = cfg.beta2 * s[j] + (1.0 - cfg.beta2) * g[j] * g[j];
        params.flat[j] *= 1.0 - cfg.learning_rate * cfg.weight_decay;
        params.flat[j] -= cfg.learning_rate * (m[j] / bc1) / (std::sqrt(s[j] / bc2) + cfg.eps);
      }
    }
    history.train_loss.push_back(epoch_loss / static_cast<double>(train_set.size()));
    history.val_accuracy.push_back(val_set.empty() ? std::nan("") : accuracy(params, val_set));
  }
  return {std::move(params), std::move(history)};
}

Prediction predict(const ModelParams& params, const TokenSeq& tokens) {
  Prediction out;
  out.activations = forward(params, tokens, Mode::eval);
  const auto& p = out.activations.probs;
  int best = 0;
  for (int c = 1; c < p.size(); ++c)
    if (p[c] > p[best]) best = c;
  out.label = best;
  out.confidence = p[best];
  return out;
}

double accuracy(const ModelParams& params, std::span<const EncodedExample> data) {
  if (data.empty()) return std::nan("");
  std::size_t correct = 0;
  for (const auto& ex : data)
    if (predict(params, ex.tokens).label == ex.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const TargetModel& model, const std::string& path, const std::string& extra_json) {
  const auto& c = model.params.config;
  json j;
  j["format"] = "nnif-checkpoint-v1";
  j["config"] = {{"vocab_size", c.vocab_size},   {"embed_dim", c.embed_dim},
                 {"hidden_dims", c.hidden_dims}, {"n_classes", c.n_classes},
                 {"dropout_rate", c.dropout_rate}, {"freeze_embeddings", c.freeze_embeddings},
                 {"max_len", c.max_len},         {"seed", c.seed}};
  std::vector<std::string> tokens(model.vocab.tokens().begin() + 2, model.vocab.tokens().end());
  j["vocab"] = tokens;
  j["vocab_hash"] = hex64(model.vocab.hash());
  if (!model.params.flat.allFinite()) throw NumericalError("checkpoint: non-finite parameters");
  j["params"] = std::vector<double>(model.params.flat.data(), model.params.flat.data() + model.params.flat.size());
  j["extra"] = json::parse(extra_json);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint: " + path);
  out << j.dump() << '\n';
}

TargetModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", "") != "nnif-checkpoint-v1") throw ConfigError("checkpoint " + path + ": unknown format");
  ModelConfig c;
  const auto& jc = j.at("config");
  c.vocab_size = jc.at("vocab_size").get<int>();
  c.embed_dim = jc.at("embed_dim").get<int>();
  c.hidden_dims = jc.at("hidden_dims").get<std::vector<int>>();
  c.n_classes = jc.at("n_classes").get<int>();
  c.dropout_rate = jc.at("dropout_rate").get<double>();
  c.freeze_embeddings = jc.at("freeze_embeddings").get<bool>();
  c.max_len = jc.at("max_len").get<int>();
  c.seed = jc.at("seed").get<std::uint64_t>();
  c.validate();
  Vocab vocab(j.at("vocab").get<std::vector<std::string>>());
  if (vocab.size() != c.vocab_size) throw ConfigError("checkpoint: vocab size mismatch");
  ModelParams params(c);
  const auto values = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != params.dim()) throw ConfigError("checkpoint: parameter count mismatch");
  params.flat = Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return {std::move(params), std::move(vocab)};
}

}  // namespace nnif
