#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "nnif/common.hpp"
#include "nnif/corpus.hpp"

namespace nnif {

/// Representation layers exposed by the classifier.
enum class Layer { pooled = 0, h1 = 1, h2 = 2, logits = 3 };

std::string_view layer_name(Layer layer);
Layer parse_layer(std::string_view name);

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 32;
  /// Zero, one or two hidden dense layers (the default is the two-layer head).
  std::vector<int> hidden_dims{32, 32};
  int n_classes = 2;
  /// Applied after the first hidden layer in training mode only.
  double dropout_rate = 0.5;
  /// Embedding rows receive no gradient or curvature and are never updated.
  bool freeze_embeddings = false;
  int max_len = kDefaultMaxLen;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Layers actually present for a configuration, in fixed order
/// (pooled, h1?, h2?, logits).
std::vector<Layer> available_layers(const ModelConfig& config);
/// Last hidden layer, or pooled when there are none.
Layer penultimate_layer(const ModelConfig& config);

/// Offsets of the parameter blocks inside the flat vector: the embedding
/// (row-major, one contiguous row per token), then (W, b) for every dense
/// layer with the classifier head last. W is column-major [out x in].
class ParamLayout {
public:
  explicit ParamLayout(const ModelConfig& config);

  std::size_t size() const { return total_; }
  int n_dense() const { return static_cast<int>(w_offset_.size()); }
  int in_dim(int k) const { return dims_[static_cast<std::size_t>(k)]; }
  int out_dim(int k) const { return dims_[static_cast<std::size_t>(k) + 1]; }
  std::size_t embedding_size() const { return static_cast<std::size_t>(vocab_) * embed_; }

  template <class Vec>
  auto embedding(Vec& flat) const {
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using M = std::conditional_t<std::is_const_v<std::remove_pointer_t<decltype(flat.data())>>,
                                 Eigen::Map<const RowMat>, Eigen::Map<RowMat>>;
    return M(flat.data(), vocab_, embed_);
  }

  template <class Vec>
  auto weight(Vec& flat, int k) const {
    using M = std::conditional_t<std::is_const_v<std::remove_pointer_t<decltype(flat.data())>>,
                                 Eigen::Map<const Eigen::MatrixXd>, Eigen::Map<Eigen::MatrixXd>>;
    return M(flat.data() + w_offset_[static_cast<std::size_t>(k)], out_dim(k), in_dim(k));
  }

  template <class Vec>
  auto bias(Vec& flat, int k) const {
    using M = std::conditional_t<std::is_const_v<std::remove_pointer_t<decltype(flat.data())>>,
                                 Eigen::Map<const Eigen::VectorXd>, Eigen::Map<Eigen::VectorXd>>;
    return M(flat.data() + b_offset_[static_cast<std::size_t>(k)], out_dim(k));
  }

private:
  int vocab_;
  int embed_;
  std::vector<int> dims_;  // embed, hidden..., classes
  std::vector<std::size_t> w_offset_;
  std::vector<std::size_t> b_offset_;
  std::size_t total_;
};

/// Gradient or direction in parameter space, laid out like ModelParams::flat.
using GradientVector = Eigen::VectorXd;

struct ModelParams {
  explicit ModelParams(const ModelConfig& cfg)
      : config(cfg), layout(cfg), flat(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout.size()))) {}

  ModelConfig config;
  ParamLayout layout;
  Eigen::VectorXd flat;

  auto embedding() { return layout.embedding(flat); }
  auto embedding() const { return layout.embedding(flat); }
  auto weight(int k) { return layout.weight(flat, k); }
  auto weight(int k) const { return layout.weight(flat, k); }
  auto bias(int k) { return layout.bias(flat, k); }
  auto bias(int k) const { return layout.bias(flat, k); }
  Eigen::Index dim() const { return flat.size(); }
};

struct LayerActivations {
  Eigen::VectorXd pooled;
  std::vector<Eigen::VectorXd> hidden;
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;

  const Eigen::VectorXd& layer(Layer which) const;
};

enum class Mode { train, eval };

struct EncodedExample {
  std::int64_t id = 0;
  TokenSeq tokens;
  int label = 0;
};

std::vector<EncodedExample> encode_corpus(const Corpus& corpus, const Vocab& vocab, int max_len);

ModelParams init_model(const ModelConfig& config);

/// Eval mode ignores rng; train mode requires it (dropout).
LayerActivations forward(const ModelParams& params, const TokenSeq& tokens, Mode mode = Mode::eval,
                         Rng* rng = nullptr);

/// Cross-entropy in eval mode.
double loss(const ModelParams& params, const TokenSeq& tokens, int label);
double loss(const ModelParams& params, const EncodedExample& ex);

GradientVector grad(const ModelParams& params, const TokenSeq& tokens, int label);
GradientVector grad(const ModelParams& params, const EncodedExample& ex);

/// Exact Hessian-vector product of the mean eval-mode loss over `batch`
/// (forward-over-reverse on the fixed architecture).
GradientVector hvp(const ModelParams& params, std::span<const EncodedExample> batch,
                   const GradientVector& v);
GradientVector hvp(const ModelParams& params, std::span<const EncodedExample* const> batch,
                   const GradientVector& v);

struct TrainConfig {
  int epochs = 3;
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_accuracy;  // NaN when no validation data
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

TrainResult train(ModelParams params, std::span<const EncodedExample> train_set,
                  std::span<const EncodedExample> val_set, const TrainConfig& cfg);

struct Prediction {
  int label = 0;
  double confidence = 0.0;
  LayerActivations activations;
};

Prediction predict(const ModelParams& params, const TokenSeq& tokens);
double accuracy(const ModelParams& params, std::span<const EncodedExample> data);

/// A trained classifier bundled with its vocabulary.
struct TargetModel {
  ModelParams params;
  Vocab vocab;

  TokenSeq encode(std::string_view text) const {
    return nnif::encode(text, vocab, params.config.max_len);
  }
  Prediction predict(std::string_view text) const { return nnif::predict(params, encode(text)); }
};

void save_checkpoint(const TargetModel& model, const std::string& path,
                     const std::string& extra_json = "{}");
TargetModel load_checkpoint(const std::string& path);

}  // namespace nnif
