#include "nnif/mahalanobis.hpp"

#include <algorithm>

#include "nnif/matrix_io.hpp"

namespace nnif {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

const LayerGaussian& GaussianStats::at(Layer layer) const {
  for (const auto& g : layers)
    if (g.layer == layer) return g;
  throw ConfigError("no Gaussian statistics for layer " + std::string(layer_name(layer)));
}

bool GaussianStats::has(Layer layer) const {
  return std::any_of(layers.begin(), layers.end(), [&](const auto& g) { return g.layer == layer; });
}

LayerGaussian fit_gaussian(const MatrixXd& reps, std::span<const int> labels, int n_classes, Layer layer,
                           GaussianFitOptions opts) {
  if (opts.lambda < 0.0) throw ConfigError("mahalanobis: lambda must be >= 0");
  if (static_cast<Index>(labels.size()) != reps.rows()) throw std::invalid_argument("fit_gaussian: label count mismatch");
  const Index d = reps.cols();
  std::vector<Index> counts(static_cast<std::size_t>(n_classes), 0);
  MatrixXd means = MatrixXd::Zero(n_classes, d);
  for (Index i = 0; i < reps.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= n_classes) throw std::invalid_argument("fit_gaussian: label out of range");
    means.row(c) += reps.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] < 2)
      throw ConfigError("mahalanobis: class " + std::to_string(c) + " has fewer than 2 examples");
    means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  MatrixXd centered(reps.rows(), d);
  for (Index i = 0; i < reps.rows(); ++i) centered.row(i) = reps.row(i) - means.row(labels[static_cast<std::size_t>(i)]);
  MatrixXd scatter = centered.transpose() * centered / static_cast<double>(reps.rows());
  scatter = (0.5 * (scatter + scatter.transpose())).eval();

  const double mean_diag = d > 0 ? scatter.diagonal().mean() : 0.0;
  double lambda = opts.relative && mean_diag > 0.0 ? opts.lambda * mean_diag : opts.lambda;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    MatrixXd cov = scatter;
    cov.diagonal().array() += lambda;
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-14) {
      MatrixXd precision = llt.solve(MatrixXd::Identity(d, d));
      precision = (0.5 * (precision + precision.transpose())).eval();
      return {layer, std::move(means), std::move(cov), std::move(precision), lambda};
    }
    lambda = std::max(lambda * 10.0, 1e-10 * std::max(mean_diag, 1.0));
  }
  throw NumericalError("mahalanobis: covariance of layer " + std::string(layer_name(layer)) +
                       " is not positive definite after regularization retries");
}

GaussianStats fit_class_gaussians(const ModelParams& params, std::span<const EncodedExample> train,
                                  const std::vector<Layer>& layers, GaussianFitOptions opts) {
  if (train.empty()) throw ConfigError("mahalanobis: empty training set");
  std::vector<LayerActivations> acts;
  std::vector<int> labels;
  acts.reserve(train.size());
  for (const auto& ex : train) {
    acts.push_back(forward(params, ex.tokens, Mode::eval));
    labels.push_back(ex.label);
  }
  GaussianStats stats;
  for (Layer layer : layers) {
    const Index d = acts.front().layer(layer).size();
    MatrixXd reps(static_cast<Index>(acts.size()), d);
    for (std::size_t i = 0; i < acts.size(); ++i) reps.row(static_cast<Index>(i)) = acts[i].layer(layer).transpose();
    stats.layers.push_back(fit_gaussian(reps, labels, params.config.n_classes, layer, opts));
  }
  return stats;
}

double mahal_score(const GaussianStats& stats, Layer layer, const VectorXd& rep) {
  return mahal_score(stats.at(layer), rep);
}

VectorXd mahal_features(const GaussianStats& stats, const LayerActivations& act, MahalVariant variant,
                        Layer penultimate) {
  if (variant == MahalVariant::penultimate) {
    VectorXd f(1);
    f[0] = mahal_score(stats.at(penultimate), act.layer(penultimate));
    return f;
  }
  std::vector<const LayerGaussian*> ordered;
  for (Layer l : {Layer::pooled, Layer::h1, Layer::h2, Layer::logits})
    if (stats.has(l)) ordered.push_back(&stats.at(l));
  VectorXd f(static_cast<Index>(ordered.size()));
  for (std::size_t i = 0; i < ordered.size(); ++i)
    f[static_cast<Index>(i)] = mahal_score(*ordered[i], act.layer(ordered[i]->layer));
  return f;
}

void save_gaussian_stats(const GaussianStats& stats, const std::string& base_path) {
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& g : stats.layers) {
    const std::string name(layer_name(g.layer));
    write_matrix_bin(g.means, base_path + "." + name + ".means.bin");
    write_matrix_bin(g.covariance, base_path + "." + name + ".cov.bin");
    write_matrix_bin(g.precision, base_path + "." + name + ".precision.bin");
    j["layers"].push_back({{"layer", name}, {"lambda", g.lambda}, {"dim", g.dim()}, {"n_classes", g.n_classes()}});
  }
  write_json(j, base_path + ".json");
}

GaussianStats load_gaussian_stats(const std::string& base_path) {
  const auto j = read_json(base_path + ".json");
  GaussianStats stats;
  for (const auto& jl : j.at("layers")) {
    const auto name = jl.at("layer").get<std::string>();
    LayerGaussian g;
    g.layer = parse_layer(name);
    g.lambda = jl.at("lambda").get<double>();
    g.means = read_matrix_bin(base_path + "." + name + ".means.bin");
    g.covariance = read_matrix_bin(base_path + "." + name + ".cov.bin");
    g.precision = read_matrix_bin(base_path + "." + name + ".precision.bin");
    stats.layers.push_back(std::move(g));
  }
  return stats;
}

}  // namespace nnif
