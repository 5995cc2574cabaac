#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnif/model.hpp"

namespace nnif {

/// Class-conditional Gaussians with a covariance tied across classes.
struct LayerGaussian {
  Layer layer = Layer::h2;
  Eigen::MatrixXd means;       // n_classes x d
  Eigen::MatrixXd covariance;  // d x d, includes lambda * I
  Eigen::MatrixXd precision;   // cached inverse of covariance
  double lambda = 0.0;         // absolute regularizer actually used

  Eigen::Index dim() const { return means.cols(); }
  int n_classes() const { return static_cast<int>(means.rows()); }
};

struct GaussianStats {
  std::vector<LayerGaussian> layers;

  const LayerGaussian& at(Layer layer) const;
  bool has(Layer layer) const;
};

struct GaussianFitOptions {
  double lambda = 1e-3;
  /// Scale lambda by the mean diagonal of the unregularized covariance.
  bool relative = true;
};

/// Fits means and tied covariance from representations (one row per point).
/// Retries with lambda * 10 up to three times if the factorization fails.
LayerGaussian fit_gaussian(const Eigen::MatrixXd& reps, std::span<const int> labels, int n_classes, Layer layer,
                           GaussianFitOptions opts = {});

GaussianStats fit_class_gaussians(const ModelParams& params, std::span<const EncodedExample> train,
                                  const std::vector<Layer>& layers, GaussianFitOptions opts = {});

/// max_c -(x - mu_c)^T Sigma^{-1} (x - mu_c); always <= 0.
template <class Derived>
double mahal_score(const LayerGaussian& g, const Eigen::MatrixBase<Derived>& rep) {
  if (rep.size() != g.dim()) throw std::invalid_argument("mahal_score: dimension mismatch");
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < g.means.rows(); ++c) {
    const Eigen::VectorXd d = rep - g.means.row(c).transpose();
    best = std::max(best, -d.dot(g.precision * d));
  }
  return best;
}

double mahal_score(const GaussianStats& stats, Layer layer, const Eigen::VectorXd& rep);

enum class MahalVariant { penultimate, ensemble };

/// penultimate -> [M_penultimate]; ensemble -> one score per fitted layer in
/// (pooled, h1, h2, logits) order.
Eigen::VectorXd mahal_features(const GaussianStats& stats, const LayerActivations& act, MahalVariant variant,
                               Layer penultimate = Layer::h2);

/// JSON sidecar plus one binary matrix file per block.
void save_gaussian_stats(const GaussianStats& stats, const std::string& base_path);
GaussianStats load_gaussian_stats(const std::string& base_path);

}  // namespace nnif
