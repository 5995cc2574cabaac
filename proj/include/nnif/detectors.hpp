#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnif/attacks.hpp"
#include "nnif/influence.hpp"
#include "nnif/mahalanobis.hpp"
#include "nnif/neighbors.hpp"

namespace nnif {

// ---------------------------------------------------------------------------
// NNIF features

struct NnifFeatures {
  std::vector<double> ranks_helpful;
  std::vector<double> dists_helpful;
  std::vector<double> ranks_harmful;
  std::vector<double> dists_harmful;

  /// (R_helpful, D_helpful, R_harmful, D_harmful), length 4M.
  Eigen::VectorXd concat() const;
};

/// DkNN ranks and distances of the report's helpful / harmful ids; each block
/// is sorted ascending.
NnifFeatures nnif_features(const InfluenceReport& report, const RepIndex& index, const Eigen::VectorXd& query_rep);

std::vector<std::string> nnif_feature_names(int m);

// ---------------------------------------------------------------------------
// Logistic-regression detector

struct LogRegConfig {
  double l2 = 1.0;
  int max_steps = 100;
  double tol = 1e-6;
};

struct LogRegModel {
  Eigen::VectorXd weights;  // on standardized features
  double bias = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;    // 1 for zero-variance features
  std::vector<bool> active; // false for zero-variance features (weight 0)
  double l2 = 1.0;
  int steps = 0;
  double grad_norm = 0.0;

  Eigen::MatrixXd standardize(const Eigen::MatrixXd& X) const;
  /// P(label = 1 | x) for every row.
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& X) const;
};

/// Mean logistic loss plus l2 / (2n) * |w|^2 on standardized features (bias
/// unregularized).
double logreg_objective(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& Xs, std::span<const int> y,
                        double l2);
/// Gradient of logreg_objective; the last entry is d/db.
Eigen::VectorXd logreg_gradient(const Eigen::VectorXd& w, double b, const Eigen::MatrixXd& Xs,
                                std::span<const int> y, double l2);

/// Full-batch damped Newton iterations with Armijo backtracking until the
/// gradient norm drops below cfg.tol or cfg.max_steps is reached.
LogRegModel fit_logreg(const Eigen::MatrixXd& X, std::span<const int> y, const LogRegConfig& cfg = {});

struct DetectorMetrics {
  double accuracy = 0.0;
  double auc = 0.5;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long n = 0;
  std::map<std::string, double> metadata;
};

/// Area under the ROC curve by the rank statistic with midranks for ties.
double auc_midrank(std::span<const double> scores, std::span<const int> labels);

DetectorMetrics evaluate_detector(const LogRegModel& model, const Eigen::MatrixXd& X, std::span<const int> y);

// ---------------------------------------------------------------------------
// End-to-end detectors over a detection dataset

struct DetectorRun {
  std::string name;
  DetectorMetrics metrics;
  Eigen::MatrixXd features;  // one row per detection record
  std::vector<std::string> feature_names;
  std::vector<int> labels;
  std::vector<bool> is_train;
};

struct NnifConfig {
  int m = 50;
  std::size_t sample_size = kDefaultInfluenceSample;
  LissaConfig lissa;
  Layer layer = Layer::h2;
  LogRegConfig logreg;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Influence reports (at cfg.m) and layer representations for every record.
struct NnifEvidence {
  std::vector<InfluenceReport> reports;
  std::vector<Eigen::VectorXd> reps;
  RepIndex index;
  InfluenceCounters counters;
};

NnifEvidence compute_nnif_evidence(const TargetModel& model, std::span<const EncodedExample> train,
                                   const DetectionDataset& ds, const NnifConfig& cfg);

/// Features at M (<= the M the evidence was computed with), fit on the
/// detection-train split and evaluated on the detection-test split.
DetectorRun nnif_detector_from_evidence(const NnifEvidence& evidence, const DetectionDataset& ds, int m,
                                        const LogRegConfig& logreg);

DetectorRun run_nnif_detector(const TargetModel& model, std::span<const EncodedExample> train,
                              const DetectionDataset& ds, const NnifConfig& cfg);

struct MahalConfig {
  GaussianFitOptions fit;
  LogRegConfig logreg;
};

DetectorRun run_mahal_detector(const TargetModel& model, std::span<const EncodedExample> train,
                               const DetectionDataset& ds, MahalVariant variant, const MahalConfig& cfg = {});

struct LidConfig {
  std::vector<int> k_grid{10, 20, 100};
  LogRegConfig logreg;
  /// Replacement for the divergent (+inf) estimate.
  double degenerate_value = 1e6;
};

DetectorRun run_lid_detector(const TargetModel& model, std::span<const EncodedExample> train,
                             const DetectionDataset& ds, const LidConfig& cfg = {});

}  // namespace nnif
