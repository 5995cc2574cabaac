#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnif/detectors.hpp"

namespace nnif {

// ---------------------------------------------------------------------------
// exact t-SNE

struct TsneConfig {
  double perplexity = 15.0;
  int iterations = 500;
  double learning_rate = 100.0;
  double exaggeration = 4.0;
  int exaggeration_iters = 100;
  int momentum_switch_iter = 250;
  double entropy_tol = 1e-5;
  std::uint64_t seed = 0;
};

struct TsneResult {
  Eigen::MatrixXd embedding;  // n x 2
  double kl_after_exaggeration = 0.0;
  double kl_final = 0.0;
  /// |H(P_i) - log(perplexity)| per point.
  std::vector<double> entropy_errors;
};

/// Conditional P rows (n x n, zero diagonal) for the given squared distances,
/// each calibrated so its entropy (nats) equals log(perplexity).
Eigen::MatrixXd tsne_conditional_p(const Eigen::MatrixXd& sq_dists, double perplexity, double tol,
                                   std::vector<double>* entropy_errors = nullptr);

TsneResult tsne_2d(const Eigen::MatrixXd& points, const TsneConfig& cfg = {});

// ---------------------------------------------------------------------------
// Subspace scenes

enum class SceneView { influence, neighbors };
std::string_view view_name(SceneView view);

struct SubspaceScene {
  SceneView view = SceneView::neighbors;
  std::int64_t source_id = 0;
  /// Train ids of the original's / adversarial's neighbor groups.
  std::vector<std::int64_t> orig_ids;
  std::vector<std::int64_t> adv_ids;
  /// One per projected point: test, adv, then neighbor groups.
  std::vector<std::string> groups;
  std::vector<std::int64_t> point_ids;  // -1 for the two anchors
  Eigen::MatrixXd coords;               // n_points x 2
  /// Ids present in both neighbor groups.
  int overlap = 0;
  bool deduplicated = false;
  double perplexity = 0.0;
};

struct SceneConfig {
  int top_k = 25;
  Layer layer = Layer::h2;
  /// Drop the second copy of ids shared by both groups.
  bool dedup = false;
  TsneConfig tsne;
};

/// Shared state for building many scenes against one train set.
struct SceneContext {
  const TargetModel& model;
  std::span<const EncodedExample> train;
  const RepIndex& index;            // DkNN index over cfg.layer
  const InfluenceEngine* engine;    // required for the influence view
};

SubspaceScene build_scene(const SceneContext& ctx, const std::string& original_text, const std::string& adversarial_text,
                          std::int64_t source_id, SceneView view, const SceneConfig& cfg);

/// x, y, group, train_id
void save_scene_csv(const SubspaceScene& scene, const std::string& path, const std::string& comment = "");

// ---------------------------------------------------------------------------
// Linear separability

struct SvmConfig {
  double lambda = 1e-3;
  int iterations = 2000;
  double step = 1.0;
};

struct SvmResult {
  Eigen::VectorXd w;  // on standardized inputs
  double b = 0.0;
  double objective = 0.0;
  double train_accuracy = 0.0;
};

/// Soft-margin linear SVM (mean hinge + lambda/2 |w|^2), full-batch
/// subgradient descent; the iterate with the lowest objective is kept.
SvmResult fit_linear_svm(const Eigen::MatrixXd& X, std::span<const int> y, const SvmConfig& cfg = {});

/// Training accuracy separating the original's neighbors from the
/// adversarial's (anchors excluded); nullopt if a group is empty.
std::optional<double> scene_separability(const SubspaceScene& scene, const SvmConfig& cfg = {});

struct SeparabilityResult {
  std::vector<double> influence_accuracies;
  std::vector<double> neighbor_accuracies;
  double influence_mean = 0.0;
  double neighbor_mean = 0.0;
  double p_value = 0.5;
  long n_trials = 0;  // per side
  int skipped = 0;
};

SeparabilityResult separability(std::span<const SubspaceScene> influence_scenes,
                                std::span<const SubspaceScene> neighbor_scenes, const SvmConfig& cfg = {});

/// Pooled two-proportion z-test; upper-tail p for H1: acc_a > acc_b.
double proportions_ztest_one_tailed(double acc_a, double acc_b, long n);

// ---------------------------------------------------------------------------
// M sweep

struct MSweepPoint {
  int m = 0;
  double accuracy = 0.0;
  double auc = 0.5;
};

struct MSweepResult {
  std::vector<MSweepPoint> curve;
  InfluenceCounters counters;
};

/// One evidence pass at max(m_values), then one detector fit per M.
MSweepResult m_sweep(const TargetModel& model, std::span<const EncodedExample> train, const DetectionDataset& ds,
                     std::span<const int> m_values, NnifConfig cfg);

MSweepResult m_sweep(const NnifEvidence& evidence, const DetectionDataset& ds, std::span<const int> m_values,
                     const LogRegConfig& logreg);

}  // namespace nnif
