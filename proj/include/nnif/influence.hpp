#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnif/model.hpp"

namespace nnif {

inline constexpr std::size_t kDefaultInfluenceSample = 6000;
inline constexpr int kDefaultTopM = 500;

struct LissaConfig {
  int depth = 100;
  int repeats = 4;
  double scale = 25.0;
  double damping = 0.01;
  int batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Curvature oracle for the LiSSA recursion: returns H_j * r for a freshly
/// sampled batch j drawn from `rng`.
using HvpOracle = std::function<Eigen::VectorXd(const Eigen::VectorXd& r, Rng& rng)>;

/// Stochastic inverse-HVP:
///   r_0 = v,  r_j = v + (1 - damping) r_{j-1} - H_j r_{j-1} / scale,
///   estimate = mean over repeats of r_depth / scale.
/// Throws NumericalError when any iterate's norm exceeds 1e8.
Eigen::VectorXd lissa(const HvpOracle& hvp, const Eigen::VectorXd& v, const LissaConfig& cfg);

GradientVector inverse_hvp_lissa(const ModelParams& params, std::span<const EncodedExample> train,
                                 const GradientVector& v, const LissaConfig& cfg);

/// <ihvp_test, grad(z_train)>. Positive means upweighting z_train lowers the
/// test loss (helpful); it predicts n * (L_test(without z) - L_test(with z)).
double influence_score(const ModelParams& params, const EncodedExample& z_train, const GradientVector& ihvp_test);

struct InfluenceReport {
  std::int64_t test_id = 0;
  std::vector<std::int64_t> sampled_train_ids;
  std::vector<double> scores;  // aligned with sampled_train_ids
  std::vector<std::int64_t> helpful;  // descending score
  std::vector<std::int64_t> harmful;  // ascending score

  /// Same report restricted to the first m helpful / harmful ids.
  InfluenceReport truncated(int m) const;
};

struct InfluenceCounters {
  long ihvp = 0;
  long hvp = 0;
  long grad = 0;
  long inner = 0;
};

/// Influence scoring against one fixed uniform sample of training points.
/// Thread-safe: reports for different test points may be computed
/// concurrently.
class InfluenceEngine {
public:
  InfluenceEngine(const ModelParams& params, std::span<const EncodedExample> train, LissaConfig lissa,
                  std::size_t sample_size = kDefaultInfluenceSample, std::uint64_t seed = 0);

  /// Scores all sampled train points against z_test (one inverse HVP) and
  /// selects the top-m helpful and harmful ids; ties go to the lower id.
  InfluenceReport top_influences(const TokenSeq& test_tokens, int test_label, std::int64_t test_id, int m) const;

  const std::vector<std::size_t>& sample() const { return sample_; }
  std::size_t sample_size() const { return sample_.size(); }
  InfluenceCounters counters() const;
  void reset_counters();

private:
  const ModelParams& params_;
  std::span<const EncodedExample> train_;
  LissaConfig lissa_;
  std::vector<std::size_t> sample_;
  mutable std::atomic<long> ihvp_{0};
  mutable std::atomic<long> hvp_{0};
  mutable std::atomic<long> grad_{0};
  mutable std::atomic<long> inner_{0};
};

/// One-shot convenience wrapper around InfluenceEngine.
InfluenceReport top_influences(const ModelParams& params, std::span<const EncodedExample> train,
                               const EncodedExample& z_test, int m, std::size_t sample_size, std::uint64_t seed,
                               const LissaConfig& lissa);

void save_influence_report(const InfluenceReport& report, const std::string& path, bool full_scores = false);
InfluenceReport load_influence_report(const std::string& path);

}  // namespace nnif
