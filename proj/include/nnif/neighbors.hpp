#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnif/model.hpp"

namespace nnif {

/// Squared l2 distance accumulated strictly left to right, so the result is
/// bit-identical for (a, b) and (b, a) and independent of vectorization.
template <class DerivedA, class DerivedB>
double sequential_sq_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = a.derived().coeff(i) - b.derived().coeff(i);
    acc += d * d;
  }
  return acc;
}

/// Brute-force deep-kNN index over one layer of train representations.
struct RepIndex {
  Layer layer = Layer::h2;
  Eigen::MatrixXd reps;  // n_train x d, row i belongs to ids[i]
  std::vector<std::int64_t> ids;

  Eigen::Index size() const { return reps.rows(); }
  Eigen::Index dim() const { return reps.cols(); }
  Eigen::Index row_of(std::int64_t id) const;
};

struct RankDist {
  std::vector<int> ranks;      // 1-based
  std::vector<double> dists;   // l2
};

RepIndex build_index(const ModelParams& params, std::span<const EncodedExample> train, Layer layer);

/// l2 distances from `query` to every indexed row, in row order.
std::vector<double> all_distances(const RepIndex& index, const Eigen::VectorXd& query);

/// Row order sorted by (distance, id).
std::vector<Eigen::Index> ranked_rows(const RepIndex& index, const std::vector<double>& dists);

RankDist query_ranks_distances(const RepIndex& index, const Eigen::VectorXd& query,
                               std::span<const std::int64_t> ids);

/// The k nearest train ids (ties by id).
std::vector<std::int64_t> nearest_ids(const RepIndex& index, const Eigen::VectorXd& query, std::size_t k);

struct LidEstimate {
  double value = 0.0;
  /// All k distances equal: the estimator diverges and value is +inf.
  bool degenerate = false;
};

/// Maximum-likelihood LID over the k smallest positive distances.
LidEstimate lid_from_distances(std::vector<double> dists, int k);
LidEstimate lid_estimate(const Eigen::VectorXd& query, const RepIndex& index, int k);

/// Binary matrix (little-endian doubles, row-major) plus JSON sidecar.
void save_index(const RepIndex& index, const std::string& base_path);
RepIndex load_index(const std::string& base_path);

}  // namespace nnif
