#include "nnif/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "nnif/matrix_io.hpp"

namespace nnif {

using Eigen::Index;
using Eigen::VectorXd;

Index RepIndex::row_of(std::int64_t id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return static_cast<Index>(i);
  throw std::out_of_range("train id " + std::to_string(id) + " not in index");
}

RepIndex build_index(const ModelParams& params, std::span<const EncodedExample> train, Layer layer) {
  RepIndex index;
  index.layer = layer;
  if (train.empty()) return index;
  std::vector<VectorXd> rows;
  rows.reserve(train.size());
  for (const auto& ex : train) {
    rows.push_back(forward(params, ex.tokens, Mode::eval).layer(layer));
    index.ids.push_back(ex.id);
  }
  index.reps.resize(static_cast<Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) index.reps.row(static_cast<Index>(i)) = rows[i].transpose();
  if (!index.reps.allFinite()) throw NumericalError("build_index: non-finite representation");
  return index;
}

std::vector<double> all_distances(const RepIndex& index, const VectorXd& query) {
  if (query.size() != index.dim()) throw std::invalid_argument("query dimension does not match index");
  std::vector<double> d(static_cast<std::size_t>(index.size()));
  for (Index i = 0; i < index.size(); ++i)
    d[static_cast<std::size_t>(i)] = std::sqrt(sequential_sq_distance(index.reps.row(i), query.transpose()));
  return d;
}

std::vector<Index> ranked_rows(const RepIndex& index, const std::vector<double>& dists) {
  std::vector<Index> order(dists.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const auto ua = static_cast<std::size_t>(a);
    const auto ub = static_cast<std::size_t>(b);
    if (dists[ua] != dists[ub]) return dists[ua] < dists[ub];
    return index.ids[ua] < index.ids[ub];
  });
  return order;
}

RankDist query_ranks_distances(const RepIndex& index, const VectorXd& query, std::span<const std::int64_t> ids) {
  const auto dists = all_distances(index, query);
  const auto order = ranked_rows(index, dists);
  std::unordered_map<std::int64_t, std::size_t> rank_of;
  rank_of.reserve(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank_of[index.ids[static_cast<std::size_t>(order[r])]] = r;
  std::unordered_map<std::int64_t, std::size_t> row_of;
  for (std::size_t i = 0; i < index.ids.size(); ++i) row_of[index.ids[i]] = i;
  RankDist out;
  out.ranks.reserve(ids.size());
  out.dists.reserve(ids.size());
  for (auto id : ids) {
    auto it = rank_of.find(id);
    if (it == rank_of.end()) throw std::out_of_range("query_ranks_distances: unknown train id " + std::to_string(id));
    out.ranks.push_back(static_cast<int>(it->second) + 1);
    out.dists.push_back(dists[row_of.at(id)]);
  }
  return out;
}

std::vector<std::int64_t> nearest_ids(const RepIndex& index, const VectorXd& query, std::size_t k) {
  const auto dists = all_distances(index, query);
  const auto order = ranked_rows(index, dists);
  std::vector<std::int64_t> out;
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r) out.push_back(index.ids[static_cast<std::size_t>(order[r])]);
  return out;
}

LidEstimate lid_from_distances(std::vector<double> dists, int k) {
  if (k < 2) throw std::invalid_argument("lid: k must be >= 2");
  dists.erase(std::remove_if(dists.begin(), dists.end(), [](double d) { return !(d > 0.0); }), dists.end());
  const auto ku = static_cast<std::size_t>(k);
  if (dists.size() < ku)
    throw std::invalid_argument("lid: fewer than k = " + std::to_string(k) + " positive distances");
  std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
  const double rk = dists[ku - 1];
  double sum = 0.0;
  for (std::size_t i = 0; i < ku; ++i) sum += std::log(dists[i] / rk);
  const double mean = sum / static_cast<double>(k);
  if (mean == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {-1.0 / mean, false};
}

LidEstimate lid_estimate(const VectorXd& query, const RepIndex& index, int k) {
  if (k >= index.size()) throw std::invalid_argument("lid: k must be smaller than the index size");
  return lid_from_distances(all_distances(index, query), k);
}

void save_index(const RepIndex& index, const std::string& base_path) {
  write_matrix_bin(index.reps, base_path + ".bin");
  nlohmann::json j;
  j["layer"] = std::string(layer_name(index.layer));
  j["ids"] = index.ids;
  j["rows"] = index.reps.rows();
  j["cols"] = index.reps.cols();
  write_json(j, base_path + ".json");
}

RepIndex load_index(const std::string& base_path) {
  const auto j = read_json(base_path + ".json");
  RepIndex index;
  index.layer = parse_layer(j.at("layer").get<std::string>());
  index.ids = j.at("ids").get<std::vector<std::int64_t>>();
  index.reps = read_matrix_bin(base_path + ".bin");
  if (index.reps.rows() != static_cast<Index>(index.ids.size()) || index.reps.rows() != j.at("rows").get<Index>() ||
      index.reps.cols() != j.at("cols").get<Index>())
    throw ConfigError("index " + base_path + ": sidecar does not match matrix");
  return index;
}

}  // namespace nnif
