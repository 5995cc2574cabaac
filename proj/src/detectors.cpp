#include "nnif/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nnif/common.hpp"
#include "nnif/parallel.hpp"

namespace nnif {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// NNIF features

VectorXd NnifFeatures::concat() const {
  const auto m = static_cast<Index>(ranks_helpful.size());
  VectorXd out(4 * m);
  Index k = 0;
  for (const auto* block : {&ranks_helpful, &dists_helpful, &ranks_harmful, &dists_harmful})
    for (double v : *block) out[k++] = v;
  return out;
}

NnifFeatures nnif_features(const InfluenceReport& report, const RepIndex& index, const VectorXd& query_rep) {
  if (report.helpful.size() != report.harmful.size())
    throw std::invalid_argument("nnif_features: helpful/harmful size mismatch");
  for (auto id : report.helpful) index.row_of(id);
  for (auto id : report.harmful) index.row_of(id);

  const auto dists = all_distances(index, query_rep);
  const auto order = ranked_rows(index, dists);
  std::vector<int> rank_of_row(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank_of_row[static_cast<std::size_t>(order[r])] = static_cast<int>(r) + 1;

  auto fill = [&](const std::vector<std::int64_t>& ids, std::vector<double>& ranks, std::vector<double>& ds) {
    for (auto id : ids) {
      const auto row = static_cast<std::size_t>(index.row_of(id));
      ranks.push_back(rank_of_row[row]);
      ds.push_back(dists[row]);
    }
    std::sort(ranks.begin(), ranks.end());
    std::sort(ds.begin(), ds.end());
  };
  NnifFeatures f;
  fill(report.helpful, f.ranks_helpful, f.dists_helpful);
  fill(report.harmful, f.ranks_harmful, f.dists_harmful);
  return f;
}

std::vector<std::string> nnif_feature_names(int m) {
  std::vector<std::string> names;
  for (const char* block : {"rank_helpful", "dist_helpful", "rank_harmful", "dist_harmful"})
    for (int i = 0; i < m; ++i) names.push_back(std::string(block) + "_" + std::to_string(i));
  return names;
}

// ---------------------------------------------------------------------------
// Logistic regression

namespace {

double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_labels(std::span<const int> y, Index rows) {
  if (static_cast<Index>(y.size()) != rows) throw std::invalid_argument("logreg: label count mismatch");
  bool has0 = false, has1 = false;
  for (int v : y) {
    if (v != 0 && v != 1) throw std::invalid_argument("logreg: labels must be 0 or 1");
    (v ? has1 : has0) = true;
  }
  if (!has0 || !has1) throw ConfigError("logreg: both classes must be present");
}

MatrixXd rows_of(const MatrixXd& X, const std::vector<std::size_t>& idx) {
  MatrixXd out(static_cast<Index>(idx.size()), X.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = X.row(static_cast<Index>(idx[i]));
  return out;
}

std::vector<int> labels_of(const std::vector<int>& y, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(y[i]);
  return out;
}

}  // namespace

MatrixXd LogRegModel::standardize(const MatrixXd& X) const {
  if (X.cols() != mean.size()) throw std::invalid_argument("logreg: feature dimension mismatch");
  MatrixXd Xs = (X.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  for (Index j = 0; j < Xs.cols(); ++j)
    if (!active[static_cast<std::size_t>(j)]) Xs.col(j).setZero();
  return Xs;
}

VectorXd LogRegModel::predict_proba(const MatrixXd& X) const {
  const VectorXd z = (standardize(X) * weights).array() + bias;
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

double logreg_objective(const VectorXd& w, double b, const MatrixXd& Xs, std::span<const int> y, double l2) {
  const auto n = static_cast<double>(Xs.rows());
  const VectorXd z = (Xs * w).array() + b;
  double loss = 0.0;
  for (Index i = 0; i < z.size(); ++i) loss += log1pexp(z[i]) - y[static_cast<std::size_t>(i)] * z[i];
  return loss / n + l2 / (2.0 * n) * w.squaredNorm();
}

VectorXd logreg_gradient(const VectorXd& w, double b, const MatrixXd& Xs, std::span<const int> y, double l2) {
  const auto n = static_cast<double>(Xs.rows());
  VectorXd r = (Xs * w).array() + b;
  for (Index i = 0; i < r.size(); ++i) r[i] = sigmoid(r[i]) - y[static_cast<std::size_t>(i)];
  VectorXd g(w.size() + 1);
  g.head(w.size()) = Xs.transpose() * r / n + l2 / n * w;
  g[w.size()] = r.sum() / n;
  return g;
}

LogRegModel fit_logreg(const MatrixXd& X, std::span<const int> y, const LogRegConfig& cfg) {
  if (X.rows() < 2) throw ConfigError("logreg: need at least 2 examples");
  if (cfg.l2 < 0.0) throw ConfigError("logreg: l2 must be >= 0");
  check_labels(y, X.rows());
  if (!X.allFinite()) throw NumericalError("logreg: non-finite features");

  const Index n = X.rows(), F = X.cols();
  LogRegModel m;
  m.l2 = cfg.l2;
  m.mean = X.colwise().mean().transpose();
  m.scale = VectorXd::Ones(F);
  m.active.assign(static_cast<std::size_t>(F), false);
  for (Index j = 0; j < F; ++j) {
    const double var = (X.col(j).array() - m.mean[j]).square().sum() / static_cast<double>(n);
    if (var > 0.0 && std::sqrt(var) > 1e-12 * std::max(1.0, std::abs(m.mean[j]))) {
      m.scale[j] = std::sqrt(var);
      m.active[static_cast<std::size_t>(j)] = true;
    }
  }
  const MatrixXd Xs = m.standardize(X);

  VectorXd w = VectorXd::Zero(F);
  const double pos = std::count(y.begin(), y.end(), 1);
  double b = std::log(pos / (static_cast<double>(n) - pos));
  double obj = logreg_objective(w, b, Xs, y, cfg.l2);

  // augmented design [Xs 1]
  MatrixXd A(n, F + 1);
  A.leftCols(F) = Xs;
  A.col(F).setOnes();
  VectorXd reg = VectorXd::Constant(F + 1, cfg.l2 / static_cast<double>(n));
  reg[F] = 0.0;
  for (Index j = 0; j < F; ++j)
    if (!m.active[static_cast<std::size_t>(j)]) reg[j] = 1.0;  // keeps the system nonsingular; weight stays 0

  for (m.steps = 0; m.steps < cfg.max_steps; ++m.steps) {
    const VectorXd g = logreg_gradient(w, b, Xs, y, cfg.l2);
    m.grad_norm = g.norm();
    if (m.grad_norm < cfg.tol) break;
    VectorXd s(n);
    const VectorXd z = (Xs * w).array() + b;
    for (Index i = 0; i < n; ++i) {
      const double p = sigmoid(z[i]);
      s[i] = p * (1.0 - p) / static_cast<double>(n);
    }
    MatrixXd H = A.transpose() * s.asDiagonal() * A;
    H.diagonal() += reg;
    H.diagonal().array() += 1e-12;
    const VectorXd dir = H.ldlt().solve(-g);
    double t = 1.0;
    const double slope = g.dot(dir);
    bool moved = false;
    for (int bt = 0; bt < 50; ++bt) {
      const VectorXd wn = w + t * dir.head(F);
      const double bn = b + t * dir[F];
      const double on = logreg_objective(wn, bn, Xs, y, cfg.l2);
      if (std::isfinite(on) && on <= obj + 1e-4 * t * slope) {
        w = wn;
        b = bn;
        obj = on;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  m.grad_norm = logreg_gradient(w, b, Xs, y, cfg.l2).norm();
  if (!w.allFinite() || !std::isfinite(b)) throw NumericalError("logreg: diverged");
  m.weights = w;
  m.bias = b;
  return m;
}

double auc_midrank(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double n_pos = 0, sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] == 1) {
      n_pos += 1;
      sum += rank[i];
    }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  return (sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

DetectorMetrics evaluate_detector(const LogRegModel& model, const MatrixXd& X, std::span<const int> y) {
  if (static_cast<Index>(y.size()) != X.rows()) throw std::invalid_argument("evaluate_detector: size mismatch");
  DetectorMetrics out;
  out.n = static_cast<long>(y.size());
  if (out.n == 0) return out;
  const VectorXd p = model.predict_proba(X);
  for (Index i = 0; i < p.size(); ++i) {
    const bool pred = p[i] >= 0.5;
    const bool truth = y[static_cast<std::size_t>(i)] == 1;
    if (pred && truth) ++out.tp;
    else if (pred) ++out.fp;
    else if (truth) ++out.fn;
    else ++out.tn;
  }
  out.accuracy = static_cast<double>(out.tp + out.tn) / static_cast<double>(out.n);
  std::vector<double> s(p.data(), p.data() + p.size());
  out.auc = auc_midrank(s, y);
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end runners

namespace {

DetectorRun fit_and_evaluate(std::string name, MatrixXd features, std::vector<std::string> names,
                             const DetectionDataset& ds, const LogRegConfig& cfg) {
  DetectorRun run;
  run.name = std::move(name);
  run.features = std::move(features);
  run.feature_names = std::move(names);
  for (const auto& r : ds.records) {
    run.labels.push_back(r.detect_label);
    run.is_train.push_back(r.is_train);
  }
  const MatrixXd Xtr = rows_of(run.features, ds.train_indices);
  const auto ytr = labels_of(run.labels, ds.train_indices);
  const auto model = fit_logreg(Xtr, ytr, cfg);
  run.metrics = evaluate_detector(model, rows_of(run.features, ds.test_indices), labels_of(run.labels, ds.test_indices));
  run.metrics.metadata["train_accuracy"] = evaluate_detector(model, Xtr, ytr).accuracy;
  run.metrics.metadata["n_train"] = static_cast<double>(ds.train_indices.size());
  run.metrics.metadata["n_features"] = static_cast<double>(run.features.cols());
  run.metrics.metadata["logreg_steps"] = model.steps;
  return run;
}

std::vector<LayerActivations> record_activations(const TargetModel& model, const DetectionDataset& ds, int threads) {
  std::vector<LayerActivations> acts(ds.records.size());
  parallel_for(ds.records.size(), threads, [&](std::size_t i) {
    acts[i] = forward(model.params, model.encode(ds.records[i].text), Mode::eval);
  });
  return acts;
}

void check_dataset(const DetectionDataset& ds) {
  if (ds.records.empty()) throw ConfigError("detector: empty detection dataset");
  if (ds.train_indices.empty() || ds.test_indices.empty()) throw ConfigError("detector: empty train or test split");
}

}  // namespace

NnifEvidence compute_nnif_evidence(const TargetModel& model, std::span<const EncodedExample> train,
                                   const DetectionDataset& ds, const NnifConfig& cfg) {
  check_dataset(ds);
  const std::size_t s = std::min(cfg.sample_size, train.size());
  InfluenceEngine engine(model.params, train, cfg.lissa, s, cfg.seed);
  NnifEvidence ev;
  ev.index = build_index(model.params, train, cfg.layer);
  ev.reports.resize(ds.records.size());
  ev.reps.resize(ds.records.size());
  parallel_for(ds.records.size(), cfg.threads, [&](std::size_t i) {
    const auto tokens = model.encode(ds.records[i].text);
    const auto pred = predict(model.params, tokens);
    ev.reps[i] = pred.activations.layer(cfg.layer);
    ev.reports[i] = engine.top_influences(tokens, pred.label, static_cast<std::int64_t>(i), cfg.m);
  });
  ev.counters = engine.counters();
  return ev;
}

DetectorRun nnif_detector_from_evidence(const NnifEvidence& evidence, const DetectionDataset& ds, int m,
                                        const LogRegConfig& logreg) {
  if (m < 1) throw ConfigError("nnif: M must be >= 1");
  MatrixXd X(static_cast<Index>(ds.records.size()), 4 * m);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rep = evidence.reports[i];
    if (static_cast<int>(rep.helpful.size()) < m)
      throw ConfigError("nnif: evidence computed with M=" + std::to_string(rep.helpful.size()) + " < " +
                        std::to_string(m));
    X.row(static_cast<Index>(i)) = nnif_features(rep.truncated(m), evidence.index, evidence.reps[i]).concat().transpose();
  }
  auto run = fit_and_evaluate("nnif", std::move(X), nnif_feature_names(m), ds, logreg);
  run.metrics.metadata["M"] = m;
  return run;
}

DetectorRun run_nnif_detector(const TargetModel& model, std::span<const EncodedExample> train,
                              const DetectionDataset& ds, const NnifConfig& cfg) {
  const auto ev = compute_nnif_evidence(model, train, ds, cfg);
  auto run = nnif_detector_from_evidence(ev, ds, cfg.m, cfg.logreg);
  run.metrics.metadata["S"] = static_cast<double>(std::min(cfg.sample_size, train.size()));
  return run;
}

DetectorRun run_mahal_detector(const TargetModel& model, std::span<const EncodedExample> train,
                               const DetectionDataset& ds, MahalVariant variant, const MahalConfig& cfg) {
  check_dataset(ds);
  const Layer penult = penultimate_layer(model.params.config);
  const auto layers = variant == MahalVariant::penultimate ? std::vector<Layer>{penult}
                                                           : available_layers(model.params.config);
  const auto stats = fit_class_gaussians(model.params, train, layers, cfg.fit);
  const auto acts = record_activations(model, ds, 1);
  std::vector<std::string> names;
  if (variant == MahalVariant::penultimate) names.push_back("mahal_" + std::string(layer_name(penult)));
  else
    for (Layer l : {Layer::pooled, Layer::h1, Layer::h2, Layer::logits})
      if (stats.has(l)) names.push_back("mahal_" + std::string(layer_name(l)));
  MatrixXd X(static_cast<Index>(acts.size()), static_cast<Index>(names.size()));
  for (std::size_t i = 0; i < acts.size(); ++i)
    X.row(static_cast<Index>(i)) = mahal_features(stats, acts[i], variant, penult).transpose();
  return fit_and_evaluate(variant == MahalVariant::penultimate ? "mahal_penult" : "mahal_ensemble", std::move(X),
                          std::move(names), ds, cfg.logreg);
}

DetectorRun run_lid_detector(const TargetModel& model, std::span<const EncodedExample> train,
                             const DetectionDataset& ds, const LidConfig& cfg) {
  check_dataset(ds);
  if (cfg.k_grid.empty()) throw ConfigError("lid: k grid is empty");
  auto grid = cfg.k_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (int k : grid)
    if (k < 2 || static_cast<std::size_t>(k) >= train.size())
      throw ConfigError("lid: k=" + std::to_string(k) + " outside [2, n_train)");

  const auto layers = available_layers(model.params.config);
  std::vector<RepIndex> indices;
  for (Layer l : layers) indices.push_back(build_index(model.params, train, l));
  const auto acts = record_activations(model, ds, 1);
  std::vector<std::string> names;
  for (Layer l : layers) names.push_back("lid_" + std::string(layer_name(l)));

  // distances per (record, layer) computed once; LID for each k reuses them
  std::vector<std::vector<std::vector<double>>> dists(acts.size());
  for (std::size_t i = 0; i < acts.size(); ++i)
    for (std::size_t l = 0; l < layers.size(); ++l) dists[i].push_back(all_distances(indices[l], acts[i].layer(layers[l])));

  DetectorRun best;
  double best_train_acc = -1.0;
  int best_k = grid.front();
  for (int k : grid) {
    MatrixXd X(static_cast<Index>(acts.size()), static_cast<Index>(layers.size()));
    for (std::size_t i = 0; i < acts.size(); ++i)
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto est = lid_from_distances(dists[i][l], k);
        X(static_cast<Index>(i), static_cast<Index>(l)) = est.degenerate ? cfg.degenerate_value : est.value;
      }
    auto run = fit_and_evaluate("lid", std::move(X), names, ds, cfg.logreg);
    const double acc = run.metrics.metadata.at("train_accuracy");
    if (acc > best_train_acc) {
      best_train_acc = acc;
      best_k = k;
      best = std::move(run);
    }
  }
  best.metrics.metadata["k"] = best_k;
  return best;
}

}  // namespace nnif
