#include "nnif/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "nnif/common.hpp"
#include "nnif/matrix_io.hpp"

namespace nnif {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// t-SNE

MatrixXd tsne_conditional_p(const MatrixXd& sq_dists, double perplexity, double tol,
                            std::vector<double>* entropy_errors) {
  const Index n = sq_dists.rows();
  const double target = std::log(perplexity);
  MatrixXd P = MatrixXd::Zero(n, n);
  if (entropy_errors) entropy_errors->assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> w(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, sq_dists(i, j));

    auto entropy = [&](double beta) {
      double sum = 0.0, wd = 0.0;
      for (Index j = 0; j < n; ++j) {
        if (j == i) {
          w[static_cast<std::size_t>(j)] = 0.0;
          continue;
        }
        const double d = sq_dists(i, j) - dmin;
        const double v = std::exp(-beta * d);
        w[static_cast<std::size_t>(j)] = v;
        sum += v;
        wd += v * d;
      }
      for (auto& v : w) v /= sum;
      return std::log(sum) + beta * wd / sum;
    };

    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double h = entropy(beta);
    bool ok = std::abs(h - target) < tol;
    for (int it = 0; it < 500 && !ok; ++it) {
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (lo + hi);
      } else {
        hi = beta;
        beta = 0.5 * (lo + hi);
      }
      if (!std::isfinite(beta) || beta > 1e300) break;
      h = entropy(beta);
      ok = std::abs(h - target) < tol;
    }
    if (!ok)
      throw NumericalError("t-SNE: perplexity calibration failed at point " + std::to_string(i) +
                           " (entropy " + std::to_string(h) + ", target " + std::to_string(target) + ")");
    for (Index j = 0; j < n; ++j) P(i, j) = w[static_cast<std::size_t>(j)];
    if (entropy_errors) (*entropy_errors)[static_cast<std::size_t>(i)] = std::abs(h - target);
  }
  return P;
}

namespace {

double kl_divergence(const MatrixXd& P, const MatrixXd& Y) {
  const Index n = Y.rows();
  MatrixXd num(n, n);
  double sum = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + sequential_sq_distance(Y.row(i), Y.row(j)));
      sum += num(i, j);
    }
  double kl = 0.0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double q = std::max(num(i, j) / sum, 1e-12);
      kl += P(i, j) * std::log(P(i, j) / q);
    }
  return kl;
}

}  // namespace

TsneResult tsne_2d(const MatrixXd& points, const TsneConfig& cfg) {
  const Index n = points.rows();
  if (n < 3) throw ConfigError("t-SNE: need at least 3 points");
  if (!(cfg.perplexity > 0.0) || cfg.perplexity >= static_cast<double>(n) / 3.0)
    throw ConfigError("t-SNE: perplexity must be in (0, n/3); got " + std::to_string(cfg.perplexity) + " for n=" +
                      std::to_string(n));
  if (cfg.iterations < 1) throw ConfigError("t-SNE: iterations must be >= 1");
  if (!points.allFinite()) throw NumericalError("t-SNE: non-finite input");

  MatrixXd D(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) D(i, j) = sequential_sq_distance(points.row(i), points.row(j));

  TsneResult out;
  const MatrixXd Pc = tsne_conditional_p(D, cfg.perplexity, cfg.entropy_tol, &out.entropy_errors);
  MatrixXd P = (Pc + Pc.transpose()) / (2.0 * static_cast<double>(n));
  P = P.cwiseMax(1e-12);
  P.diagonal().setZero();

  Rng rng(derive_seed(cfg.seed, "tsne-init"));
  MatrixXd Y(n, 2);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < 2; ++k) Y(i, k) = 1e-4 * standard_normal(rng);
  MatrixXd update = MatrixXd::Zero(n, 2);
  MatrixXd gains = MatrixXd::Ones(n, 2);
  MatrixXd num(n, n);
  MatrixXd G(n, 2);

  for (int it = 0; it < cfg.iterations; ++it) {
    const double exag = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
    double sum = 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + sequential_sq_distance(Y.row(i), Y.row(j)));
        sum += num(i, j);
      }
    G.setZero();
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / sum, 1e-12);
        const double c = 4.0 * (exag * P(i, j) - q) * num(i, j);
        G(i, 0) += c * (Y(i, 0) - Y(j, 0));
        G(i, 1) += c * (Y(i, 1) - Y(j, 1));
      }
    const double momentum = it < cfg.momentum_switch_iter ? 0.5 : 0.8;
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < 2; ++k) {
        const bool same = (G(i, k) > 0.0) == (update(i, k) > 0.0);
        gains(i, k) = std::max(same ? gains(i, k) * 0.8 : gains(i, k) + 0.2, 0.01);
        update(i, k) = momentum * update(i, k) - cfg.learning_rate * gains(i, k) * G(i, k);
      }
    Y += update;
    Y.rowwise() -= Y.colwise().mean();
    if (!Y.allFinite()) throw NumericalError("t-SNE: embedding diverged at iteration " + std::to_string(it));
    if (it + 1 == cfg.exaggeration_iters) out.kl_after_exaggeration = kl_divergence(P, Y);
  }
  out.kl_final = kl_divergence(P, Y);
  if (cfg.iterations < cfg.exaggeration_iters) out.kl_after_exaggeration = out.kl_final;
  out.embedding = std::move(Y);
  return out;
}

// ---------------------------------------------------------------------------
// Scenes

std::string_view view_name(SceneView view) {
  return view == SceneView::influence ? "influence" : "neighbors";
}

SubspaceScene build_scene(const SceneContext& ctx, const std::string& original_text, const std::string& adversarial_text,
                          std::int64_t source_id, SceneView view, const SceneConfig& cfg) {
  if (cfg.top_k < 1) throw ConfigError("scene: top_k must be >= 1");
  if (static_cast<std::size_t>(cfg.top_k) > ctx.train.size())
    throw ConfigError("scene: fewer than top_k=" + std::to_string(cfg.top_k) + " training points");
  if (ctx.index.layer != cfg.layer) throw ConfigError("scene: index layer does not match scene layer");

  const auto orig_tokens = ctx.model.encode(original_text);
  const auto adv_tokens = ctx.model.encode(adversarial_text);
  const auto orig_pred = predict(ctx.model.params, orig_tokens);
  const auto adv_pred = predict(ctx.model.params, adv_tokens);
  const VectorXd orig_rep = orig_pred.activations.layer(cfg.layer);
  const VectorXd adv_rep = adv_pred.activations.layer(cfg.layer);

  SubspaceScene scene;
  scene.view = view;
  scene.source_id = source_id;
  const auto k = static_cast<std::size_t>(cfg.top_k);
  if (view == SceneView::neighbors) {
    scene.orig_ids = nearest_ids(ctx.index, orig_rep, k);
    scene.adv_ids = nearest_ids(ctx.index, adv_rep, k);
  } else {
    if (!ctx.engine) throw ConfigError("scene: influence view needs an influence engine");
    scene.orig_ids = ctx.engine->top_influences(orig_tokens, orig_pred.label, 2 * source_id, cfg.top_k).helpful;
    scene.adv_ids = ctx.engine->top_influences(adv_tokens, adv_pred.label, 2 * source_id + 1, cfg.top_k).helpful;
  }

  const std::set<std::int64_t> orig_set(scene.orig_ids.begin(), scene.orig_ids.end());
  for (auto id : scene.adv_ids) scene.overlap += static_cast<int>(orig_set.count(id));

  const bool infl = view == SceneView::influence;
  std::vector<VectorXd> reps{orig_rep, adv_rep};
  scene.groups = {"test", "adv"};
  scene.point_ids = {-1, -1};
  for (auto id : scene.orig_ids) {
    reps.push_back(ctx.index.reps.row(ctx.index.row_of(id)).transpose());
    scene.groups.push_back(infl ? "if_orig" : "nn_orig");
    scene.point_ids.push_back(id);
  }
  for (auto id : scene.adv_ids) {
    if (cfg.dedup && orig_set.count(id)) continue;
    reps.push_back(ctx.index.reps.row(ctx.index.row_of(id)).transpose());
    scene.groups.push_back(infl ? "if_adv" : "nn_adv");
    scene.point_ids.push_back(id);
  }
  scene.deduplicated = cfg.dedup && scene.overlap > 0;

  MatrixXd X(static_cast<Index>(reps.size()), ctx.index.dim());
  for (std::size_t i = 0; i < reps.size(); ++i) X.row(static_cast<Index>(i)) = reps[i].transpose();
  TsneConfig tc = cfg.tsne;
  // small scenes (dedup, tiny top_k) need a smaller perplexity
  const double cap = (static_cast<double>(X.rows()) - 1.0) / 3.0;
  if (tc.perplexity >= static_cast<double>(X.rows()) / 3.0) tc.perplexity = cap;
  tc.seed = derive_seed(cfg.tsne.seed, std::string("scene-") + std::string(view_name(view)),
                        static_cast<std::uint64_t>(source_id));
  scene.perplexity = tc.perplexity;
  scene.coords = tsne_2d(X, tc).embedding;
  return scene;
}

void save_scene_csv(const SubspaceScene& scene, const std::string& path, const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "x,y,group,train_id\n";
  for (Index i = 0; i < scene.coords.rows(); ++i)
    out << format_double(scene.coords(i, 0)) << ',' << format_double(scene.coords(i, 1)) << ','
        << scene.groups[static_cast<std::size_t>(i)] << ',' << scene.point_ids[static_cast<std::size_t>(i)] << '\n';
}

// ---------------------------------------------------------------------------
// Linear SVM

SvmResult fit_linear_svm(const MatrixXd& X, std::span<const int> y, const SvmConfig& cfg) {
  const Index n = X.rows(), d = X.cols();
  if (n < 1 || static_cast<Index>(y.size()) != n) throw std::invalid_argument("svm: bad input sizes");
  if (cfg.lambda <= 0.0 || cfg.iterations < 1) throw ConfigError("svm: lambda must be > 0 and iterations >= 1");
  const VectorXd mean = X.colwise().mean().transpose();
  VectorXd sd = ((X.rowwise() - mean.transpose()).array().square().colwise().sum() / static_cast<double>(n)).sqrt().transpose();
  for (Index j = 0; j < d; ++j)
    if (!(sd[j] > 0.0)) sd[j] = 1.0;
  const MatrixXd Xs = (X.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
  VectorXd s(n);
  for (Index i = 0; i < n; ++i) s[i] = y[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;

  auto objective = [&](const VectorXd& w, double b) {
    const VectorXd m = s.array() * ((Xs * w).array() + b);
    return (1.0 - m.array()).max(0.0).mean() + 0.5 * cfg.lambda * w.squaredNorm();
  };

  VectorXd w = VectorXd::Zero(d);
  double b = 0.0;
  SvmResult best{w, b, objective(w, b), 0.0};
  for (int t = 1; t <= cfg.iterations; ++t) {
    const VectorXd m = s.array() * ((Xs * w).array() + b);
    VectorXd gw = cfg.lambda * w;
    double gb = 0.0;
    for (Index i = 0; i < n; ++i)
      if (m[i] < 1.0) {
        gw -= s[i] * Xs.row(i).transpose() / static_cast<double>(n);
        gb -= s[i] / static_cast<double>(n);
      }
    const double eta = cfg.step / std::sqrt(static_cast<double>(t));
    w -= eta * gw;
    b -= eta * gb;
    const double obj = objective(w, b);
    if (obj < best.objective) best = {w, b, obj, 0.0};
  }
  long correct = 0;
  for (Index i = 0; i < n; ++i) {
    const double f = Xs.row(i).dot(best.w) + best.b;
    if ((f >= 0.0) == (s[i] > 0.0)) ++correct;
  }
  best.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return best;
}

std::optional<double> scene_separability(const SubspaceScene& scene, const SvmConfig& cfg) {
  std::vector<Index> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < scene.groups.size(); ++i) {
    const auto& g = scene.groups[i];
    if (g == "test" || g == "adv") continue;
    rows.push_back(static_cast<Index>(i));
    labels.push_back(g.ends_with("_orig") ? 1 : 0);
  }
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(labels.size())) return std::nullopt;
  MatrixXd X(static_cast<Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) X.row(static_cast<Index>(i)) = scene.coords.row(rows[i]);
  return fit_linear_svm(X, labels, cfg).train_accuracy;
}

double proportions_ztest_one_tailed(double acc_a, double acc_b, long n) {
  if (n < 1) throw ConfigError("z-test: n must be >= 1");
  if (acc_a < 0 || acc_a > 1 || acc_b < 0 || acc_b > 1) throw ConfigError("z-test: proportions must be in [0, 1]");
  const double pooled = 0.5 * (acc_a + acc_b);
  const double se = std::sqrt(pooled * (1.0 - pooled) * 2.0 / static_cast<double>(n));
  if (acc_a == acc_b) return 0.5;
  if (se == 0.0) return acc_a > acc_b ? 0.0 : 1.0;
  const double z = (acc_a - acc_b) / se;
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

SeparabilityResult separability(std::span<const SubspaceScene> influence_scenes,
                                std::span<const SubspaceScene> neighbor_scenes, const SvmConfig& cfg) {
  SeparabilityResult r;
  long points_if = 0, points_nn = 0;
  for (const auto& s : influence_scenes) {
    if (auto a = scene_separability(s, cfg)) {
      r.influence_accuracies.push_back(*a);
      points_if += static_cast<long>(s.groups.size()) - 2;
    } else {
      ++r.skipped;
    }
  }
  for (const auto& s : neighbor_scenes) {
    if (auto a = scene_separability(s, cfg)) {
      r.neighbor_accuracies.push_back(*a);
      points_nn += static_cast<long>(s.groups.size()) - 2;
    } else {
      ++r.skipped;
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
  };
  r.influence_mean = mean(r.influence_accuracies);
  r.neighbor_mean = mean(r.neighbor_accuracies);
  r.n_trials = std::min(points_if, points_nn);
  if (r.n_trials > 0) r.p_value = proportions_ztest_one_tailed(r.influence_mean, r.neighbor_mean, r.n_trials);
  return r;
}

// ---------------------------------------------------------------------------
// M sweep

MSweepResult m_sweep(const NnifEvidence& evidence, const DetectionDataset& ds, std::span<const int> m_values,
                     const LogRegConfig& logreg) {
  MSweepResult out;
  out.counters = evidence.counters;
  for (int m : m_values) {
    const auto run = nnif_detector_from_evidence(evidence, ds, m, logreg);
    out.curve.push_back({m, run.metrics.accuracy, run.metrics.auc});
  }
  return out;
}

MSweepResult m_sweep(const TargetModel& model, std::span<const EncodedExample> train, const DetectionDataset& ds,
                     std::span<const int> m_values, NnifConfig cfg) {
  if (m_values.empty()) throw ConfigError("m-sweep: no M values");
  const int m_max = *std::max_element(m_values.begin(), m_values.end());
  if (*std::min_element(m_values.begin(), m_values.end()) < 1) throw ConfigError("m-sweep: M must be >= 1");
  const std::size_t s = std::min(cfg.sample_size, train.size());
  if (2 * static_cast<std::size_t>(m_max) > s)
    throw ConfigError("m-sweep: 2 * max(M) = " + std::to_string(2 * m_max) + " exceeds sample size " +
                      std::to_string(s));
  cfg.m = m_max;
  const auto evidence = compute_nnif_evidence(model, train, ds, cfg);
  auto out = m_sweep(evidence, ds, m_values, cfg.logreg);
  if (out.counters.ihvp != static_cast<long>(ds.records.size()))
    throw std::logic_error("m-sweep: expected one inverse HVP per record");
  return out;
}

}  // namespace nnif
