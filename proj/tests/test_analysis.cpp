#include <doctest.h>

#include <fstream>
#include <set>

#include "helpers.hpp"

using namespace nnif;

namespace {

Eigen::MatrixXd two_clusters(int per_cluster, int d, double gap, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd X(2 * per_cluster, d);
  for (int i = 0; i < 2 * per_cluster; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = standard_normal(rng) + (i >= per_cluster && j == 0 ? gap : 0.0);
  return X;
}

/// Monte-Carlo permutation p-value for "group a has more successes"; ties
/// with the observed difference count half (mid-p), the discrete analogue of
/// the normal tail.
double permutation_p(int succ_a, int succ_b, int n, int shuffles, std::uint64_t seed) {
  std::vector<int> pooled;
  for (int i = 0; i < 2 * n; ++i) pooled.push_back(i < succ_a + succ_b ? 1 : 0);
  Rng rng(seed);
  const int observed = succ_a - succ_b;
  double extreme = 0.0;
  for (int s = 0; s < shuffles; ++s) {
    shuffle_range(pooled.begin(), pooled.end(), rng);
    int a = 0;
    for (int i = 0; i < n; ++i) a += pooled[static_cast<std::size_t>(i)];
    const int diff = a - (succ_a + succ_b - a);
    extreme += diff > observed ? 1.0 : diff == observed ? 0.5 : 0.0;
  }
  return extreme / shuffles;
}

SubspaceScene labelled_scene(const Eigen::MatrixXd& orig, const Eigen::MatrixXd& adv) {
  SubspaceScene s;
  s.coords.resize(2 + orig.rows() + adv.rows(), 2);
  s.coords.row(0) << 0, 0;
  s.coords.row(1) << 0, 0;
  s.groups = {"test", "adv"};
  s.point_ids = {-1, -1};
  for (Eigen::Index i = 0; i < orig.rows(); ++i) {
    s.coords.row(2 + i) = orig.row(i);
    s.groups.push_back("nn_orig");
    s.point_ids.push_back(i);
  }
  for (Eigen::Index i = 0; i < adv.rows(); ++i) {
    s.coords.row(2 + orig.rows() + i) = adv.row(i);
    s.groups.push_back("nn_adv");
    s.point_ids.push_back(100 + i);
  }
  return s;
}

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("t-SNE perplexity calibration") {
    const auto X = two_clusters(30, 10, 5.0, 1);
    Eigen::MatrixXd D(60, 60);
    for (int i = 0; i < 60; ++i)
      for (int j = 0; j < 60; ++j) D(i, j) = (X.row(i) - X.row(j)).squaredNorm();
    std::vector<double> err;
    const auto P = tsne_conditional_p(D, 15.0, 1e-5, &err);
    for (int i = 0; i < 60; ++i) {
      CHECK(P(i, i) == 0.0);
      CHECK(P.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
      double h = 0.0;
      for (int j = 0; j < 60; ++j)
        if (P(i, j) > 0) h -= P(i, j) * std::log(P(i, j));
      CHECK(std::abs(h - std::log(15.0)) < 1e-5);
    }
    CHECK(*std::max_element(err.begin(), err.end()) < 1e-5);
  }

  TEST_CASE("t-SNE keeps well-separated clusters apart and lowers KL") {
    const auto X = two_clusters(30, 10, 100.0, 2);
    TsneConfig cfg;
    cfg.seed = 3;
    const auto res = tsne_2d(X, cfg);
    CHECK(res.embedding.rows() == 60);
    double intra = 0.0, inter = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 60; ++i)
      for (int j = i + 1; j < 60; ++j) {
        const double d = (res.embedding.row(i) - res.embedding.row(j)).norm();
        if ((i < 30) == (j < 30)) intra = std::max(intra, d);
        else inter = std::min(inter, d);
      }
    CHECK(inter > intra);
    CHECK(res.kl_final <= res.kl_after_exaggeration);
    CHECK(*std::max_element(res.entropy_errors.begin(), res.entropy_errors.end()) < 1e-5);
    CHECK(tsne_2d(X, cfg).embedding == res.embedding);
  }

  TEST_CASE("t-SNE guards") {
    CHECK_THROWS_AS(tsne_2d(Eigen::MatrixXd::Random(3, 4)), ConfigError);
    TsneConfig cfg;
    cfg.perplexity = 1.0;
    CHECK_THROWS_AS(tsne_2d(Eigen::MatrixXd::Random(3, 4), cfg), ConfigError);
  }

  TEST_CASE("linear SVM: separable groups and identical sets") {
    Rng rng(4);
    Eigen::MatrixXd a(25, 2), b(25, 2);
    for (int i = 0; i < 25; ++i) {
      a.row(i) << -3 + standard_normal(rng) * 0.5, standard_normal(rng);
      b.row(i) << 3 + standard_normal(rng) * 0.5, standard_normal(rng);
    }
    const auto sep = scene_separability(labelled_scene(a, b));
    REQUIRE(sep.has_value());
    CHECK(*sep == 1.0);
    const auto same = scene_separability(labelled_scene(a, a));
    REQUIRE(same.has_value());
    CHECK(*same == doctest::Approx(0.5).epsilon(0.02));
    CHECK_FALSE(scene_separability(labelled_scene(a, Eigen::MatrixXd(0, 2))).has_value());
  }

  TEST_CASE("proportions z-test") {
    CHECK(proportions_ztest_one_tailed(0.6, 0.6, 100) == 0.5);
    CHECK(proportions_ztest_one_tailed(0.6875, 0.5626, 1000 * 100) < 1e-5);
    CHECK(proportions_ztest_one_tailed(0.5626, 0.6875, 1000 * 100) > 1 - 1e-5);
    for (auto [sa, sb] : {std::pair{180, 156}, std::pair{150, 147}, std::pair{200, 170}}) {
      const int n = 300;
      const double z = proportions_ztest_one_tailed(static_cast<double>(sa) / n, static_cast<double>(sb) / n, n);
      CHECK(std::abs(z - permutation_p(sa, sb, n, 20000, 5)) < 0.02);
    }
  }

  TEST_CASE("separability aggregates scenes") {
    Rng rng(6);
    Eigen::MatrixXd a(10, 2), b(10, 2);
    for (int i = 0; i < 10; ++i) {
      a.row(i) << -2 + 0.1 * standard_normal(rng), 0;
      b.row(i) << 2 + 0.1 * standard_normal(rng), 0;
    }
    auto inf = labelled_scene(a, b);
    inf.view = SceneView::influence;
    for (std::size_t i = 2; i < inf.groups.size(); ++i) inf.groups[i] = inf.groups[i] == "nn_orig" ? "if_orig" : "if_adv";
    const auto nn = labelled_scene(a, a);
    const std::vector<SubspaceScene> ifs{inf, inf}, nns{nn, nn};
    const auto r = separability(ifs, nns);
    CHECK(r.influence_mean == 1.0);
    CHECK(r.neighbor_mean == doctest::Approx(0.5).epsilon(0.05));
    CHECK(r.n_trials == 40);
    CHECK(r.p_value < 0.001);
  }

  TEST_CASE("scenes: sizes and id consistency") {
    const auto& w = testing::small_world();
    const auto index = build_index(w.model.params, w.train, Layer::h2);
    LissaConfig lc;
    lc.depth = 20;
    lc.repeats = 1;
    InfluenceEngine engine(w.model.params, w.train, lc, 120, 7);
    const SceneContext ctx{w.model, w.train, index, &engine};
    SceneConfig cfg;
    cfg.tsne.iterations = 300;
    const auto& ex = w.splits.test.examples[0];
    const std::string adv = ex.text + " dull";

    const auto nn = build_scene(ctx, ex.text, adv, ex.id, SceneView::neighbors, cfg);
    CHECK(nn.orig_ids == nearest_ids(index, predict(w.model.params, w.model.encode(ex.text)).activations.layer(Layer::h2), 25));
    CHECK(nn.coords.rows() == 52);
    CHECK(nn.groups.size() == 52);

    const auto is = build_scene(ctx, ex.text, adv, ex.id, SceneView::influence, cfg);
    const auto tok = w.model.encode(ex.text);
    const auto rep = engine.top_influences(tok, predict(w.model.params, tok).label, 2 * ex.id, 25);
    CHECK(is.orig_ids == rep.helpful);
    CHECK(is.coords.rows() == 52);

    cfg.dedup = true;
    const auto dd = build_scene(ctx, ex.text, adv, ex.id, SceneView::neighbors, cfg);
    CHECK(dd.coords.rows() == 52 - dd.overlap);
    CHECK(dd.deduplicated == (dd.overlap > 0));

    const auto path = testing::temp_path("scene.csv");
    save_scene_csv(nn, path, "seed=7");
    std::ifstream in(path);
    std::string line;
    int rows = 0;
    bool header = false;
    while (std::getline(in, line)) {
      if (line.rfind("#", 0) == 0) continue;
      if (!header) {
        CHECK(line == "x,y,group,train_id");
        header = true;
        continue;
      }
      ++rows;
    }
    CHECK(rows == 52);
  }

  TEST_CASE("M sweep: one evidence pass, one point per M") {
    const auto& w = testing::small_world();
    const auto& ds = testing::small_detection();
    NnifConfig nc;
    nc.sample_size = 100;
    nc.lissa.depth = 20;
    nc.lissa.repeats = 1;
    nc.threads = 2;
    const std::vector<int> ms{2, 5, 10};
    const auto sweep = m_sweep(w.model, w.train, ds, ms, nc);
    REQUIRE(sweep.curve.size() == 3);
    CHECK(sweep.counters.ihvp == static_cast<long>(ds.records.size()));
    for (std::size_t i = 0; i < 3; ++i) CHECK(sweep.curve[i].m == ms[i]);
    nc.m = 5;
    const auto direct = run_nnif_detector(w.model, w.train, ds, nc);
    CHECK(direct.metrics.accuracy == sweep.curve[1].accuracy);
  }
}
