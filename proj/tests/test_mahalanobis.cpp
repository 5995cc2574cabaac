#include <doctest.h>

#include "helpers.hpp"

using namespace nnif;

TEST_SUITE("mahalanobis") {
  TEST_CASE("duplicated class points give lambda times identity") {
    Eigen::MatrixXd reps(4, 2);
    reps << 0, 0, 0, 0, 2, 0, 2, 0;
    const std::vector<int> labels{0, 0, 1, 1};
    const auto g = fit_gaussian(reps, labels, 2, Layer::h2, {0.5, true});
    CHECK(g.means.row(0) == Eigen::RowVector2d(0, 0));
    CHECK(g.means.row(1) == Eigen::RowVector2d(2, 0));
    CHECK(g.covariance.isApprox(0.5 * Eigen::Matrix2d::Identity()));
    CHECK(g.lambda == 0.5);
  }

  TEST_CASE("covariance agrees with a two-pass oracle") {
    Rng rng(1);
    const int n = 200, d = 5;
    Eigen::MatrixXd reps(n, d);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      labels[static_cast<std::size_t>(i)] = static_cast<int>(uniform_index(rng, 3));
      for (int j = 0; j < d; ++j) reps(i, j) = 3.0 * labels[static_cast<std::size_t>(i)] + standard_normal(rng) * (1 + j);
    }
    GaussianFitOptions opts{1e-3, false};
    const auto g = fit_gaussian(reps, labels, 3, Layer::h1, opts);

    // pass 1: means; pass 2: scatter accumulated element by element
    std::vector<std::vector<double>> mu(3, std::vector<double>(d, 0.0));
    std::vector<int> cnt(3, 0);
    for (int i = 0; i < n; ++i) {
      const int c = labels[static_cast<std::size_t>(i)];
      ++cnt[static_cast<std::size_t>(c)];
      for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] += reps(i, j);
    }
    for (int c = 0; c < 3; ++c)
      for (int j = 0; j < d; ++j) mu[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] /= cnt[static_cast<std::size_t>(c)];
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
          const auto& m = mu[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
          s += (reps(i, a) - m[static_cast<std::size_t>(a)]) * (reps(i, b) - m[static_cast<std::size_t>(b)]);
        }
        cov(a, b) = s / n + (a == b ? opts.lambda : 0.0);
      }
    CHECK((g.covariance - cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((g.covariance - g.covariance.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((g.precision * g.covariance - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-8);
    for (int c = 0; c < 3; ++c) CHECK(mahal_score(g, Eigen::VectorXd(g.means.row(c).transpose())) == 0.0);
  }

  TEST_CASE("analytic score and monotone decay along a ray") {
    LayerGaussian g;
    g.means.resize(2, 2);
    g.means << 0, 0, 2, 0;
    g.covariance = Eigen::Matrix2d::Identity();
    g.precision = Eigen::Matrix2d::Identity();
    CHECK(mahal_score(g, Eigen::Vector2d(1, 0)) == -1.0);
    const Eigen::Vector2d dir = Eigen::Vector2d(0.3, 1.0).normalized();
    double prev = 0.0;
    for (int t = 1; t < 30; ++t) {
      const double s = mahal_score(g, Eigen::Vector2d(Eigen::Vector2d(1, 0) + t * dir));
      CHECK(s < prev);
      prev = s;
    }
  }

  TEST_CASE("relative lambda scales with the mean variance") {
    Rng rng(2);
    Eigen::MatrixXd reps(50, 3);
    std::vector<int> labels(50);
    for (int i = 0; i < 50; ++i) {
      labels[static_cast<std::size_t>(i)] = i % 2;
      for (int j = 0; j < 3; ++j) reps(i, j) = 10.0 * standard_normal(rng);
    }
    const auto abs = fit_gaussian(reps, labels, 2, Layer::h2, {1e-3, false});
    const auto rel = fit_gaussian(reps, labels, 2, Layer::h2, {1e-3, true});
    const double mean_diag = (abs.covariance.diagonal().array() - 1e-3).mean();
    CHECK(rel.lambda == doctest::Approx(1e-3 * mean_diag).epsilon(1e-12));
    CHECK_THROWS_AS(fit_gaussian(reps.topRows(3), std::vector<int>{0, 1, 1}, 2, Layer::h2), ConfigError);
  }

  TEST_CASE("features: shapes, consistency and sign") {
    const auto& w = testing::small_world();
    const auto layers = available_layers(w.model.params.config);
    REQUIRE(layers.size() == 4);
    const auto stats = fit_class_gaussians(w.model.params, w.train, layers);
    for (std::size_t i = 0; i < 10; ++i) {
      const auto act = forward(w.model.params, w.test[i].tokens);
      const auto ens = mahal_features(stats, act, MahalVariant::ensemble);
      const auto pen = mahal_features(stats, act, MahalVariant::penultimate);
      CHECK(ens.size() == 4);
      CHECK(pen.size() == 1);
      CHECK(pen[0] == ens[2]);
      CHECK((ens.array() <= 0.0).all());
    }
    const auto base = testing::temp_path("gauss");
    save_gaussian_stats(stats, base);
    const auto back = load_gaussian_stats(base);
    CHECK(back.at(Layer::h2).precision == stats.at(Layer::h2).precision);
    CHECK(back.at(Layer::pooled).means == stats.at(Layer::pooled).means);
  }
}
