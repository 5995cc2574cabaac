#include <doctest.h>

#include <set>

#include "helpers.hpp"

using namespace nnif;

namespace {

Eigen::MatrixXd random_spd(int n, double cond, std::uint64_t seed) {
  Eigen::MatrixXd G(n, n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) G(i, j) = standard_normal(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  const Eigen::MatrixXd Q = qr.householderQ();
  Eigen::VectorXd eig(n);
  for (int i = 0; i < n; ++i) eig[i] = std::pow(cond, static_cast<double>(i) / (n - 1));
  return Q * eig.asDiagonal() * Q.transpose();
}

ModelConfig convex_config() {
  auto c = testing::mini_config({}, 2);
  c.freeze_embeddings = true;
  return c;
}

/// Dense mean Hessian of the training loss, column by column.
Eigen::MatrixXd dense_hessian(const ModelParams& p, std::span<const EncodedExample> data) {
  Eigen::MatrixXd H(p.dim(), p.dim());
  for (Eigen::Index i = 0; i < p.dim(); ++i) H.col(i) = hvp(p, data, Eigen::VectorXd::Unit(p.dim(), i));
  return 0.5 * (H + H.transpose());
}

}  // namespace

TEST_SUITE("influence") {
  TEST_CASE("LiSSA inverts a known SPD quadratic") {
    const auto A = random_spd(50, 100.0, 1);
    const auto v = testing::random_vector(50, 2);
    LissaConfig cfg;
    cfg.depth = 500;
    cfg.repeats = 1;
    cfg.scale = 60.0;
    cfg.damping = 0.0;
    const auto x = lissa([&](const Eigen::VectorXd& r, Rng&) { return Eigen::VectorXd(A * r); }, v, cfg);
    const Eigen::VectorXd exact = A.llt().solve(v);
    CHECK((x - exact).norm() / exact.norm() < 0.05);

    // zero-mean symmetric noise on every product; averaging over repeats
    cfg.repeats = 8;
    const auto noisy = lissa(
        [&](const Eigen::VectorXd& r, Rng& rng) {
          Eigen::MatrixXd E(50, 50);
          for (int i = 0; i < 50; ++i)
            for (int j = 0; j < 50; ++j) E(i, j) = 0.02 * standard_normal(rng);
          return Eigen::VectorXd((A + 0.5 * (E + E.transpose())) * r);
        },
        v, cfg);
    CHECK((noisy - exact).norm() / exact.norm() < 0.05);
  }

  TEST_CASE("LiSSA divergence is a numerical error") {
    LissaConfig cfg;
    cfg.scale = 1.0;
    cfg.damping = 0.0;
    const auto v = testing::random_vector(5, 3);
    CHECK_THROWS_AS(lissa([](const Eigen::VectorXd& r, Rng&) { return Eigen::VectorXd(10.0 * r); }, v, cfg),
                    NumericalError);
  }

  TEST_CASE("inverse HVP: zero input and linearity") {
    const auto& w = testing::small_world();
    const auto& p = w.model.params;
    LissaConfig cfg;
    cfg.depth = 50;
    cfg.repeats = 2;
    cfg.seed = 4;
    CHECK(inverse_hvp_lissa(p, w.train, Eigen::VectorXd::Zero(p.dim()), cfg).isZero(0.0));
    const auto v = grad(p, w.test[0]);
    const auto a = inverse_hvp_lissa(p, w.train, v, cfg);
    const auto b = inverse_hvp_lissa(p, w.train, 2.0 * v, cfg);
    CHECK((b - 2.0 * a).norm() / (2.0 * a.norm()) < 0.05);
  }

  TEST_CASE("score is zero for zero gradient and equal for duplicates") {
    const auto c = convex_config();
    auto p = testing::random_params(c, 5);
    auto data = testing::random_examples(c, 3, 6);
    data[2].tokens = data[1].tokens;
    data[2].label = data[1].label;
    data[2].id = 2;
    const auto ihvp = testing::random_vector(p.dim(), 7);
    CHECK(influence_score(p, data[1], ihvp) == influence_score(p, data[2], ihvp));
    p.flat.setZero();
    p.bias(0) << 50.0, -50.0;
    data[0].label = 0;  // probability of the true class is 1 to machine precision
    CHECK(std::abs(influence_score(p, data[0], ihvp)) < 1e-30);
  }

  TEST_CASE("top influence on a 4-point set matches exhaustive scoring") {
    const auto c = convex_config();
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
      const auto p = testing::random_params(c, seed);
      const auto train = testing::random_examples(c, 4, seed + 100);
      Rng rng(seed);
      const auto z_test = testing::random_example(c, rng, 99);
      LissaConfig cfg;
      cfg.depth = 1000;
      cfg.repeats = 8;
      cfg.batch_size = 64;
      const auto rep = top_influences(p, train, z_test, 1, 4, seed, cfg);

      const auto H = dense_hessian(p, train);
      const Eigen::MatrixXd damped = H + cfg.scale * cfg.damping * Eigen::MatrixXd::Identity(p.dim(), p.dim());
      const Eigen::VectorXd ihvp = damped.ldlt().solve(grad(p, z_test));
      std::vector<double> exact;
      for (const auto& z : train) exact.push_back(ihvp.dot(grad(p, z)));
      const auto best = std::max_element(exact.begin(), exact.end()) - exact.begin();
      const auto worst = std::min_element(exact.begin(), exact.end()) - exact.begin();
      REQUIRE(rep.helpful.size() == 1);
      CHECK(rep.helpful[0] == train[static_cast<std::size_t>(best)].id);
      CHECK(rep.harmful[0] == train[static_cast<std::size_t>(worst)].id);
      for (std::size_t i = 0; i < 4; ++i)
        CHECK(rep.scores[i] == doctest::Approx(exact[i]).epsilon(0.05).scale(1e-3 * (std::abs(exact[best]) + 1e-12)));
    }
  }

  TEST_CASE("report shape, disjointness, ordering and guards") {
    const auto& w = testing::small_world();
    LissaConfig cfg;
    cfg.depth = 30;
    cfg.repeats = 1;
    InfluenceEngine engine(w.model.params, w.train, cfg, 100, 3);
    CHECK(engine.sample_size() == 100);
    CHECK(std::is_sorted(engine.sample().begin(), engine.sample().end()));
    const auto& ex = w.test[0];
    const auto rep = engine.top_influences(ex.tokens, ex.label, 0, 50);
    CHECK(rep.helpful.size() == 50);
    CHECK(rep.harmful.size() == 50);
    std::set<std::int64_t> h(rep.helpful.begin(), rep.helpful.end());
    for (auto id : rep.harmful) CHECK(h.count(id) == 0);
    std::map<std::int64_t, double> score;
    for (std::size_t i = 0; i < rep.scores.size(); ++i) score[rep.sampled_train_ids[i]] = rep.scores[i];
    for (std::size_t i = 1; i < rep.helpful.size(); ++i) CHECK(score[rep.helpful[i - 1]] >= score[rep.helpful[i]]);
    for (std::size_t i = 1; i < rep.harmful.size(); ++i) CHECK(score[rep.harmful[i - 1]] <= score[rep.harmful[i]]);
    CHECK(*std::min_element(rep.scores.begin(), rep.scores.end()) <= score[rep.harmful[0]]);
    CHECK_THROWS_AS(engine.top_influences(ex.tokens, ex.label, 0, 0), ConfigError);
    CHECK_THROWS_AS(engine.top_influences(ex.tokens, ex.label, 0, 51), ConfigError);

    const auto again = engine.top_influences(ex.tokens, ex.label, 0, 50);
    CHECK(again.scores == rep.scores);
    const auto cut = rep.truncated(5);
    CHECK(cut.helpful == std::vector<std::int64_t>(rep.helpful.begin(), rep.helpful.begin() + 5));
  }

  TEST_CASE("defaults and counters") {
    CHECK(kDefaultInfluenceSample == 6000);
    CHECK(kDefaultTopM == 500);
    const auto& w = testing::small_world();
    LissaConfig cfg;
    cfg.depth = 20;
    cfg.repeats = 3;
    InfluenceEngine engine(w.model.params, w.train, cfg, 40, 1);
    engine.top_influences(w.test[0].tokens, w.test[0].label, 0, 5);
    engine.top_influences(w.test[1].tokens, w.test[1].label, 1, 5);
    const auto k = engine.counters();
    CHECK(k.ihvp == 2);
    CHECK(k.hvp == 2 * 20 * 3);
    CHECK(k.grad == 2 * (1 + 40));
    CHECK(k.inner == 2 * 40);
    engine.reset_counters();
    CHECK(engine.counters().ihvp == 0);
  }

  TEST_CASE("report file round-trip") {
    const auto& w = testing::small_world();
    LissaConfig cfg;
    cfg.depth = 10;
    cfg.repeats = 1;
    const auto rep = top_influences(w.model.params, w.train, w.test[0], 3, 20, 2, cfg);
    const auto path = testing::temp_path("report.json");
    save_influence_report(rep, path, true);
    const auto back = load_influence_report(path);
    CHECK(back.helpful == rep.helpful);
    CHECK(back.harmful == rep.harmful);
    CHECK(back.scores == rep.scores);
  }
}
