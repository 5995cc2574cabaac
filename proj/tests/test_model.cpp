#include <doctest.h>

#include "helpers.hpp"

using namespace nnif;

namespace {

Eigen::VectorXd fd_grad(ModelParams p, const EncodedExample& ex, double h) {
  Eigen::VectorXd g(p.dim());
  for (Eigen::Index i = 0; i < p.dim(); ++i) {
    const double x = p.flat[i];
    p.flat[i] = x + h;
    const double up = loss(p, ex);
    p.flat[i] = x - h;
    const double down = loss(p, ex);
    p.flat[i] = x;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("init: determinism, pad row and flat length") {
    const auto c = testing::mini_config();
    const auto a = init_model(c), b = init_model(c);
    CHECK(a.flat == b.flat);
    CHECK(a.embedding().row(0).isZero(0.0));
    const long expected = 20 * 4 + (4 * 4 + 4) + (4 * 4 + 4) + (4 * 3 + 3);
    CHECK(a.dim() == expected);
    CHECK(ParamLayout(c).size() == static_cast<std::size_t>(expected));
  }

  TEST_CASE("config validation") {
    auto c = testing::mini_config();
    c.hidden_dims = {4, 4, 4};
    CHECK_THROWS_AS(init_model(c), ConfigError);
    c = testing::mini_config();
    c.n_classes = 1;
    CHECK_THROWS_AS(init_model(c), ConfigError);
    CHECK(available_layers(testing::mini_config({})) == std::vector<Layer>{Layer::pooled, Layer::logits});
    CHECK(penultimate_layer(testing::mini_config({4})) == Layer::h1);
    CHECK(parse_layer("h2") == Layer::h2);
    CHECK_THROWS_AS(parse_layer("h9"), ConfigError);
  }

  TEST_CASE("forward: zero weights give bias logits; probs normalized") {
    const auto c = testing::mini_config();
    ModelParams p(c);
    p.bias(p.layout.n_dense() - 1) << 0.3, -0.2, 0.1;
    Rng rng(1);
    const auto ex = testing::random_example(c, rng, 0);
    const auto act = forward(p, ex.tokens);
    CHECK((act.logits - Eigen::Vector3d(0.3, -0.2, 0.1)).norm() == doctest::Approx(0.0));
    p.bias(p.layout.n_dense() - 1).setZero();
    const auto uni = forward(p, ex.tokens);
    for (int k = 0; k < 3; ++k) CHECK(uni.probs[k] == doctest::Approx(1.0 / 3));

    const auto q = testing::random_params(c, 2);
    for (int i = 0; i < 20; ++i) {
      const auto e = testing::random_example(c, rng, i);
      const auto a1 = forward(q, e.tokens), a2 = forward(q, e.tokens);
      CHECK(std::abs(a1.probs.sum() - 1.0) < 1e-9);
      CHECK(a1.logits == a2.logits);
      CHECK(a1.hidden[1] == a2.hidden[1]);
    }
  }

  TEST_CASE("loss: analytic values and bound") {
    auto c = testing::mini_config({4, 4}, 2);
    ModelParams p(c);
    Rng rng(3);
    const auto ex = testing::random_example(c, rng, 0);
    CHECK(loss(p, ex.tokens, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    p.bias(p.layout.n_dense() - 1) << 40.0, -40.0;
    CHECK(loss(p, ex.tokens, 0) < 1e-30);
    const auto q = testing::random_params(c, 4);
    for (int i = 0; i < 20; ++i) CHECK(loss(q, testing::random_example(c, rng, i)) >= 0.0);
  }

  TEST_CASE("grad matches central finite differences") {
    for (auto hidden : {std::vector<int>{4, 4}, std::vector<int>{4}, std::vector<int>{}}) {
      const auto c = testing::mini_config(hidden);
      const auto p = testing::random_params(c, 5);
      Rng rng(6);
      for (int i = 0; i < 5; ++i) {
        const auto ex = testing::random_example(c, rng, i);
        CHECK(testing::max_rel_error(grad(p, ex), fd_grad(p, ex, 1e-5)) < 1e-4);
      }
    }
  }

  TEST_CASE("pad row and frozen embeddings receive no gradient") {
    auto c = testing::mini_config();
    const auto p = testing::random_params(c, 7);
    Rng rng(8);
    for (int i = 0; i < 10; ++i) {
      const auto g = grad(p, testing::random_example(c, rng, i));
      CHECK(g.head(c.embed_dim).isZero(0.0));
    }
    c.freeze_embeddings = true;
    auto pf = testing::random_params(c, 7);
    const auto ex = testing::random_example(c, rng, 0);
    const auto n_emb = static_cast<Eigen::Index>(pf.layout.embedding_size());
    CHECK(grad(pf, ex).head(n_emb).isZero(0.0));
    const auto v = testing::random_vector(pf.dim(), 9);
    const std::vector<EncodedExample> batch{ex};
    CHECK(hvp(pf, batch, v).head(n_emb).isZero(0.0));
  }

  TEST_CASE("grad vanishes at the optimum of a separable pair") {
    auto c = testing::mini_config({4, 4}, 2);
    c.dropout_rate = 0.0;
    std::vector<EncodedExample> data(2);
    for (int i = 0; i < 2; ++i) {
      data[i].id = i;
      data[i].label = i;
      data[i].tokens.ids = {2 + i, 0, 0, 0, 0, 0, 0, 0};
      data[i].tokens.true_len = 1;
    }
    TrainConfig tc;
    tc.epochs = 3000;
    tc.learning_rate = 0.05;
    tc.weight_decay = 0.0;
    tc.batch_size = 2;
    const auto res = train(testing::random_params(c, 1, 0.1), data, {}, tc);
    CHECK(testing::mean_grad(res.params, data).norm() < 1e-6);
  }

  TEST_CASE("hvp: zero direction, symmetry, linearity, finite differences") {
    const auto c = testing::mini_config();
    const auto p = testing::random_params(c, 10);
    const auto data = testing::random_examples(c, 6, 11);
    const std::span<const EncodedExample> batch(data);
    const auto u = testing::random_vector(p.dim(), 12), v = testing::random_vector(p.dim(), 13);
    CHECK(hvp(p, batch, Eigen::VectorXd::Zero(p.dim())).isZero(0.0));
    const auto Hu = hvp(p, batch, u), Hv = hvp(p, batch, v);
    CHECK(std::abs(u.dot(Hv) - v.dot(Hu)) < 1e-8);
    CHECK((hvp(p, batch, 2.0 * u + v) - (2.0 * Hu + Hv)).norm() < 1e-10 * (1.0 + Hu.norm()));

    const double eps = 1e-4;
    ModelParams plus = p, minus = p;
    plus.flat += eps * v;
    minus.flat -= eps * v;
    const Eigen::VectorXd fd = (testing::mean_grad(plus, data) - testing::mean_grad(minus, data)) / (2 * eps);
    CHECK((fd - Hv).norm() / Hv.norm() < 1e-3);
  }

  TEST_CASE("training: accuracy, trend and determinism") {
    auto [corpus, syn] = generate_synthetic(2, 400, SyntheticSpec::sentiment());
    const auto s = split(corpus, {0.8, 0.0, 0.2}, 2);
    const auto vocab = build_vocab(s.train);
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.seed = 2;
    const auto tr = encode_corpus(s.train, vocab, mc.max_len);
    const auto te = encode_corpus(s.test, vocab, mc.max_len);
    TrainConfig tc;
    tc.seed = 2;
    const auto a = train(init_model(mc), tr, te, tc);
    const auto b = train(init_model(mc), tr, te, tc);
    CHECK(a.params.flat == b.params.flat);
    CHECK(accuracy(a.params, te) > 0.95);
    REQUIRE(a.history.train_loss.size() == 3);
    CHECK(a.history.train_loss[2] <= a.history.train_loss[0]);
  }

  TEST_CASE("predict: argmax, ties and activations") {
    const auto c = testing::mini_config({4, 4}, 2);
    ModelParams p(c);
    Rng rng(14);
    const auto ex = testing::random_example(c, rng, 0);
    p.bias(p.layout.n_dense() - 1) << std::log(0.7), std::log(0.3);
    auto pr = predict(p, ex.tokens);
    CHECK(pr.label == 0);
    CHECK(pr.confidence == doctest::Approx(0.7).epsilon(1e-12));
    p.bias(p.layout.n_dense() - 1) << 0.0, 0.0;
    CHECK(predict(p, ex.tokens).label == 0);
    const auto q = testing::random_params(c, 15);
    pr = predict(q, ex.tokens);
    CHECK(pr.activations.logits == forward(q, ex.tokens).logits);
  }

  TEST_CASE("checkpoint round-trip is exact") {
    const auto c = testing::mini_config();
    TargetModel m{testing::random_params(c, 16), Vocab({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l",
                                                        "m", "n", "o", "p", "q", "r"})};
    const auto path = testing::temp_path("ckpt.json");
    save_checkpoint(m, path);
    const auto back = load_checkpoint(path);
    CHECK(back.params.flat == m.params.flat);
    CHECK(back.params.config == m.params.config);
    CHECK(back.vocab == m.vocab);
    CHECK_THROWS_AS(load_checkpoint(testing::temp_path("missing.json")), ConfigError);
  }
}
