#include <doctest.h>

#include "helpers.hpp"

using namespace nnif;

namespace {

RepIndex make_index(const Eigen::MatrixXd& reps, std::vector<std::int64_t> ids) {
  RepIndex idx;
  idx.reps = reps;
  idx.ids = std::move(ids);
  return idx;
}

Eigen::MatrixXd random_matrix(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = standard_normal(rng);
  return m;
}

}  // namespace

TEST_SUITE("neighbors") {
  TEST_CASE("index shape and rebuild determinism") {
    const auto& w = testing::small_world();
    const std::span<const EncodedExample> three(w.train.data(), 3);
    const auto idx = build_index(w.model.params, three, Layer::h2);
    CHECK(idx.size() == 3);
    CHECK(idx.dim() == 16);
    const auto again = build_index(w.model.params, three, Layer::h2);
    CHECK(idx.reps == again.reps);
    CHECK(idx.ids == again.ids);
    CHECK(build_index(w.model.params, three, Layer::logits).dim() == 2);
  }

  TEST_CASE("sequential distance is symmetric bit for bit") {
    const auto m = random_matrix(2, 37, 1);
    const Eigen::VectorXd a = m.row(0), b = m.row(1);
    CHECK(sequential_sq_distance(a, b) == sequential_sq_distance(b, a));
    CHECK(sequential_sq_distance(a, b) == doctest::Approx((a - b).squaredNorm()).epsilon(1e-14));
  }

  TEST_CASE("self query ranks first, duplicates by id") {
    auto reps = random_matrix(6, 3, 2);
    reps.row(4) = reps.row(1);
    const auto idx = make_index(reps, {10, 15, 11, 12, 13, 14});
    const Eigen::VectorXd q = reps.row(2);
    const std::vector<std::int64_t> self{11};
    const auto rd = query_ranks_distances(idx, q, self);
    CHECK(rd.ranks[0] == 1);
    CHECK(rd.dists[0] == 0.0);
    const Eigen::VectorXd q2 = reps.row(1);
    const std::vector<std::int64_t> dup{15, 13};
    const auto r2 = query_ranks_distances(idx, q2, dup);
    CHECK(r2.ranks == std::vector<int>{2, 1});
    CHECK_THROWS(query_ranks_distances(idx, q2, std::vector<std::int64_t>{99}));
  }

  TEST_CASE("collinear points rank in order") {
    Eigen::MatrixXd reps(3, 2);
    reps << 2, 0, 0, 0, 1, 0;
    const auto idx = make_index(reps, {0, 1, 2});
    const std::vector<std::int64_t> ids{1, 2, 0};
    const auto rd = query_ranks_distances(idx, Eigen::Vector2d(0, 0), ids);
    CHECK(rd.ranks == std::vector<int>{1, 2, 3});
    CHECK(rd.dists == std::vector<double>{0.0, 1.0, 2.0});
    CHECK(nearest_ids(idx, Eigen::Vector2d(0, 0), 2) == std::vector<std::int64_t>{1, 2});
  }

  TEST_CASE("ranks agree with an O(n^2) re-sort oracle") {
    const auto reps = random_matrix(100, 5, 3);
    std::vector<std::int64_t> ids(100);
    for (int i = 0; i < 100; ++i) ids[static_cast<std::size_t>(i)] = 1000 - 7 * i;
    const auto idx = make_index(reps, ids);
    const auto q = testing::random_vector(5, 4);
    const auto rd = query_ranks_distances(idx, q, ids);
    for (int i = 0; i < 100; ++i) {
      const double di = (reps.row(i).transpose() - q).norm();
      int rank = 1;
      for (int j = 0; j < 100; ++j) {
        const double dj = (reps.row(j).transpose() - q).norm();
        if (dj < di || (dj == di && ids[static_cast<std::size_t>(j)] < ids[static_cast<std::size_t>(i)])) ++rank;
      }
      CHECK(rd.ranks[static_cast<std::size_t>(i)] == rank);
      CHECK(rd.dists[static_cast<std::size_t>(i)] == doctest::Approx(di).epsilon(1e-12));
    }
  }

  TEST_CASE("LID: degenerate, line segment and scale invariance") {
    const auto flat = lid_from_distances(std::vector<double>(10, 2.0), 5);
    CHECK(flat.degenerate);
    CHECK(std::isinf(flat.value));

    Rng rng(5);
    Eigen::MatrixXd reps(2000, 4);
    const Eigen::Vector4d dir = Eigen::Vector4d(1, 2, -1, 0.5).normalized();
    for (int i = 0; i < 2000; ++i) reps.row(i) = uniform01(rng) * dir.transpose();
    std::vector<std::int64_t> ids(2000);
    for (int i = 0; i < 2000; ++i) ids[static_cast<std::size_t>(i)] = i;
    const auto idx = make_index(reps, ids);
    for (double t : {0.3, 0.5, 0.71}) {
      const auto est = lid_estimate(t * dir, idx, 20);
      CHECK(est.value >= 0.6);
      CHECK(est.value <= 1.6);
      CHECK_FALSE(est.degenerate);
    }

    const auto d = all_distances(idx, 0.4 * dir);
    std::vector<double> scaled(d);
    for (auto& x : scaled) x *= 7.5;
    CHECK(lid_from_distances(d, 20).value == doctest::Approx(lid_from_distances(scaled, 20).value).epsilon(1e-12));
    CHECK_THROWS(lid_from_distances(d, 1));
  }

  TEST_CASE("index file round-trip") {
    const auto reps = random_matrix(7, 3, 6);
    const auto idx = make_index(reps, {1, 2, 3, 4, 5, 6, 7});
    const auto base = testing::temp_path("index");
    save_index(idx, base);
    const auto back = load_index(base);
    CHECK(back.reps == idx.reps);
    CHECK(back.ids == idx.ids);
  }
}
