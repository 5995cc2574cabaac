#include "nnif/influence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace nnif {

using Eigen::VectorXd;
using json = nlohmann::json;

void LissaConfig::validate() const {
  if (depth < 1) throw ConfigError("lissa: depth must be >= 1");
  if (repeats < 1) throw ConfigError("lissa: repeats must be >= 1");
  if (!(scale > 0.0)) throw ConfigError("lissa: scale must be > 0");
  if (!(damping >= 0.0 && damping < 1.0)) throw ConfigError("lissa: damping must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("lissa: batch_size must be >= 1");
}

VectorXd lissa(const HvpOracle& hvp, const VectorXd& v, const LissaConfig& cfg) {
  cfg.validate();
  if (!v.allFinite()) throw NumericalError("lissa: non-finite input vector");
  Rng rng(cfg.seed);
  VectorXd estimate = VectorXd::Zero(v.size());
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    VectorXd r = v;
    for (int j = 0; j < cfg.depth; ++j) {
      r = v + (1.0 - cfg.damping) * r - hvp(r, rng) / cfg.scale;
      const double norm = r.norm();
      if (!(norm <= 1e8))
        throw NumericalError("lissa: recursion diverged at depth " + std::to_string(j + 1) +
                             "; increase scale or damping");
    }
    estimate += r / cfg.scale;
  }
  return estimate / static_cast<double>(cfg.repeats);
}

namespace {

HvpOracle model_oracle(const ModelParams& params, std::span<const EncodedExample> train, int batch_size,
                       std::atomic<long>* counter) {
  return [&params, train, batch_size, counter](const VectorXd& r, Rng& rng) {
    std::vector<const EncodedExample*> batch(static_cast<std::size_t>(batch_size));
    for (auto& b : batch) b = &train[uniform_index(rng, train.size())];
    if (counter) ++*counter;
    return hvp(params, std::span<const EncodedExample* const>(batch), r);
  };
}

}  // namespace

GradientVector inverse_hvp_lissa(const ModelParams& params, std::span<const EncodedExample> train,
                                 const GradientVector& v, const LissaConfig& cfg) {
  if (train.empty()) throw ConfigError("inverse_hvp_lissa: empty training set");
  return lissa(model_oracle(params, train, cfg.batch_size, nullptr), v, cfg);
}

double influence_score(const ModelParams& params, const EncodedExample& z_train, const GradientVector& ihvp_test) {
  return ihvp_test.dot(grad(params, z_train));
}

InfluenceReport InfluenceReport::truncated(int m) const {
  InfluenceReport r = *this;
  const auto cut = static_cast<std::size_t>(std::max(0, m));
  if (r.helpful.size() > cut) r.helpful.resize(cut);
  if (r.harmful.size() > cut) r.harmful.resize(cut);
  return r;
}

InfluenceEngine::InfluenceEngine(const ModelParams& params, std::span<const EncodedExample> train,
                                 LissaConfig lissa, std::size_t sample_size, std::uint64_t seed)
    : params_(params), train_(train), lissa_(lissa) {
  lissa_.validate();
  if (train.empty()) throw ConfigError("influence: empty training set");
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "influence-sample"));
  shuffle_range(idx.begin(), idx.end(), rng);
  idx.resize(std::min(sample_size, train.size()));
  std::sort(idx.begin(), idx.end());
  sample_ = std::move(idx);
  // the per-test LiSSA stream derives from this seed and the test id
  lissa_.seed = derive_seed(seed, "lissa");
}

InfluenceReport InfluenceEngine::top_influences(const TokenSeq& test_tokens, int test_label, std::int64_t test_id,
                                                int m) const {
  if (m < 1) throw ConfigError("top_influences: M must be >= 1");
  if (2 * static_cast<std::size_t>(m) > sample_.size())
    throw ConfigError("top_influences: 2M = " + std::to_string(2 * m) + " exceeds sample size " +
                      std::to_string(sample_.size()));
  LissaConfig cfg = lissa_;
  cfg.seed = derive_seed(lissa_.seed, "test", static_cast<std::uint64_t>(test_id));
  const VectorXd g_test = grad(params_, test_tokens, test_label);
  grad_++;
  const VectorXd ihvp = lissa(model_oracle(params_, train_, cfg.batch_size, &hvp_), g_test, cfg);
  ihvp_++;

  InfluenceReport rep;
  rep.test_id = test_id;
  rep.sampled_train_ids.reserve(sample_.size());
  rep.scores.reserve(sample_.size());
  for (std::size_t i : sample_) {
    const auto& z = train_[i];
    rep.sampled_train_ids.push_back(z.id);
    rep.scores.push_back(influence_score(params_, z, ihvp));
    grad_++;
    inner_++;
  }
  if (std::any_of(rep.scores.begin(), rep.scores.end(), [](double s) { return !std::isfinite(s); }))
    throw NumericalError("top_influences: non-finite influence score");
  std::vector<std::size_t> order(rep.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& ids = rep.sampled_train_ids;
  const auto& sc = rep.scores;
  const auto mu = static_cast<std::size_t>(m);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(mu), order.end(),
                    [&](std::size_t a, std::size_t b) { return sc[a] != sc[b] ? sc[a] > sc[b] : ids[a] < ids[b]; });
  for (std::size_t k = 0; k < mu; ++k) rep.helpful.push_back(ids[order[k]]);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(mu), order.end(),
                    [&](std::size_t a, std::size_t b) { return sc[a] != sc[b] ? sc[a] < sc[b] : ids[a] < ids[b]; });
  for (std::size_t k = 0; k < mu; ++k) rep.harmful.push_back(ids[order[k]]);
  return rep;
}

InfluenceCounters InfluenceEngine::counters() const { return {ihvp_.load(), hvp_.load(), grad_.load(), inner_.load()}; }

void InfluenceEngine::reset_counters() {
  ihvp_ = 0;
  hvp_ = 0;
  grad_ = 0;
  inner_ = 0;
}

InfluenceReport top_influences(const ModelParams& params, std::span<const EncodedExample> train,
                               const EncodedExample& z_test, int m, std::size_t sample_size, std::uint64_t seed,
                               const LissaConfig& lissa_cfg) {
  if (sample_size > train.size())
    throw ConfigError("top_influences: sample size exceeds training set");
  InfluenceEngine engine(params, train, lissa_cfg, sample_size, seed);
  return engine.top_influences(z_test.tokens, z_test.label, z_test.id, m);
}

void save_influence_report(const InfluenceReport& report, const std::string& path, bool full_scores) {
  json j;
  j["test_id"] = report.test_id;
  j["helpful"] = report.helpful;
  j["harmful"] = report.harmful;
  j["sample_size"] = report.sampled_train_ids.size();
  json scores = json::object();
  auto put = [&](std::size_t i) { scores[std::to_string(report.sampled_train_ids[i])] = report.scores[i]; };
  if (full_scores) {
    for (std::size_t i = 0; i < report.scores.size(); ++i) put(i);
    j["sampled_train_ids"] = report.sampled_train_ids;
  } else {
    for (std::size_t i = 0; i < report.scores.size(); ++i) {
      const auto id = report.sampled_train_ids[i];
      if (std::find(report.helpful.begin(), report.helpful.end(), id) != report.helpful.end() ||
          std::find(report.harmful.begin(), report.harmful.end(), id) != report.harmful.end())
        put(i);
    }
  }
  j["scores"] = scores;
  j["scores_truncated"] = !full_scores;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write influence report: " + path);
  out << j.dump() << '\n';
}

InfluenceReport load_influence_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open influence report: " + path);
  json j;
  in >> j;
  InfluenceReport r;
  r.test_id = j.at("test_id").get<std::int64_t>();
  r.helpful = j.at("helpful").get<std::vector<std::int64_t>>();
  r.harmful = j.at("harmful").get<std::vector<std::int64_t>>();
  for (const auto& [id, s] : j.at("scores").items()) {
    r.sampled_train_ids.push_back(std::stoll(id));
    r.scores.push_back(s.get<double>());
  }
  // restore ascending id order (JSON object keys are sorted lexicographically)
  std::vector<std::size_t> order(r.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return r.sampled_train_ids[a] < r.sampled_train_ids[b]; });
  InfluenceReport sorted = r;
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted.sampled_train_ids[k] = r.sampled_train_ids[order[k]];
    sorted.scores[k] = r.scores[order[k]];
  }
  return sorted;
}

}  // namespace nnif
