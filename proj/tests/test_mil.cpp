#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <vector>

#include "doctest.h"
#include "stainkit/errors.hpp"
#include "stainkit/mil_classifier.hpp"
#include "stainkit/nn_core.hpp"
#include "stainkit/rng.hpp"
#include "stainkit/stain_transformer.hpp"
#include "stainkit/wsaug.hpp"

using namespace stainkit;

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kFdTol = 1e-4;

nn::Matrix random_matrix(std::size_t r, std::size_t c, rng::Stream& s,
                         double sigma = 1.0) {
  nn::Matrix m(r, c);
  for (double& v : m.data) v = sigma * s.normal();
  return m;
}

double fd_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
}

// Central-difference check of every entry of `grad` against `loss`.
void check_gradient(nn::Matrix& target, const nn::Matrix& grad,
                    const std::function<double()>& loss) {
  REQUIRE(grad.rows == target.rows);
  REQUIRE(grad.cols == target.cols);
  for (std::size_t i = 0; i < target.data.size(); ++i) {
    const double saved = target.data[i];
    target.data[i] = saved + kFdStep;
    const double up = loss();
    target.data[i] = saved - kFdStep;
    const double down = loss();
    target.data[i] = saved;
    const double numeric = (up - down) / (2.0 * kFdStep);
    CHECK(fd_relative_error(grad.data[i], numeric) < kFdTol);
  }
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl =
        (std::filesystem::temp_directory_path() / "stainkit-mil-XXXXXX")
            .string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// Reference AUC: explicit wins + ties/2 over all pos/neg pairs.
double auc_pair_counting(const std::vector<double>& scores,
                         const std::vector<int>& labels) {
  double num = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j])
        num += 1.0;
      else if (scores[i] == scores[j])
        num += 0.5;
    }
  }
  for (int y : labels) n_neg += (y == 0);
  return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

mil::MilParams small_params(std::size_t c, std::size_t d, std::uint64_t seed) {
  mil::MilConfig cfg;
  cfg.dim = c;
  cfg.attn_dim = d;
  rng::Stream s(seed);
  return mil::MilParams::create(cfg, s);
}

}  // namespace

TEST_CASE("mil gradients match finite differences on every tensor") {
  const std::size_t c = 7, d = 4, n = 5;
  mil::MilParams p = small_params(c, d, 11);
  rng::Stream s(21);
  // The head starts at zero by design; give it nonzero values here so its
  // input gradients are exercised through a generic linear layer.
  p.head_w.value = random_matrix(c, 2, s, 0.4);
  p.head_b.value = random_matrix(1, 2, s, 0.1);
  const nn::Matrix x = random_matrix(n, c, s, 1.0);
  const nn::Matrix r = random_matrix(1, 2, s, 1.0);

  auto loss = [&]() {
    const mil::MilOutput out = mil::mil_forward(p, x);
    return out.logits.at(0, 0) * r.at(0, 0) + out.logits.at(0, 1) * r.at(0, 1);
  };

  mil::MilCtx ctx;
  mil::mil_forward(p, x, &ctx);
  mil::mil_backward(p, ctx, r);
  for (nn::ParamTensor* t : p.tensors()) {
    INFO("tensor ", t->name);
    check_gradient(t->value, t->grad, loss);
  }
}

TEST_CASE("attention weights form a simplex and follow permutations") {
  const std::size_t c = 6, d = 5, n = 9;
  mil::MilParams p = small_params(c, d, 3);
  rng::Stream s(5);
  p.head_w.value = random_matrix(c, 2, s, 0.3);
  const nn::Matrix x = random_matrix(n, c, s, 1.2);

  const mil::MilOutput out = mil::mil_forward(p, x);
  REQUIRE(out.attention.size() == n);
  double sum = 0.0;
  for (double a : out.attention) {
    CHECK(a > 0.0);
    CHECK(a < 1.0);
    sum += a;
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);

  // Reverse the instances: logits are unchanged, attention is reversed.
  nn::Matrix rx(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) rx.at(i, j) = x.at(n - 1 - i, j);
  const mil::MilOutput rout = mil::mil_forward(p, rx);
  CHECK(std::abs(rout.logits.at(0, 0) - out.logits.at(0, 0)) < 1e-12);
  CHECK(std::abs(rout.logits.at(0, 1) - out.logits.at(0, 1)) < 1e-12);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(std::abs(rout.attention[i] - out.attention[n - 1 - i]) < 1e-12);
}

TEST_CASE("zero score layer reduces pooling to the instance mean") {
  const std::size_t c = 5, d = 3, n = 8;
  mil::MilParams p = small_params(c, d, 17);
  rng::Stream s(23);
  p.head_w.value = random_matrix(c, 2, s, 0.5);
  p.head_b.value = random_matrix(1, 2, s, 0.2);
  p.w_w.value = nn::Matrix(d, 1);  // zero scores -> uniform attention
  const nn::Matrix x = random_matrix(n, c, s, 1.0);

  const mil::MilOutput out = mil::mil_forward(p, x);
  nn::Matrix mean(1, c);
  for (std::size_t j = 0; j < c; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x.at(i, j);
    mean.at(0, j) = m / static_cast<double>(n);
  }
  const nn::Matrix expect = nn::linear_forward(mean, p.head_w, p.head_b);
  CHECK(std::abs(out.logits.at(0, 0) - expect.at(0, 0)) < 1e-12);
  CHECK(std::abs(out.logits.at(0, 1) - expect.at(0, 1)) < 1e-12);
  for (double a : out.attention)
    CHECK(std::abs(a - 1.0 / static_cast<double>(n)) < 1e-15);
}

TEST_CASE("mil_forward validates inputs") {
  mil::MilParams p = small_params(4, 3, 1);
  CHECK_THROWS_AS(mil::mil_forward(p, nn::Matrix(0, 4)), ValidationError);
  CHECK_THROWS_AS(mil::mil_forward(p, nn::Matrix(2, 5)), ValidationError);
  mil::MilConfig bad;
  bad.dim = 0;
  rng::Stream s(0);
  CHECK_THROWS_AS(mil::MilParams::create(bad, s), ValidationError);
}

TEST_CASE("auc matches pair counting bitwise, ties included") {
  CHECK(mil::auc_mann_whitney({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(mil::auc_mann_whitney({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(mil::auc_mann_whitney({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
  CHECK(mil::auc_mann_whitney({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(mil::auc_mann_whitney({0.1, 0.2}, {1, 1}), ValidationError);
  CHECK_THROWS_AS(mil::auc_mann_whitney({0.1, 0.2}, {0, 2}), ValidationError);

  rng::Stream s(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + static_cast<std::size_t>(s.uniform() * 40);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    // Quantized scores force plenty of ties.
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = std::floor(s.uniform() * 8.0) / 8.0;
      labels[i] = s.uniform() < 0.5 ? 1 : 0;
    }
    labels[0] = 0;
    labels[1] = 1;
    CHECK(mil::auc_mann_whitney(scores, labels) ==
          auc_pair_counting(scores, labels));
  }
}

TEST_CASE("lsa_augment applies with the configured probability") {
  const std::size_t c = 8;
  st::StConfig scfg;
  scfg.dim = c;
  scfg.n_layers = 1;
  scfg.n_experts = 2;
  const std::vector<stats::StyleDescriptor> styles = {
      {60, 10, -6, 12, 6, 4}, {70, 14, -10, 16, 8, 6}};
  const wsaug::StylePrior prior = wsaug::StylePrior::fit(styles);
  rng::Stream init(7);
  st::StParams stp =
      st::StParams::create(scfg, st::StyleNormalizer::from_prior(prior), init);

  rng::Stream fs(13);
  nn::FeatureBag bag;
  bag.features = random_matrix(3, c, fs, 1.0);
  bag.style = {65, 12, -8, 14, 7, 5};
  bag.label = 1;

  mil::LsaConfig cfg;
  cfg.prior = &prior;
  cfg.st = &stp;

  SUBCASE("p=0 always passes features through untouched") {
    cfg.p = 0.0;
    rng::Stream s(1);
    for (int k = 0; k < 100; ++k) {
      const nn::Matrix out = mil::lsa_augment(cfg, bag, s);
      CHECK(std::memcmp(out.data.data(), bag.features.data.data(),
                        sizeof(double) * out.data.size()) == 0);
    }
  }
  SUBCASE("p=0.5 lands near half over many draws") {
    cfg.p = 0.5;
    rng::Stream s(2);
    int changed = 0;
    for (int k = 0; k < 10000; ++k) {
      const nn::Matrix out = mil::lsa_augment(cfg, bag, s);
      if (std::memcmp(out.data.data(), bag.features.data.data(),
                      sizeof(double) * out.data.size()) != 0)
        ++changed;
    }
    CHECK(changed > 4850);
    CHECK(changed < 5150);
  }
  SUBCASE("p=1 always transforms") {
    cfg.p = 1.0;
    rng::Stream s(3);
    for (int k = 0; k < 100; ++k) {
      const nn::Matrix out = mil::lsa_augment(cfg, bag, s);
      CHECK(std::memcmp(out.data.data(), bag.features.data.data(),
                        sizeof(double) * out.data.size()) != 0);
    }
  }
  SUBCASE("p>0 without a transformer is rejected") {
    cfg.p = 0.5;
    cfg.st = nullptr;
    rng::Stream s(4);
    CHECK_THROWS_AS(mil::lsa_augment(cfg, bag, s), ValidationError);
  }
}

TEST_CASE("training separates an easy task at the stock schedule") {
  const std::size_t c = 32, n_bags = 256, tiles = 4;
  rng::Stream gen(31);
  nn::Matrix mu = random_matrix(1, c, gen, 1.5);
  std::vector<nn::FeatureBag> bags(n_bags);
  for (std::size_t i = 0; i < n_bags; ++i) {
    const int label = static_cast<int>(i % 2);
    const double sign = label == 1 ? 1.0 : -1.0;
    bags[i].slide_id = "bag" + std::to_string(i);
    bags[i].label = label;
    bags[i].style = {65, 12, -8, 14, 7, 5};
    bags[i].features = random_matrix(tiles, c, gen, 1.0);
    for (std::size_t t = 0; t < tiles; ++t)
      for (std::size_t j = 0; j < c; ++j)
        bags[i].features.at(t, j) += sign * mu.at(0, j);
  }

  mil::MilConfig cfg;
  cfg.dim = c;
  rng::Stream init(/*seed=*/5);
  mil::MilParams p = mil::MilParams::create(cfg, init);
  mil::MilTrainConfig tc;
  tc.seed = 55;
  const mil::MilTrainResult r = mil::train_mil(p, bags, mil::LsaConfig{0.0}, tc);

  REQUIRE(r.epoch_loss.size() == static_cast<std::size_t>(tc.epochs));
  CHECK(r.epoch_loss.back() < 0.2);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());
  const mil::EvalReport report = mil::evaluate(p, bags);
  CHECK(report.acc >= 0.99);
  REQUIRE(report.auc.has_value());
  CHECK(*report.auc > 0.99);
}

TEST_CASE("train_mil is deterministic for a fixed seed") {
  const std::size_t c = 6;
  rng::Stream gen(41);
  std::vector<nn::FeatureBag> bags(8);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    bags[i].slide_id = "b" + std::to_string(i);
    bags[i].label = static_cast<int>(i % 2);
    bags[i].style = {65, 12, -8, 14, 7, 5};
    bags[i].features = random_matrix(3, c, gen, 1.0);
  }
  mil::MilConfig cfg;
  cfg.dim = c;
  cfg.attn_dim = 5;
  mil::MilTrainConfig tc;
  tc.epochs = 5;
  tc.seed = 77;

  rng::Stream i1(9), i2(9);
  mil::MilParams p1 = mil::MilParams::create(cfg, i1);
  mil::MilParams p2 = mil::MilParams::create(cfg, i2);
  const auto r1 = mil::train_mil(p1, bags, mil::LsaConfig{0.0}, tc);
  const auto r2 = mil::train_mil(p2, bags, mil::LsaConfig{0.0}, tc);
  CHECK(r1.epoch_loss == r2.epoch_loss);
  for (std::size_t k = 0; k < p1.tensors().size(); ++k)
    CHECK(p1.tensors()[k]->value.data == p2.tensors()[k]->value.data);
}

TEST_CASE("lsa training leaves the stain transformer untouched") {
  const std::size_t c = 6;
  st::StConfig scfg;
  scfg.dim = c;
  scfg.n_layers = 1;
  scfg.n_experts = 2;
  const std::vector<stats::StyleDescriptor> styles = {
      {60, 10, -6, 12, 6, 4}, {70, 14, -10, 16, 8, 6}};
  const wsaug::StylePrior prior = wsaug::StylePrior::fit(styles);
  rng::Stream sinit(3);
  st::StParams stp =
      st::StParams::create(scfg, st::StyleNormalizer::from_prior(prior), sinit);
  const std::vector<nn::Matrix> before = [&] {
    std::vector<nn::Matrix> v;
    for (nn::ParamTensor* t : stp.tensors()) v.push_back(t->value);
    return v;
  }();

  rng::Stream gen(43);
  std::vector<nn::FeatureBag> bags(8);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    bags[i].slide_id = "b" + std::to_string(i);
    bags[i].label = static_cast<int>(i % 2);
    bags[i].style = {65, 12, -8, 14, 7, 5};
    bags[i].features = random_matrix(3, c, gen, 1.0);
  }
  mil::MilConfig cfg;
  cfg.dim = c;
  cfg.attn_dim = 5;
  rng::Stream init(9);
  mil::MilParams p = mil::MilParams::create(cfg, init);
  mil::MilTrainConfig tc;
  tc.epochs = 3;
  mil::LsaConfig lsa;
  lsa.p = 1.0;
  lsa.prior = &prior;
  lsa.st = &stp;
  mil::train_mil(p, bags, lsa, tc);

  const auto tensors = stp.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k)
    CHECK(tensors[k]->value.data == before[k].data);
}

TEST_CASE("train_mil validates its inputs") {
  mil::MilConfig cfg;
  cfg.dim = 4;
  rng::Stream init(1);
  mil::MilParams p = mil::MilParams::create(cfg, init);
  rng::Stream gen(2);
  nn::FeatureBag bag;
  bag.slide_id = "b";
  bag.features = random_matrix(2, 4, gen, 1.0);
  bag.style = {65, 12, -8, 14, 7, 5};

  mil::MilTrainConfig tc;
  tc.epochs = 1;
  SUBCASE("no bags") {
    CHECK_THROWS_AS(mil::train_mil(p, {}, mil::LsaConfig{0.0}, tc),
                    ValidationError);
  }
  SUBCASE("unlabeled bag") {
    CHECK_THROWS_AS(mil::train_mil(p, {bag}, mil::LsaConfig{0.0}, tc),
                    ValidationError);
  }
  SUBCASE("lsa without prior or transformer") {
    bag.label = 0;
    mil::LsaConfig lsa;
    lsa.p = 0.5;
    CHECK_THROWS_AS(mil::train_mil(p, {bag}, lsa, tc), ValidationError);
  }
}

TEST_CASE("evaluate reports accuracy and omits auc for one-class sets") {
  mil::MilConfig cfg;
  cfg.dim = 4;
  rng::Stream init(6);
  mil::MilParams p = mil::MilParams::create(cfg, init);
  rng::Stream gen(8);
  std::vector<nn::FeatureBag> bags(3);
  for (std::size_t i = 0; i < bags.size(); ++i) {
    bags[i].slide_id = "b" + std::to_string(i);
    bags[i].label = 1;
    bags[i].style = {65, 12, -8, 14, 7, 5};
    bags[i].features = random_matrix(2, 4, gen, 1.0);
  }
  const mil::EvalReport r = mil::evaluate(p, bags);
  CHECK(!r.auc.has_value());
  CHECK(r.n_pos == 3);
  CHECK(r.n_neg == 0);
  CHECK(r.acc >= 0.0);
  CHECK(r.acc <= 1.0);
}

TEST_CASE("mil checkpoints round trip") {
  TempDir tmp;
  mil::MilConfig cfg;
  cfg.dim = 5;
  cfg.attn_dim = 3;
  rng::Stream init(12);
  mil::MilParams p = mil::MilParams::create(cfg, init);
  rng::Stream gen(14);
  p.head_w.value = random_matrix(5, 2, gen, 0.5);
  const auto path = tmp.path / "mil.ckpt";
  mil::save_mil(p, path);
  mil::MilParams q = mil::load_mil(path);
  CHECK(q.cfg.dim == cfg.dim);
  CHECK(q.cfg.attn_dim == cfg.attn_dim);
  for (std::size_t k = 0; k < p.tensors().size(); ++k)
    CHECK(p.tensors()[k]->value.data == q.tensors()[k]->value.data);

  const nn::Matrix x = random_matrix(4, 5, gen, 1.0);
  const auto a = mil::mil_forward(p, x);
  const auto b = mil::mil_forward(q, x);
  CHECK(a.logits.data == b.logits.data);

  CHECK_THROWS_AS(mil::load_mil(tmp.path / "missing.ckpt"), Error);
}
