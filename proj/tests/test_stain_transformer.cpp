#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <vector>

#include "doctest.h"
#include "stainkit/errors.hpp"
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

double dot(const nn::Matrix& a, const nn::Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

wsaug::StylePrior test_prior() {
  const std::vector<stats::StyleDescriptor> styles = {
      {60, 10, -6, 12, 6, 4}, {70, 14, -10, 16, 8, 6}};
  return wsaug::StylePrior::fit(styles);
}

st::StParams make_st(std::size_t dim, std::size_t layers, std::size_t experts,
                     std::uint64_t seed) {
  st::StConfig cfg;
  cfg.dim = dim;
  cfg.n_layers = layers;
  cfg.n_experts = experts;
  rng::Stream s(seed);
  return st::StParams::create(cfg, st::StyleNormalizer::from_prior(test_prior()),
                              s);
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl =
        (std::filesystem::temp_directory_path() / "stainkit-st-XXXXXX")
            .string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("style normalizer z-scores against the prior") {
  const wsaug::StylePrior prior = test_prior();
  const st::StyleNormalizer norm = st::StyleNormalizer::from_prior(prior);
  const stats::StyleDescriptor s{66, 13, -7, 15, 7.5, 5.5};
  const auto z = norm.apply(s);
  const auto raw = s.as_array();
  for (int c = 0; c < 6; ++c) {
    const double expect =
        (raw[c] - prior.components[c].mean) / prior.components[c].stddev;
    CHECK(std::abs(z[c] - expect) < 1e-12);
  }

  st::StyleNormalizer flat;  // stddev 1e-9 -> only mean-shift
  flat.mean = {65, 0, 0, 0, 0, 0};
  flat.stddev = {1e-9, 1, 1, 1, 1, 1};
  const auto z2 = flat.apply(s);
  CHECK(z2[0] == 66.0 - 65.0);
}

TEST_CASE("a zero router routes uniformly and always sums to one") {
  st::StParams p = make_st(6, 1, 4, 3);
  rng::Stream s(5);

  // Zero router: exactly uniform.
  std::fill(p.blocks[0].moe.router_w.value.data.begin(),
            p.blocks[0].moe.router_w.value.data.end(), 0.0);
  const nn::Matrix e0 = random_matrix(1, 6, s, 1.0);
  const nn::Matrix w0 = st::routing_weights(p.blocks[0].moe, e0);
  REQUIRE(w0.cols == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(w0.at(0, i) == 0.25);

  // Random router: strictly positive simplex.
  nn::fill_normal(p.blocks[0].moe.router_w.value, s, 0.8);
  for (int trial = 0; trial < 20; ++trial) {
    const nn::Matrix e = random_matrix(1, 6, s, 1.5);
    const nn::Matrix w = st::routing_weights(p.blocks[0].moe, e);
    double sum = 0.0;
    for (std::size_t i = 0; i < w.cols; ++i) {
      CHECK(w.at(0, i) > 0.0);
      sum += w.at(0, i);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("single-expert moe reduces to gelu of that expert") {
  st::StParams p = make_st(5, 1, 1, 7);
  rng::Stream s(9);
  nn::fill_normal(p.blocks[0].moe.router_w.value, s, 0.7);
  const nn::Matrix x = random_matrix(4, 5, s, 1.0);
  const nn::Matrix embed = random_matrix(1, 5, s, 1.0);

  const nn::Matrix got = st::moe_forward(p.blocks[0].moe, x, embed, nullptr);
  const auto& e = p.blocks[0].moe.experts[0];
  const nn::Matrix expect =
      nn::gelu(nn::linear_forward(nn::gelu(nn::linear_forward(x, e.w1, e.b1)),
                                  e.w2, e.b2));
  CHECK(got.data == expect.data);
}

TEST_CASE("moe gradients match finite differences") {
  st::StParams p = make_st(4, 1, 3, 11);
  st::MoeParams& moe = p.blocks[0].moe;
  rng::Stream s(13);
  nn::fill_normal(moe.router_w.value, s, 0.6);
  nn::fill_normal(moe.router_b.value, s, 0.2);
  nn::Matrix x = random_matrix(3, 4, s, 1.0);
  nn::Matrix embed = random_matrix(1, 4, s, 1.0);
  const nn::Matrix r = random_matrix(3, 4, s, 1.0);

  auto loss = [&]() { return dot(st::moe_forward(moe, x, embed, nullptr), r); };

  st::MoeCtx ctx;
  st::moe_forward(moe, x, embed, &ctx);
  nn::Matrix d_embed(1, 4);
  const nn::Matrix dx = st::moe_backward(moe, ctx, r, embed, d_embed);

  check_gradient(moe.router_w.value, moe.router_w.grad, loss);
  check_gradient(moe.router_b.value, moe.router_b.grad, loss);
  for (auto& e : moe.experts) {
    check_gradient(e.w1.value, e.w1.grad, loss);
    check_gradient(e.b1.value, e.b1.grad, loss);
    check_gradient(e.w2.value, e.w2.grad, loss);
    check_gradient(e.b2.value, e.b2.grad, loss);
  }
  check_gradient(x, dx, loss);
  check_gradient(embed, d_embed, loss);
}

TEST_CASE("full model gradients match finite differences") {
  st::StParams p = make_st(4, 1, 2, 17);
  rng::Stream s(19);
  // Push every zero-initialized tensor off its symmetric start so the check
  // exercises generic positions.
  nn::fill_normal(p.blocks[0].moe.router_w.value, s, 0.5);
  nn::fill_normal(p.blocks[0].moe.router_b.value, s, 0.2);
  nn::fill_normal(p.embed_b.value, s, 0.3);
  nn::fill_normal(p.blocks[0].ln1_b.value, s, 0.2);
  nn::fill_normal(p.blocks[0].ln2_b.value, s, 0.2);
  nn::fill_normal(p.head_b.value, s, 0.2);

  nn::Matrix features = random_matrix(3, 4, s, 1.0);
  const nn::Matrix r = random_matrix(3, 4, s, 1.0);
  const stats::StyleDescriptor src{60, 10, -6, 12, 6, 4};
  const stats::StyleDescriptor dst{70, 14, -10, 16, 8, 6};

  auto loss = [&]() { return dot(st::st_forward(p, features, src, dst), r); };

  st::StCtx ctx;
  st::st_forward(p, features, src, dst, &ctx);
  const nn::Matrix dfeat = st::st_backward(p, ctx, r);

  for (nn::ParamTensor* t : p.tensors()) {
    INFO("tensor ", t->name);
    check_gradient(t->value, t->grad, loss);
  }
  check_gradient(features, dfeat, loss);
}

TEST_CASE("st_forward is equivariant under instance permutation") {
  for (const std::size_t n : {std::size_t{1}, std::size_t{7}, std::size_t{64}}) {
    st::StParams p = make_st(8, 2, 4, 23);
    rng::Stream s(29 + n);
    nn::fill_normal(p.blocks[0].moe.router_w.value, s, 0.5);
    const nn::Matrix x = random_matrix(n, 8, s, 1.0);
    const stats::StyleDescriptor src{60, 10, -6, 12, 6, 4};
    const stats::StyleDescriptor dst{70, 14, -10, 16, 8, 6};

    const nn::Matrix y = st::st_forward(p, x, src, dst);

    // Rotate the rows by a fixed shift.
    const std::size_t shift = n / 2 + 1;
    nn::Matrix xp(n, 8);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        xp.at(i, j) = x.at((i + shift) % n, j);
    const nn::Matrix yp = st::st_forward(p, xp, src, dst);

    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        CHECK(std::abs(yp.at(i, j) - y.at((i + shift) % n, j)) < 1e-9);
  }
}

TEST_CASE("style conditioning flows through the router alone") {
  st::StParams p = make_st(6, 1, 2, 31);
  rng::Stream s(37);
  const nn::Matrix x = random_matrix(4, 6, s, 1.0);
  const stats::StyleDescriptor a{60, 10, -6, 12, 6, 4};
  const stats::StyleDescriptor b{70, 14, -10, 16, 8, 6};

  auto gap = [&]() {
    const nn::Matrix fwd = st::st_forward(p, x, a, b);
    const nn::Matrix rev = st::st_forward(p, x, b, a);
    double diff = 0.0;
    for (std::size_t i = 0; i < fwd.data.size(); ++i)
      diff += std::abs(fwd.data[i] - rev.data[i]);
    return diff;
  };

  // Fresh params route by style, so swapping the pair moves the output.
  CHECK(gap() > 1e-6);
  // Zero router: routing is uniform whatever the styles, so the style pair
  // cannot influence the output at all.
  std::fill(p.blocks[0].moe.router_w.value.data.begin(),
            p.blocks[0].moe.router_w.value.data.end(), 0.0);
  CHECK(gap() == 0.0);
  // Any nonzero router lets the style pair steer the expert mixture.
  nn::fill_normal(p.blocks[0].moe.router_w.value, s, 0.8);
  CHECK(gap() > 1e-6);
}

TEST_CASE("st_forward validates shapes") {
  st::StParams p = make_st(4, 1, 2, 41);
  const stats::StyleDescriptor st1{60, 10, -6, 12, 6, 4};
  CHECK_THROWS_AS(st::st_forward(p, nn::Matrix(0, 4), st1, st1),
                  ValidationError);
  CHECK_THROWS_AS(st::st_forward(p, nn::Matrix(2, 5), st1, st1),
                  ValidationError);
  st::StConfig bad;
  bad.dim = 0;
  rng::Stream s(0);
  CHECK_THROWS_AS(st::StParams::create(bad, st::StyleNormalizer{}, s),
                  ValidationError);
}

TEST_CASE("group validation rejects misaligned bags") {
  st::SlideGroup g;
  CHECK_THROWS_AS(st::validate_group(g, 4), ValidationError);

  rng::Stream s(43);
  nn::FeatureBag a, b;
  a.features = random_matrix(3, 4, s, 1.0);
  b.features = random_matrix(2, 4, s, 1.0);  // row count differs
  g.bags = {a, b};
  CHECK_THROWS_AS(st::validate_group(g, 4), ValidationError);
  g.bags = {a};
  CHECK_THROWS_AS(st::validate_group(g, 5), ValidationError);
  g.bags.front().features = random_matrix(3, 5, s, 1.0);
  CHECK_NOTHROW(st::validate_group(g, 5));
}

TEST_CASE("st_evaluate_mae counts ordered pairs") {
  st::StParams p = make_st(4, 1, 2, 47);
  st::SlideGroup g;
  nn::FeatureBag a, b;
  a.features = nn::Matrix(2, 4);
  b.features = nn::Matrix(2, 4);
  for (double& v : b.features.data) v = 1.0;
  a.style = {60, 10, -6, 12, 6, 4};
  b.style = {70, 14, -10, 16, 8, 6};
  g.bags = {a, b};

  const st::MaeReport r = st::st_evaluate_mae(p, {g});
  CHECK(r.n_pairs == 2);
  CHECK(r.mae_before == 1.0);  // |0-1| in every cell, both directions
  CHECK(std::isfinite(r.mae_after));
  CHECK(r.mae_after >= 0.0);

  const st::MaeReport empty = st::st_evaluate_mae(p, {});
  CHECK(empty.n_pairs == 0);
  CHECK(empty.mae_before == 0.0);
}

TEST_CASE("training pulls an identity task toward zero loss") {
  const std::size_t c = 8;
  rng::Stream gen(53);
  std::vector<st::SlideGroup> groups(4);
  for (auto& g : groups) {
    nn::FeatureBag bag;
    bag.features = random_matrix(3, c, gen, 1.0);
    bag.style = {65, 12, -8, 14, 7, 5};
    // Two identical renditions: every sampled pair demands the identity map.
    g.bags = {bag, bag};
  }

  st::StParams p = make_st(c, 1, 2, 59);
  st::StTrainConfig tc;
  tc.epochs = 60;
  tc.batch_groups = 4;
  tc.lr = 5e-3;
  tc.lr_decay = 1.0;
  tc.seed = 61;
  const st::StTrainResult r = st::st_train(p, groups, tc);

  REQUIRE(r.epoch_loss.size() == 60);
  CHECK(r.epoch_loss.back() < 0.25 * r.epoch_loss.front());
  CHECK(r.epoch_loss.back() < 0.1);
}

TEST_CASE("st training is deterministic for a fixed seed") {
  const std::size_t c = 5;
  rng::Stream gen(67);
  std::vector<st::SlideGroup> groups(3);
  for (auto& g : groups) {
    nn::FeatureBag a, b;
    a.features = random_matrix(2, c, gen, 1.0);
    b.features = random_matrix(2, c, gen, 1.0);
    a.style = {60, 10, -6, 12, 6, 4};
    b.style = {70, 14, -10, 16, 8, 6};
    g.bags = {a, b};
  }
  st::StTrainConfig tc;
  tc.epochs = 4;
  tc.seed = 71;

  st::StParams p1 = make_st(c, 1, 2, 73);
  st::StParams p2 = make_st(c, 1, 2, 73);
  const auto r1 = st::st_train(p1, groups, tc);
  const auto r2 = st::st_train(p2, groups, tc);
  CHECK(r1.epoch_loss == r2.epoch_loss);
  for (std::size_t k = 0; k < p1.tensors().size(); ++k)
    CHECK(p1.tensors()[k]->value.data == p2.tensors()[k]->value.data);
}

TEST_CASE("st checkpoints round trip") {
  TempDir tmp;
  st::StParams p = make_st(6, 2, 3, 79);
  rng::Stream s(83);
  nn::fill_normal(p.blocks[1].moe.router_w.value, s, 0.5);
  const auto path = tmp.path / "st.ckpt";
  st::save_st(p, path);

  st::StParams q = st::load_st(path);
  CHECK(q.cfg.dim == p.cfg.dim);
  CHECK(q.cfg.n_layers == p.cfg.n_layers);
  CHECK(q.cfg.n_experts == p.cfg.n_experts);
  CHECK(q.norm.mean == p.norm.mean);
  CHECK(q.norm.stddev == p.norm.stddev);
  for (std::size_t k = 0; k < p.tensors().size(); ++k)
    CHECK(p.tensors()[k]->value.data == q.tensors()[k]->value.data);

  const nn::Matrix x = random_matrix(3, 6, s, 1.0);
  const stats::StyleDescriptor a{60, 10, -6, 12, 6, 4};
  const stats::StyleDescriptor b{70, 14, -10, 16, 8, 6};
  CHECK(st::st_forward(p, x, a, b).data == st::st_forward(q, x, a, b).data);

  CHECK_THROWS_AS(st::load_st(tmp.path / "missing.ckpt"), Error);
}
