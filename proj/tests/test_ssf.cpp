#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hipss/errors.hpp"
#include "hipss/ssf.hpp"
#include "hipss/textenc.hpp"
#include "oracles.hpp"

using namespace hipss;

TEST_CASE("ssf_forward examples") {
  CHECK(ssf_forward(Vector{1, 1}, SsfParams{{2, 3}, {1, -1}}) == Vector{3, 2});
  const Vector x{0.3, -4.0, 17.0};
  CHECK(ssf_forward(x, SsfParams::identity(3)) == x);
  CHECK(ssf_forward(Vector{5, 6}, SsfParams{{0, 0}, {0.5, 0.25}}) == Vector{0.5, 0.25});
  CHECK_THROWS_AS(ssf_forward(Vector{1, 2, 3}, SsfParams::identity(2)), ShapeError);
}

TEST_CASE("ssf_vjp matches central differences") {
  Rng rng(8);
  const std::size_t d = 6;
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_normal(rng, d, 0.0, 1.0);
    const SsfParams p{random_normal(rng, d, 1.0, 0.3), random_normal(rng, d, 0.0, 0.3)};
    const Vector ct = random_normal(rng, d, 0.0, 1.0);
    const SsfCotangents g = ssf_vjp(x, p, ct);
    auto project = [&](const Vector& y) { return std::inner_product(y.begin(), y.end(), ct.begin(), 0.0); };
    const Vector fx = oracle::central_difference([&](const Vector& v) { return project(ssf_forward(v, p)); }, x);
    const Vector fg = oracle::central_difference(
        [&](const Vector& v) { return project(ssf_forward(x, SsfParams{v, p.beta})); }, p.gamma);
    const Vector fb = oracle::central_difference(
        [&](const Vector& v) { return project(ssf_forward(x, SsfParams{p.gamma, v})); }, p.beta);
    CHECK(oracle::max_rel_error(fx, g.x) <= 1e-6);
    CHECK(oracle::max_rel_error(fg, g.gamma) <= 1e-6);
    CHECK(oracle::max_rel_error(fb, g.beta) <= 1e-6);
  }
}

TEST_CASE("attach_depth selects the last blocks") {
  CHECK(attach_depth(12, 2) == std::vector<std::size_t>{11, 12});
  std::vector<std::size_t> all(12);
  std::iota(all.begin(), all.end(), 1);
  CHECK(attach_depth(12, 12) == all);
  CHECK(attach_depth(12, 8) == std::vector<std::size_t>{5, 6, 7, 8, 9, 10, 11, 12});
  CHECK(attach_depth(1, 1) == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(attach_depth(12, 0), ConfigError);
  CHECK_THROWS_AS(attach_depth(12, 13), ConfigError);
}

TEST_CASE("init_ssf draws around identity") {
  const double sigma = 0.02;
  const SsfParams p = init_ssf(3, 10000, sigma);
  double mg = 0.0, mb = 0.0, vg = 0.0;
  for (std::size_t i = 0; i < 10000; ++i) {
    mg += p.gamma[i] / 1e4;
    mb += p.beta[i] / 1e4;
  }
  for (double g : p.gamma) vg += (g - mg) * (g - mg) / 9999.0;
  const double tol = 4.0 * sigma / 100.0;
  CHECK(std::abs(mg - 1.0) <= tol);
  CHECK(std::abs(mb) <= tol);
  CHECK(std::abs(std::sqrt(vg) - sigma) <= 0.1 * sigma);
  CHECK(init_ssf(3, 16, sigma) == init_ssf(3, 16, sigma));
  CHECK_FALSE(init_ssf(3, 16, sigma) == init_ssf(4, 16, sigma));
  CHECK(init_ssf(9, 32, 0.0).is_identity());
  CHECK_THROWS_AS(init_ssf(1, 4, -1.0), ConfigError);
}

TEST_CASE("make_sites freezes identity adapters outside the tuned depth") {
  const auto sites = make_sites(6, 2, 8, 1, 0.1);
  REQUIRE(sites.size() == 12);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const SsfSite& s = sites[i];
    CHECK(s.block == i / 2 + 1);
    CHECK(s.kind == (i % 2 == 0 ? SiteKind::kPostLayerNorm : SiteKind::kPostMlp));
    CHECK(s.trainable == (s.block >= 5));
    CHECK(s.params.is_identity() == !s.trainable);
  }
}

TEST_CASE("merge_reparam folds adapters exactly") {
  Rng rng(77);
  const std::size_t d = 8;
  const AffineLayerNorm ln{random_normal(rng, d, 1.0, 0.1), random_normal(rng, d, 0.0, 0.1)};
  const AffineLinear lin{random_normal(rng, d, d, 0.3), random_normal(rng, d, 0.0, 0.1)};

  SUBCASE("identity sites leave layers bitwise unchanged") {
    const AffineLayerNorm a = merge_reparam(ln, SsfSite{1, SiteKind::kPostLayerNorm, SsfParams::identity(d), true});
    const AffineLinear b = merge_reparam(lin, SsfSite{1, SiteKind::kPostMlp, SsfParams::identity(d), true});
    CHECK(a.gain == ln.gain);
    CHECK(a.bias == ln.bias);
    CHECK(b.weight == lin.weight);
    CHECK(b.bias == lin.bias);
  }

  SUBCASE("merged layers reproduce the adapted outputs") {
    const SsfSite post_ln{1, SiteKind::kPostLayerNorm, init_ssf(5, d, 0.3), true};
    const SsfSite post_mlp{1, SiteKind::kPostMlp, init_ssf(6, d, 0.3), true};
    const AffineLayerNorm mln = merge_reparam(ln, post_ln);
    const AffineLinear mlin = merge_reparam(lin, post_mlp);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Vector x = random_normal(rng, d, 0.0, 2.0);
      const Vector want_ln = ssf_forward(layernorm(x, ln.gain, ln.bias), post_ln.params);
      worst = std::max(worst, oracle::max_abs_diff(layernorm(x, mln.gain, mln.bias), want_ln));
      const Vector want_lin = ssf_forward(add(matvec(lin.weight, x), lin.bias), post_mlp.params);
      worst = std::max(worst, oracle::max_abs_diff(add(matvec(mlin.weight, x), mlin.bias), want_lin));
    }
    CHECK(worst <= 1e-12);
  }

  SUBCASE("site kind must match the layer") {
    CHECK_THROWS_AS(merge_reparam(ln, SsfSite{1, SiteKind::kPostMlp, SsfParams::identity(d), true}), ConfigError);
    CHECK_THROWS_AS(merge_reparam(lin, SsfSite{1, SiteKind::kPostLayerNorm, SsfParams::identity(d), true}),
                    ConfigError);
  }
}

TEST_CASE("count_trainable") {
  ParamCountConfig cfg;
  CHECK(count_trainable(cfg) == 8768);
  cfg.attention = false;
  CHECK(count_trainable(cfg) == 512);
  cfg.depth = 1;
  CHECK(count_trainable(cfg) == 256);
  for (std::size_t d = 1; d <= 12; ++d) {
    cfg.depth = d;
    CHECK(count_trainable(cfg) == 256 * d);
  }

  ParamCountConfig base;
  ParamCountConfig wider = base;
  wider.hidden += 1;
  CHECK(count_trainable(wider) - count_trainable(base) == 4 * base.dim + 2);
  base.depth = 0;
  CHECK_THROWS_AS(count_trainable(base), ConfigError);
}

TEST_CASE("only sites inside the tuned depth receive gradients") {
  const std::size_t d = 6, blocks = 4, depth = 2;
  const TextEncoderStack stack = TextEncoderStack::build(d, blocks, 11);
  const auto sites = make_sites(blocks, depth, d, 2, 0.1);
  Rng rng(4);
  const Matrix tokens = random_normal(rng, 3, d, 1.0);

  ad::Tape tape;
  const SiteVars vars = bind_sites(tape, sites, 0);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    CHECK(tape.requires_grad(vars.gamma[i]) == sites[i].trainable);
    CHECK(tape.requires_grad(vars.beta[i]) == sites[i].trainable);
  }
  const ad::Var out = encode(tape, stack, tokens, sites, vars);
  const ad::Var total = tape.dot(out, tape.constant(random_normal(rng, d, 0.0, 1.0)));
  Vector grad(2 * d * kSitesPerBlock * depth, 0.0);
  tape.backward(total, grad);
  std::size_t nonzero = 0;
  for (double g : grad) nonzero += g != 0.0;
  CHECK(nonzero == grad.size());
}
