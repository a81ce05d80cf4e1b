#include <doctest.h>

#include <cmath>
#include <cstring>

#include "graft/backbone.hpp"
#include "graft/grad_check.hpp"
#include "graft/graft.hpp"
#include "graft/reference.hpp"

using namespace graft;
using T = Tensor<double>;

namespace {

T random_map(Rng& rng, Index h, Index w, Index c) {
  std::vector<double> v(static_cast<std::size_t>(h * w * c));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return T::from_data(Shape{h, w, c}, std::move(v));
}

reference::Map to_map(const T& t) {
  return reference::Map{t.extent(0), t.extent(1), t.extent(2), t.value()};
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

GraftParams<double> small_graft(ParamRegistry<double>& reg, GraftConfig cfg, Index h, Index w,
                                Index c, Index heads, std::uint64_t seed) {
  GraftParams<double> p = make_graft(reg, "g", cfg, h, w, c, heads, seed);
  Rng rng(seed + 1000);
  for (auto& [name, t] : reg.items)
    if (name.find(".pos") != std::string::npos)
      for (double& v : t.raw()) v = rng.uniform(-2.0, 2.0);
  return p;
}

}  // namespace

TEST_SUITE("graft") {

TEST_CASE("level chain reproduces the halving cascade") {
  GraftConfig cfg;
  cfg.scales = 3;
  cfg.window = 7;
  const std::vector<LevelExtent> lv = graft_levels(cfg, 56, 56);
  REQUIRE(lv.size() == 4);
  CHECK(lv[1].h == 28);
  CHECK(lv[2].h == 14);
  CHECK(lv[3].h == 7);
  CHECK(lv[3].w == 7);
}

TEST_CASE("level chain rejects bad geometry") {
  GraftConfig cfg;
  cfg.scales = 0;
  CHECK_THROWS_AS(graft_levels(cfg, 8, 8), ConfigError);
  cfg.scales = 2;
  cfg.window = 4;
  CHECK_THROWS_AS(graft_levels(cfg, 8, 8), ConfigError);  // level 2 would be 2x2 < 4
  cfg.scales = 1;
  cfg.window = 3;
  CHECK_THROWS_AS(graft_levels(cfg, 8, 8), ConfigError);  // 3 does not divide 4
  cfg.window = 2;
  CHECK_THROWS_AS(graft_levels(cfg, 9, 9), ConfigError);  // 9 odd, ratio 2
}

TEST_CASE("avgpool downsample collapses constants to zero") {
  ParamRegistry<double> reg;
  GraftConfig cfg;
  cfg.window = 2;
  GraftParams<double> p = make_graft(reg, "g", cfg, 8, 8, 4, 2, 3);
  T x = T::full({8, 8, 4}, 1.7);
  Tensor<double> pooled = downsample(x, p.down[0], cfg);
  for (double v : pooled.value()) CHECK(v == 0.0);
}

TEST_CASE("downsample variants match their oracles") {
  for (int kind = 0; kind < 3; ++kind) {
    Rng rng(40 + static_cast<std::uint64_t>(kind));
    ParamRegistry<double> reg;
    GraftConfig cfg;
    cfg.window = 2;
    cfg.down = static_cast<DownKind>(kind);
    GraftParams<double> p = small_graft(reg, cfg, 8, 8, 4, 2, 50 + static_cast<std::uint64_t>(kind));
    T x = random_map(rng, 8, 8, 4);
    T got = downsample(x, p.down[0], cfg);
    CHECK(got.shape() == Shape{4, 4, 4});
    reference::Map want =
        reference::downsample(to_map(x), reference::extract(p).down[0], cfg);
    CHECK(max_rel(got.value(), want.v) <= (kind == 0 ? 1e-12 : 1e-10));
  }
}

TEST_CASE("bilinear kernel hand values for one 2x2 window") {
  T src = T::from_data({2, 2, 1}, {1, 2, 3, 4});
  T up = window_bilinear_interp(src, 2, 2, 2);
  REQUIRE(up.shape() == Shape{4, 4, 1});
  auto at = [&](Index i, Index j) { return up.value()[static_cast<std::size_t>(i * 4 + j)]; };
  CHECK(at(0, 0) == 1.0);
  CHECK(at(0, 1) == 1.25);
  CHECK(at(0, 2) == 1.75);
  CHECK(at(0, 3) == 2.0);
  CHECK(at(1, 1) == 1.75);
  CHECK(at(2, 2) == 3.25);
  CHECK(at(3, 3) == 4.0);

  reference::Map oracle = reference::window_bilinear(to_map(src), 2, 2, 2);
  CHECK(max_rel(up.value(), oracle.v) <= 1e-12);
}

TEST_CASE("bilinear kernel matches the scalar oracle on random maps") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    T x = random_map(rng, 8, 8, 3);
    T up = window_bilinear_interp(x, 4, 2, 2);
    reference::Map want = reference::window_bilinear(to_map(x), 4, 2, 2);
    CHECK(max_rel(up.value(), want.v) <= 1e-10);
  }
}

TEST_CASE("constant windows interpolate to exactly that constant") {
  Rng rng(5);
  std::vector<double> v(8 * 8 * 2);
  // Four 4x4 windows, each constant per channel with its own value.
  for (Index i = 0; i < 8; ++i)
    for (Index j = 0; j < 8; ++j)
      for (Index ch = 0; ch < 2; ++ch)
        v[static_cast<std::size_t>((i * 8 + j) * 2 + ch)] =
            0.1 + 0.7919 * static_cast<double>((i / 4) * 2 + j / 4) + 0.3 * static_cast<double>(ch);
  T x = T::from_data({8, 8, 2}, std::move(v));
  T up = window_bilinear_interp(x, 4, 2, 2);
  for (Index i = 0; i < 16; ++i)
    for (Index j = 0; j < 16; ++j)
      for (Index ch = 0; ch < 2; ++ch)
        CHECK(up.value()[static_cast<std::size_t>((i * 16 + j) * 2 + ch)] ==
              x.value()[static_cast<std::size_t>(((i / 2) * 8 + j / 2) * 2 + ch)]);
}

TEST_CASE("interpolation never crosses window edges") {
  Rng rng(6);
  T x = random_map(rng, 8, 8, 3);
  T base = window_bilinear_interp(x, 4, 2, 2);
  T poked = x.clone();
  // Perturb source window (0, 1): rows 0-3, cols 4-7.
  for (Index i = 0; i < 4; ++i)
    for (Index j = 4; j < 8; ++j)
      for (Index ch = 0; ch < 3; ++ch)
        poked.raw()[static_cast<std::size_t>((i * 8 + j) * 3 + ch)] += 0.5;
  T moved = window_bilinear_interp(poked, 4, 2, 2);
  for (Index i = 0; i < 16; ++i)
    for (Index j = 0; j < 16; ++j) {
      const bool inside = i < 8 && j >= 8;
      if (inside) continue;
      for (Index ch = 0; ch < 3; ++ch) {
        const std::size_t at = static_cast<std::size_t>((i * 16 + j) * 3 + ch);
        CHECK(base.value()[at] == moved.value()[at]);
      }
    }
}

TEST_CASE("zero anti-alias logits gate at exactly one half") {
  ParamRegistry<double> reg;
  GraftConfig cfg;
  cfg.window = 2;
  GraftParams<double> p = make_graft(reg, "g", cfg, 8, 8, 4, 2, 9);
  Rng rng(9);
  T z = random_map(rng, 4, 4, 4);
  // make_graft leaves pos at zero, so the gate halves the mixed features.
  T mixed = linear(gelu(layer_norm(z, p.up[0].norm)), p.up[0].mix);
  T want = window_bilinear_interp(scale(mixed, 0.5), cfg.window, 2, 2);
  CHECK(bits_equal(w_bilinear_upsample(z, p.up[0], cfg).value(), want.value()));
}

TEST_CASE("learnable upsampling matches the composed oracle") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    ParamRegistry<double> reg;
    GraftConfig cfg;
    cfg.window = 2;
    GraftParams<double> p = small_graft(reg, cfg, 8, 8, 4, 2, seed + 60);
    T z = random_map(rng, 4, 4, 4);
    T got = w_bilinear_upsample(z, p.up[0], cfg);
    CHECK(got.shape() == Shape{8, 8, 4});
    reference::Map want = reference::w_bilinear_up(to_map(z), reference::extract(p).up[0], cfg);
    CHECK(max_rel(got.value(), want.v) <= 1e-10);
  }
}

TEST_CASE("nearest upsampling replicates cells") {
  T z = T::from_data({2, 2, 1}, {1, 2, 3, 4});
  T up = nearest_upsample(z, 2, 2);
  const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  CHECK(up.value() == want);

  Rng rng(3);
  T r = random_map(rng, 4, 4, 3);
  T ru = nearest_upsample(r, 2, 2);
  reference::Map oracle = reference::nearest(to_map(r), 2, 2);
  CHECK(bits_equal(ru.value(), oracle.v));
}

TEST_CASE("graft cell degenerates to a skip connection under zero projection") {
  ParamRegistry<double> reg;
  GraftConfig cfg;
  cfg.window = 2;
  GraftParams<double> p = make_graft(reg, "g", cfg, 8, 8, 4, 2, 11);
  for (double& v : p.level[0].attn.o.w.raw()) v = 0.0;
  Rng rng(11);
  T x = random_map(rng, 4, 4, 4);
  T out = graft_block(x, Tensor<double>(), p.level[0], cfg.window);
  CHECK(bits_equal(out.value(), x.value()));
}

TEST_CASE("graft cell without a coarser signal is the residual formula") {
  ParamRegistry<double> reg;
  GraftConfig cfg;
  cfg.window = 2;
  GraftParams<double> p = small_graft(reg, cfg, 8, 8, 4, 2, 12);
  Rng rng(12);
  T x = random_map(rng, 4, 4, 4);
  T got = graft_block(x, Tensor<double>(), p.level[0], cfg.window);
  T want = add(x, l_msa(layer_norm(x, p.level[0].norm), p.level[0].attn, cfg.window));
  CHECK(bits_equal(got.value(), want.value()));
}

TEST_CASE("full branch keeps the input shape") {
  ParamRegistry<double> reg;
  GraftConfig cfg;
  cfg.scales = 1;
  cfg.window = 2;
  GraftParams<double> p = small_graft(reg, cfg, 8, 8, 4, 2, 13);
  Rng rng(13);
  T x = random_map(rng, 8, 8, 4);
  CHECK(graft_forward(x, p).shape() == x.shape());
}

TEST_CASE("three-scale branch walks 56-28-14-7 and returns to 56") {
  ParamRegistry<double> reg;
  GraftConfig cfg;
  cfg.scales = 3;
  cfg.window = 7;
  GraftParams<double> p = small_graft(reg, cfg, 56, 56, 4, 2, 14);
  REQUIRE(p.down.size() == 3);
  CHECK(p.up[0].pos.shape() == Shape{28, 28, 4});
  CHECK(p.up[1].pos.shape() == Shape{14, 14, 4});
  CHECK(p.up[2].pos.shape() == Shape{7, 7, 4});
  Rng rng(14);
  T x = random_map(rng, 56, 56, 4);
  CHECK(graft_forward(x, p).shape() == Shape{56, 56, 4});
}

TEST_CASE("two-scale branch matches the unrolled oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    ParamRegistry<double> reg;
    GraftConfig cfg;
    cfg.scales = 2;
    cfg.window = 2;
    GraftParams<double> p = small_graft(reg, cfg, 16, 16, 8, 2, seed + 70);
    T x = random_map(rng, 16, 16, 8);
    T got = graft_forward(x, p);
    reference::Map want = reference::graft_forward(to_map(x), reference::extract(p));
    CHECK(max_rel(got.value(), want.v) <= 1e-10);
  }
}

TEST_CASE("anti-alias gate stays open and learns") {
  ParamRegistry<double> reg;
  GraftConfig cfg;
  cfg.window = 2;
  GraftParams<double> p = small_graft(reg, cfg, 8, 8, 4, 2, 15);
  Tensor<double> gate = sigmoid(p.up[0].pos);
  for (double v : gate.value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  Rng rng(15);
  T x = random_map(rng, 8, 8, 4);
  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    tape.backward(sum_all(mul(graft_forward(x, p), x)));
  }
  double norm = 0.0;
  for (double g : p.up[0].pos.grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("every variant pairing yields finite, correctly shaped output") {
  Rng rng(16);
  T x = random_map(rng, 8, 8, 4);
  int combos = 0;
  for (int d = 0; d < 3; ++d)
    for (int u = 0; u < 3; ++u) {
      ParamRegistry<double> reg;
      GraftConfig cfg;
      cfg.scales = 2;
      cfg.window = 2;
      cfg.down = static_cast<DownKind>(d);
      cfg.up = static_cast<UpKind>(u);
      GraftParams<double> p =
          small_graft(reg, cfg, 8, 8, 4, 2, 90 + static_cast<std::uint64_t>(d * 3 + u));
      T out = graft_forward(x, p);
      REQUIRE(out.shape() == x.shape());
      for (double v : out.value()) REQUIRE(std::isfinite(v));
      ++combos;
    }
  CHECK(combos == 9);
}

TEST_CASE("branch gradients pass finite differences, 3 seeds") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    ParamRegistry<double> reg;
    GraftConfig cfg;
    cfg.scales = 1;
    cfg.window = 2;
    GraftParams<double> p = small_graft(reg, cfg, 4, 4, 4, 2, seed + 80);
    T x = random_map(rng, 4, 4, 4);
    T mixer = random_map(rng, 4, 4, 4);
    x.set_requires_grad(true);
    auto loss = [&]() { return sum_all(mul(graft_forward(x, p), mixer)); };
    Tape<double> tape;
    {
      Tape<double>::Scope scope(tape);
      tape.backward(loss());
    }
    for (auto& [name, param] : reg.items) {
      const std::vector<double> auto_grad = param.grad();
      const std::vector<double> fd =
          finite_diff_param([&]() { return loss().item(); }, param, 1e-5);
      double worst = 0.0;
      for (std::size_t i = 0; i < fd.size(); ++i)
        worst = std::max(worst, rel_err(auto_grad[i], fd[i]));
      INFO(name);
      CHECK(worst <= 1e-5);
      param.zero_grad();
    }
    const std::vector<double> xg = x.grad();
    const std::vector<double> fd =
        finite_diff_param([&]() { return loss().item(); }, x, 1e-5);
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) worst = std::max(worst, rel_err(xg[i], fd[i]));
    CHECK(worst <= 1e-5);
  }
}

}  // TEST_SUITE
