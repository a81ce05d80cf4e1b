#include <doctest.h>

#include <cmath>
#include <cstring>

#include "graft/attention.hpp"
#include "graft/backbone.hpp"
#include "graft/grad_check.hpp"
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

}  // namespace

TEST_SUITE("attention") {

TEST_CASE("window partition layout and degenerate window") {
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[static_cast<std::size_t>(i)] = i;
  T x = T::from_data({4, 4, 1}, std::move(v));
  T w = window_partition(x, 2);
  CHECK(w.shape() == Shape{4, 4, 1});
  // Window (0,0) holds input positions (0,0),(0,1),(1,0),(1,1).
  CHECK(w.value()[0] == 0.0);
  CHECK(w.value()[1] == 1.0);
  CHECK(w.value()[2] == 4.0);
  CHECK(w.value()[3] == 5.0);

  T whole = window_partition(x, 4);
  CHECK(whole.shape() == Shape{1, 16, 1});
  CHECK(bits_equal(whole.value(), x.value()));
}

TEST_CASE("partition and reverse invert each other") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    T x = random_map(rng, 8, 8, 3);
    T rt = window_reverse(window_partition(x, 4), make_window_grid(8, 8, 4));
    CHECK(bits_equal(x.value(), rt.value()));
  }
  CHECK_THROWS_AS(make_window_grid(8, 6, 4), ConfigError);
}

TEST_CASE("single-token windows reduce attention to the value path") {
  Rng rng(2);
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 6, 2, 0, 77);
  T x = random_map(rng, 3, 3, 6);
  T got = l_msa(x, p, 1);
  // One-token softmax is 1, so each position passes through Wv then Wo.
  T want = linear(linear(reshape(x, {9, 6}), p.v), p.o);
  double worst = 0.0;
  for (std::size_t i = 0; i < got.value().size(); ++i)
    worst = std::max(worst, std::fabs(got.value()[i] - want.value()[i]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("constant input stays constant without relative bias") {
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 4, 2, 0, 5);
  T x = T::full({4, 4, 4}, 0.37);
  T y = l_msa(x, p, 2);
  for (Index ch = 0; ch < 4; ++ch)
    for (Index i = 1; i < 16; ++i)
      CHECK(std::fabs(y.value()[static_cast<std::size_t>(i * 4 + ch)] -
                      y.value()[static_cast<std::size_t>(ch)]) <= 1e-12);
}

TEST_CASE("window attention matches the loop oracle") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    ParamRegistry<double> reg;
    const Index bias = seed % 2 ? 2 : 0;
    AttentionParams<double> p = make_attention(reg, "a", 4, 2, bias, seed);
    if (p.rel_bias.defined())
      for (double& v : p.rel_bias.raw()) v = rng.uniform(-0.5, 0.5);
    T x = random_map(rng, 4, 4, 4);
    T got = l_msa(x, p, 2);
    reference::Map want = reference::window_attention(to_map(x), reference::extract(p), 2);
    double worst = 0.0;
    for (std::size_t i = 0; i < got.value().size(); ++i)
      worst = std::max(worst, rel_err(got.value()[i], want.v[i]));
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("global attention is the single-window case") {
  Rng rng(6);
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 6, 3, 0, 9);
  T x = random_map(rng, 5, 5, 6);
  CHECK(bits_equal(global_msa(x, p).value(), l_msa(x, p, 5).value()));

  T one = random_map(rng, 1, 1, 6);
  T got = global_msa(one, p);
  T want = linear(linear(reshape(one, {1, 6}), p.v), p.o);
  for (std::size_t i = 0; i < got.value().size(); ++i)
    CHECK(std::fabs(got.value()[i] - want.value()[i]) <= 1e-12);

  T coarse = random_map(rng, 7, 7, 6);
  reference::Map oracle = reference::global_attention(to_map(coarse), reference::extract(p));
  T full = global_msa(coarse, p);
  double worst = 0.0;
  for (std::size_t i = 0; i < full.value().size(); ++i)
    worst = std::max(worst, rel_err(full.value()[i], oracle.v[i]));
  CHECK(worst <= 1e-10);
}

TEST_CASE("attention is local to its window") {
  Rng rng(8);
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 4, 2, 2, 13);
  T x = random_map(rng, 4, 4, 4);
  T y0 = l_msa(x, p, 2);
  // Zero window (0, 1): rows 0-1, cols 2-3.
  T z = x.clone();
  for (Index i = 0; i < 2; ++i)
    for (Index j = 2; j < 4; ++j)
      for (Index ch = 0; ch < 4; ++ch) z.raw()[static_cast<std::size_t>((i * 4 + j) * 4 + ch)] = 0.0;
  T y1 = l_msa(z, p, 2);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      const bool inside = i < 2 && j >= 2;
      for (Index ch = 0; ch < 4; ++ch) {
        const std::size_t at = static_cast<std::size_t>((i * 4 + j) * 4 + ch);
        if (!inside) CHECK(y0.value()[at] == y1.value()[at]);
      }
    }
}

TEST_CASE("window permutation equivariance") {
  Rng rng(9);
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 4, 2, 2, 21);
  T x = random_map(rng, 4, 4, 4);
  // Swap the two top windows of the input, attend, swap back; must match.
  auto swap_top = [](const T& t) {
    T s = t.clone();
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j)
        for (Index ch = 0; ch < 4; ++ch) {
          const std::size_t a = static_cast<std::size_t>((i * 4 + j) * 4 + ch);
          const std::size_t b = static_cast<std::size_t>((i * 4 + j + 2) * 4 + ch);
          std::swap(s.raw()[a], s.raw()[b]);
        }
    return s;
  };
  T direct = l_msa(x, p, 2);
  T swapped = swap_top(l_msa(swap_top(x), p, 2));
  CHECK(bits_equal(direct.value(), swapped.value()));
}

TEST_CASE("relative bias indexing covers each offset pair once") {
  const Index m = 3;
  std::vector<Index> idx = relative_bias_index(m);
  CHECK(idx.size() == static_cast<std::size_t>(m * m * m * m));
  std::vector<int> seen(static_cast<std::size_t>((2 * m - 1) * (2 * m - 1)), 0);
  for (Index a = 0; a < m * m; ++a)
    for (Index b = 0; b < m * m; ++b) {
      const Index q = idx[static_cast<std::size_t>(a * m * m + b)];
      REQUIRE(q >= 0);
      REQUIRE(q < (2 * m - 1) * (2 * m - 1));
      ++seen[static_cast<std::size_t>(q)];
    }
  for (int s : seen) CHECK(s >= 1);
  // The diagonal always maps to the center entry.
  const Index center = (m - 1) * (2 * m - 1) + (m - 1);
  for (Index a = 0; a < m * m; ++a)
    CHECK(idx[static_cast<std::size_t>(a * m * m + a)] == center);
}

TEST_CASE("shifted windows match the region-masked oracle") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    Rng rng(seed);
    ParamRegistry<double> reg;
    AttentionParams<double> p = make_attention(reg, "a", 4, 2, 2, seed + 40);
    T x = random_map(rng, 4, 4, 4);
    T got = shifted_l_msa(x, p, 2, 1);
    reference::Map want = reference::window_attention(to_map(x), reference::extract(p), 2, 1);
    double worst = 0.0;
    for (std::size_t i = 0; i < got.value().size(); ++i)
      worst = std::max(worst, rel_err(got.value()[i], want.v[i]));
    CHECK(worst <= 1e-10);
  }
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 4, 2, 2, 3);
  Rng rng(12);
  T x = random_map(rng, 4, 4, 4);
  CHECK(bits_equal(shifted_l_msa(x, p, 2, 0).value(), l_msa(x, p, 2).value()));
}

TEST_CASE("cross attention keeps query extents and matches the oracle") {
  Rng rng(14);
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 4, 2, 0, 51);
  T q = random_map(rng, 4, 4, 4);
  T kv = random_map(rng, 2, 2, 4);
  T got = cross_attention(q, kv, p);
  CHECK(got.shape() == q.shape());
  reference::Map want =
      reference::cross_attention(to_map(q), to_map(kv), reference::extract(p));
  double worst = 0.0;
  for (std::size_t i = 0; i < got.value().size(); ++i)
    worst = std::max(worst, rel_err(got.value()[i], want.v[i]));
  CHECK(worst <= 1e-10);

  // Single coarse token: every query position sees the same value row.
  T one = random_map(rng, 1, 1, 4);
  T spread = cross_attention(q, one, p);
  T row = linear(linear(reshape(one, {1, 4}), p.v), p.o);
  for (Index t = 0; t < 16; ++t)
    for (Index ch = 0; ch < 4; ++ch)
      CHECK(std::fabs(spread.value()[static_cast<std::size_t>(t * 4 + ch)] -
                      row.value()[static_cast<std::size_t>(ch)]) <= 1e-12);
}

TEST_CASE("attention parameter gradients pass finite differences") {
  Rng rng(31);
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 4, 2, 2, 99);
  T x = random_map(rng, 4, 4, 4);
  T mixer = random_map(rng, 4, 4, 4);

  auto loss = [&]() { return sum_all(mul(l_msa(x, p, 2), mixer)); };
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
  }
}

TEST_CASE("configuration errors carry the offending numbers") {
  ParamRegistry<double> reg;
  AttentionParams<double> p = make_attention(reg, "a", 4, 3, 0, 1);
  Rng rng(1);
  T x = random_map(rng, 4, 4, 4);
  CHECK_THROWS_AS(l_msa(x, p, 2), ConfigError);  // heads do not divide channels
  AttentionParams<double> q = make_attention(reg, "b", 4, 2, 0, 1);
  CHECK_THROWS_AS(l_msa(x, q, 3), ConfigError);  // window does not divide grid
}

}  // TEST_SUITE
