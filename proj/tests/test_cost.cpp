#include <doctest.h>

#include "graft/cost.hpp"

using namespace graft;

namespace {

BackboneSpec block_spec(Index grid, Index channels, Index window, Index heads = 1) {
  BackboneSpec s;
  s.kind = BackboneKind::Pyramid;
  s.image_size = grid * 4;
  s.patch_size = 4;
  s.depths = {1};
  s.channels = {channels};
  s.heads = {heads};
  s.window = window;
  s.num_classes = 2;
  return s;
}

BackboneSpec toy_grafted() {
  BackboneSpec s;
  s.kind = BackboneKind::Homogeneous;
  s.image_size = 32;
  s.patch_size = 4;
  s.depths = {3};
  s.channels = {16};
  s.heads = {2};
  s.window = 4;
  s.num_classes = 4;
  s.grafts = default_graft_policy(s);
  return s;
}

}  // namespace

TEST_SUITE("cost") {

TEST_CASE("window block golden MAC count") {
  const CostReport rep = count_flops(block_spec(56, 96, 7, 3));
  const CostRecord* blk = rep.find("s0.b0");
  REQUIRE(blk != nullptr);
  CHECK(blk->macs == 376320000LL);
  // Projections and attention shares of the same total.
  CHECK(12LL * 56 * 56 * 96 * 96 == 346816512LL);
  CHECK(2LL * 7 * 7 * 56 * 56 * 96 == 29503488LL);
  CHECK(blk->macs == 346816512LL + 29503488LL);
}

TEST_CASE("unit block plugs in to 14 MACs") {
  const CostReport rep = count_flops(block_spec(1, 1, 1));
  const CostRecord* blk = rep.find("s0.b0");
  REQUIRE(blk != nullptr);
  CHECK(blk->macs == 14);
}

TEST_CASE("a biased square linear carries C*C+C parameters") {
  ParamRegistry<double> reg;
  make_linear(reg, "probe", 16, 16, 1);
  CHECK(reg.total() == 16 * 16 + 16);
}

TEST_CASE("grafting changes only the graft group") {
  BackboneSpec grafted = toy_grafted();
  BackboneSpec plain = grafted;
  plain.grafts.clear();
  const CostReport a = count_params(grafted);
  const CostReport b = count_params(plain);
  CHECK(a.group_params("backbone") == b.group_params("backbone"));
  CHECK(a.group_params("head") == b.group_params("head"));
  CHECK(b.group_params("graft") == 0);
  CHECK(a.group_params("graft") > 0);
  CHECK(a.total_params() == b.total_params() + a.group_params("graft"));
}

TEST_CASE("closed forms agree with the live parameter store") {
  const BackboneSpec specs[] = {toy_grafted(), block_spec(8, 8, 4, 2)};
  for (const BackboneSpec& s : specs) {
    CHECK(count_params(s).total_params() == build_model<double>(s, 3).reg.total());
  }
  // Per-record agreement, prefix by prefix.
  const BackboneSpec s = toy_grafted();
  const CostReport rep = count_params(s);
  ModelParams<double> model = build_model<double>(s, 5);
  auto live_sum = [&](auto pred) {
    long long n = 0;
    for (const auto& [name, t] : model.reg.items)
      if (pred(name)) n += t.numel();
    return n;
  };
  for (const CostRecord& r : rep.records) {
    long long live = 0;
    if (r.name == "patch")
      live = live_sum([](const std::string& n) { return n.rfind("patch.", 0) == 0; });
    else if (r.name == "head")
      live = live_sum([](const std::string& n) {
        return n.rfind("final.", 0) == 0 || n.rfind("head.", 0) == 0;
      });
    else if (r.group == "graft")
      live = live_sum([&](const std::string& n) { return n.rfind(r.name + ".", 0) == 0; });
    else
      live = live_sum([&](const std::string& n) {
        return n.rfind(r.name + ".", 0) == 0 && n.find(".graft.") == std::string::npos;
      });
    INFO(r.name);
    CHECK(r.params == live);
  }
}

TEST_CASE("flop counting needs no tensors and is repeatable") {
  const BackboneSpec s = toy_grafted();
  const CostReport a = count_flops(s);
  const CostReport b = count_flops(s);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].macs == b.records[i].macs);
    CHECK(a.records[i].eltwise == b.records[i].eltwise);
  }
}

TEST_CASE("graft overhead is bounded and levels off") {
  BackboneSpec s = block_spec(56, 96, 7, 3);
  GraftConfig gc;
  gc.scales = 3;
  gc.window = 7;
  s.depths = {2};
  s.grafts = {{0, 1, gc}};
  const ComplexityReport rep = verify_complexity_claim(s, {56, 112, 224, 448});
  REQUIRE(rep.points.size() == 4);
  for (const ComplexityPoint& p : rep.points) {
    CHECK(p.grafted > p.plain);
    CHECK(p.ratio > 1.0);
    CHECK(p.ratio <= 2.0);
  }
  for (std::size_t i = 1; i < rep.points.size(); ++i)
    CHECK(rep.points[i].ratio <= rep.points[i - 1].ratio);
  CHECK(rep.bounded);
}

TEST_CASE("empty policy costs exactly the backbone") {
  BackboneSpec s = block_spec(56, 96, 7, 3);
  const ComplexityReport rep = verify_complexity_claim(s, {56, 112, 224});
  for (const ComplexityPoint& p : rep.points) {
    CHECK(p.ratio == 1.0);
    CHECK(p.grafted == p.plain);
  }
}

TEST_CASE("single-scale grafts cost strictly under double") {
  BackboneSpec s = toy_grafted();
  for (GraftAttachment& g : s.grafts) g.cfg.scales = 1;
  const Index g0 = s.grid(0);
  const ComplexityReport rep = verify_complexity_claim(s, {g0, 2 * g0, 4 * g0, 8 * g0});
  for (const ComplexityPoint& p : rep.points) {
    CHECK(p.ratio > 1.0);
    CHECK(p.ratio < 2.0);
  }
}

TEST_CASE("report totals add up") {
  const CostReport rep = count_params(toy_grafted());
  long long sum = 0;
  for (const CostRecord& r : rep.records) sum += r.params;
  CHECK(sum == rep.total_params());
  CHECK(rep.total_params() ==
        rep.group_params("backbone") + rep.group_params("graft") + rep.group_params("head"));
}

}  // TEST_SUITE
