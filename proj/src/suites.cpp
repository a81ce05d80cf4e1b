#include "graft/harness/suites.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>

#include "graft/cost.hpp"
#include "graft/grad_check.hpp"
#include "graft/reference.hpp"

namespace graft {

namespace {

using T = Tensor<double>;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

T random_map(Rng& rng, Index h, Index w, Index c, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(h * w * c));
  for (double& x : v) x = rng.uniform(lo, hi);
  return T::from_data(Shape{h, w, c}, std::move(v));
}

reference::Map to_map(const T& t) {
  return reference::Map{t.extent(0), t.extent(1), t.extent(2), t.value()};
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---- grad ----

SuiteReport grad_suite(const RunConfig& cfg) {
  SuiteReport rep{"grad", {}};
  ModelParams<double> model = build_model<double>(cfg.spec, cfg.seed);
  Rng in_rng(mix_seed(cfg.seed, "gradcheck.input"));
  T image = random_map(in_rng, cfg.spec.image_size, cfg.spec.image_size, 3);
  std::vector<double> wv(static_cast<std::size_t>(cfg.spec.num_classes));
  for (double& v : wv) v = in_rng.uniform(-1.0, 1.0);
  T weights = T::from_data(Shape{cfg.spec.num_classes}, wv);

  // Weighted-sum loss keeps every logit active regardless of magnitudes.
  auto loss_value = [&]() { return sum_all(mul(model_forward(image, model), weights)).item(); };

  Tape<double> tape;
  {
    Tape<double>::Scope scope(tape);
    tape.backward(sum_all(mul(model_forward(image, model), weights)));
  }

  const double h = 1e-5, tol = 1e-5;
  const Index max_coords = 24;  // per-tensor cap; full sweep is the acceptance job
  for (auto& [name, p] : model.reg.items) {
    const std::vector<double> autograd = p.grad();
    std::vector<Index> coords;
    const Index n = p.numel();
    if (n <= max_coords)
      for (Index i = 0; i < n; ++i) coords.push_back(i);
    else {
      Rng pick(mix_seed(cfg.seed, "gradcheck." + name));
      for (Index i = 0; i < max_coords; ++i)
        coords.push_back(static_cast<Index>(pick.below(static_cast<std::uint64_t>(n))));
    }
    double worst = 0.0;
    auto& val = p.raw();
    for (Index j : coords) {
      const double keep = val[static_cast<std::size_t>(j)];
      val[static_cast<std::size_t>(j)] = keep + h;
      const double up = loss_value();
      val[static_cast<std::size_t>(j)] = keep - h;
      const double dn = loss_value();
      val[static_cast<std::size_t>(j)] = keep;
      worst = std::max(worst,
                       rel_err(autograd[static_cast<std::size_t>(j)], (up - dn) / (2.0 * h)));
    }
    rep.checks.push_back({name, worst <= tol,
                          fmt("max rel %.3g", worst) + " over " +
                              std::to_string(coords.size()) + " coords"});
  }
  return rep;
}

// ---- invariants ----

SuiteReport invariants_suite(const RunConfig& cfg) {
  SuiteReport rep{"invariants", {}};
  Rng rng(mix_seed(cfg.seed, "invariants"));

  {
    bool ok = true;
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
      T x = random_map(rng, 4, 6, 9, -8.0, 8.0);
      T y = softmax(x);
      for (Index r = 0; r < 24; ++r) {
        double sum = 0.0;
        for (Index j = 0; j < 9; ++j) {
          const double v = y.value()[static_cast<std::size_t>(r * 9 + j)];
          if (v < 0.0) ok = false;
          sum += v;
        }
        worst = std::max(worst, std::fabs(sum - 1.0));
      }
    }
    rep.checks.push_back({"softmax-rows", ok && worst <= 1e-12, fmt("max |sum-1| %.3g", worst)});
  }
  {
    T x = random_map(rng, 8, 8, 5);
    T y = adaptive_avg_pool(x, 2, 2);
    double worst = 0.0;
    for (Index ch = 0; ch < 5; ++ch) {
      double mx = 0.0, my = 0.0;
      for (Index i = 0; i < 64; ++i) mx += x.value()[static_cast<std::size_t>(i * 5 + ch)];
      for (Index i = 0; i < 4; ++i) my += y.value()[static_cast<std::size_t>(i * 5 + ch)];
      worst = std::max(worst, std::fabs(mx / 64.0 - my / 4.0));
    }
    rep.checks.push_back({"pool-mean", worst <= 1e-12, fmt("max channel drift %.3g", worst)});
  }
  {
    const Index g = cfg.spec.grid(0), m = cfg.spec.eff_window(0);
    T x = random_map(rng, g, g, 6);
    T rt = window_reverse(window_partition(x, m), make_window_grid(g, g, m));
    rep.checks.push_back({"window-roundtrip", bit_equal(x.value(), rt.value()),
                          "partition then reverse, " + std::to_string(g) + "x" +
                              std::to_string(g) + " m=" + std::to_string(m)});
  }
  {
    ModelParams<double> m1 = build_model<double>(cfg.spec, cfg.seed);
    ModelParams<double> m2 = build_model<double>(cfg.spec, cfg.seed);
    T image = random_map(rng, cfg.spec.image_size, cfg.spec.image_size, 3);
    const T a = model_forward(image, m1);
    const T b = model_forward(image, m1);
    const T c = model_forward(image, m2);
    const bool ok = bit_equal(a.value(), b.value()) && bit_equal(a.value(), c.value());
    rep.checks.push_back({"determinism", ok, "rerun and rebuild logits bit-identical"});
  }
  {
    bool ok = true;
    std::string detail = "no attachments";
    ModelParams<double> model = build_model<double>(cfg.spec, cfg.seed);
    for (Index st = 0; st < cfg.spec.stages() && ok; ++st)
      for (Index d = 0; d < cfg.spec.depths[static_cast<std::size_t>(st)] && ok; ++d) {
        const auto& blk =
            model.stage[static_cast<std::size_t>(st)][static_cast<std::size_t>(d)];
        if (!blk.graft) continue;
        const Index g = cfg.spec.grid(st);
        T x = random_map(rng, g, g, cfg.spec.channels[static_cast<std::size_t>(st)]);
        T z = graft_forward(x, *blk.graft);
        ok = z.shape() == x.shape();
        for (double v : z.value())
          if (!std::isfinite(v)) ok = false;
        detail = "branch output matches block resolution";
      }
    rep.checks.push_back({"graft-shapes", ok, detail});
  }
  {
    bool ok = true;
    bool found = false;
    for (const auto& [name, p] : build_model<double>(cfg.spec, cfg.seed).reg.items) {
      if (name.find(".pos") == std::string::npos || name.find(".graft.") == std::string::npos)
        continue;
      found = true;
      T gate = sigmoid(p);
      for (double v : gate.value())
        if (!(v > 0.0 && v < 1.0)) ok = false;
    }
    rep.checks.push_back({"antialias-range", ok,
                          found ? "gate strictly inside (0, 1)" : "no learnable gates in spec"});
  }
  {
    BackboneSpec muted = cfg.spec;
    for (GraftAttachment& g : muted.grafts) g.cfg.output_scale = 0.0;
    BackboneSpec plain = cfg.spec;
    plain.grafts.clear();
    ModelParams<double> mg = build_model<double>(muted, cfg.seed);
    ModelParams<double> mp = build_model<double>(plain, cfg.seed);
    T image = random_map(rng, cfg.spec.image_size, cfg.spec.image_size, 3);
    const bool ok =
        bit_equal(model_forward(image, mg).value(), model_forward(image, mp).value());
    rep.checks.push_back(
        {"graft-transparency", ok, "zero-scaled branches leave logits bit-identical"});
  }
  {
    ModelParams<double> grafted = build_model<double>(cfg.spec, cfg.seed);
    BackboneSpec plain_spec = cfg.spec;
    plain_spec.grafts.clear();
    ModelParams<double> plain = build_model<double>(plain_spec, cfg.seed);
    auto ffn_params = [](const ModelParams<double>& m) {
      Index n = 0;
      for (const auto& [name, p] : m.reg.items)
        if (name.find(".ffn.") != std::string::npos) n += p.numel();
      return n;
    };
    bool one_each = true;
    for (Index st = 0; st < cfg.spec.stages(); ++st)
      for (Index d = 0; d < cfg.spec.depths[static_cast<std::size_t>(st)]; ++d) {
        const std::string prefix = "s" + std::to_string(st) + ".b" + std::to_string(d) + ".ffn.";
        Index count = 0;
        for (const auto& [name, p] : grafted.reg.items)
          if (name.rfind(prefix, 0) == 0) ++count;
        if (count != 4) one_each = false;  // fc1.w fc1.b fc2.w fc2.b
      }
    const bool ok = one_each && ffn_params(grafted) == ffn_params(plain);
    rep.checks.push_back({"ffn-shared", ok, "one FFN per block, none added by grafting"});
  }
  {
    ModelParams<double> model = build_model<double>(cfg.spec, cfg.seed);
    T image = random_map(rng, cfg.spec.image_size, cfg.spec.image_size, 3);
    const T base = model_forward(image, model);
    const Index k = cfg.spec.num_classes;
    // Rotate classifier columns by one and compare rotated logits.
    auto& w = model.head.w.raw();
    auto& b = model.head.b.raw();
    const Index c = model.head.w.extent(0);
    std::vector<double> w2(w.size()), b2(b.size());
    for (Index i = 0; i < c; ++i)
      for (Index j = 0; j < k; ++j)
        w2[static_cast<std::size_t>(i * k + (j + 1) % k)] = w[static_cast<std::size_t>(i * k + j)];
    for (Index j = 0; j < k; ++j) b2[static_cast<std::size_t>((j + 1) % k)] = b[static_cast<std::size_t>(j)];
    w = w2;
    b = b2;
    const T rotated = model_forward(image, model);
    double worst = 0.0;
    for (Index j = 0; j < k; ++j)
      worst = std::max(worst, std::fabs(rotated.value()[static_cast<std::size_t>((j + 1) % k)] -
                                        base.value()[static_cast<std::size_t>(j)]));
    rep.checks.push_back({"head-permutation", worst <= 1e-12, fmt("max drift %.3g", worst)});
  }
  return rep;
}

// ---- cost ----

std::vector<BackboneSpec> fixture_specs() {
  std::vector<BackboneSpec> out;
  {
    BackboneSpec s;  // windowed homogeneous toy with default grafts
    s.kind = BackboneKind::Homogeneous;
    s.image_size = 32;
    s.patch_size = 4;
    s.depths = {3};
    s.channels = {32};
    s.heads = {4};
    s.window = 4;
    s.num_classes = 4;
    s.grafts = default_graft_policy(s);
    out.push_back(s);
  }
  {
    BackboneSpec s;  // pyramid toy
    s.kind = BackboneKind::Pyramid;
    s.image_size = 64;
    s.patch_size = 4;
    s.depths = {2, 2};
    s.channels = {16, 32};
    s.heads = {2, 4};
    s.window = 4;
    s.num_classes = 4;
    s.grafts = default_graft_policy(s);
    out.push_back(s);
  }
  {
    BackboneSpec s;  // homogeneous with mixed branch variants
    s.kind = BackboneKind::Homogeneous;
    s.image_size = 32;
    s.patch_size = 4;
    s.depths = {2};
    s.channels = {24};
    s.heads = {3};
    s.window = 2;
    s.num_classes = 9;
    GraftConfig a;
    a.scales = 2;
    a.window = 2;
    a.down = DownKind::LinearProj;
    a.up = UpKind::Nearest;
    s.grafts = {{0, 1, a}};
    out.push_back(s);
  }
  {
    BackboneSpec s;  // cross-attention everything
    s.kind = BackboneKind::Homogeneous;
    s.image_size = 16;
    s.patch_size = 2;
    s.depths = {2};
    s.channels = {8};
    s.heads = {2};
    s.window = 4;
    s.num_classes = 4;
    GraftConfig a;
    a.scales = 1;
    a.window = 4;
    a.down = DownKind::CrossAttn;
    a.up = UpKind::CrossAttn;
    s.grafts = {{0, 1, a}};
    out.push_back(s);
  }
  return out;
}

SuiteReport cost_suite(const RunConfig& cfg) {
  SuiteReport rep{"cost", {}};
  {
    BackboneSpec s;
    s.kind = BackboneKind::Pyramid;
    s.image_size = 224;
    s.patch_size = 4;
    s.depths = {1};
    s.channels = {96};
    s.heads = {3};
    s.window = 7;
    s.num_classes = 1000;
    const CostReport flops = count_flops(s);
    const CostRecord* blk = flops.find("s0.b0");
    const long long macs = blk ? blk->macs : -1;
    rep.checks.push_back({"block-macs-golden", macs == 376320000LL,
                          "56x56x96 m=7 block: " + std::to_string(macs) + " MACs"});
  }
  {
    BackboneSpec s;
    s.kind = BackboneKind::Pyramid;
    s.image_size = 1;
    s.patch_size = 1;
    s.depths = {1};
    s.channels = {1};
    s.heads = {1};
    s.window = 1;
    s.num_classes = 2;
    const CostReport flops = count_flops(s);
    const CostRecord* blk = flops.find("s0.b0");
    const long long macs = blk ? blk->macs : -1;
    rep.checks.push_back(
        {"block-macs-unit", macs == 14, "unit block: " + std::to_string(macs) + " MACs"});
  }
  {
    std::vector<BackboneSpec> specs = fixture_specs();
    specs.push_back(cfg.spec);
    bool ok = true;
    std::string detail = "closed form equals live parameter store";
    for (const BackboneSpec& s : specs) {
      const long long closed = count_params(s).total_params();
      const long long live = build_model<double>(s, 1).reg.total();
      if (closed != live) {
        ok = false;
        detail = "mismatch: closed " + std::to_string(closed) + " vs live " +
                 std::to_string(live);
      }
    }
    rep.checks.push_back({"params-live", ok, detail});
  }
  {
    BackboneSpec plain = cfg.spec;
    plain.grafts.clear();
    const CostReport a = count_params(cfg.spec);
    const CostReport b = count_params(plain);
    bool ok = true;
    for (const CostRecord& r : a.records)
      if (r.group == "backbone") {
        const CostRecord* o = b.find(r.name);
        if (!o || o->params != r.params) ok = false;
      }
    rep.checks.push_back({"ffn-cost-invariant", ok, "backbone records unchanged by grafting"});
  }
  {
    const Index g0 = cfg.spec.grid(0);
    const ComplexityReport claim =
        verify_complexity_claim(cfg.spec, {g0, 2 * g0, 4 * g0, 8 * g0});
    bool mono = true;
    for (std::size_t i = 1; i < claim.points.size(); ++i)
      if (claim.points[i].ratio > claim.points[i - 1].ratio) mono = false;
    rep.checks.push_back({"ratio-bounded", claim.bounded,
                          fmt("limit %.4f", claim.limit) + " bound 2.0"});
    rep.checks.push_back({"ratio-non-increasing", mono, "across 4 doublings"});
  }
  return rep;
}

// ---- oracle ----

SuiteReport oracle_suite(const RunConfig& cfg) {
  SuiteReport rep{"oracle", {}};
  Rng rng(mix_seed(cfg.seed, "oracle"));
  const double tol = 1e-10;
  auto run = [&](const std::string& name, auto&& one) {
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) worst = std::max(worst, one());
    rep.checks.push_back({name, worst <= tol, fmt("max rel %.3g over 10 instances", worst)});
  };

  run("l_msa", [&]() {
    ParamRegistry<double> reg;
    const Index m = rng.below(2) ? 2 : 4;
    AttentionParams<double> p = make_attention(reg, "t", 8, 2, rng.below(2) ? m : 0,
                                               rng.next_u64());
    T x = random_map(rng, 8, 8, 8);
    return max_rel(l_msa(x, p, m).value(),
                   reference::window_attention(to_map(x), reference::extract(p), m).v);
  });
  run("global_msa", [&]() {
    ParamRegistry<double> reg;
    AttentionParams<double> p = make_attention(reg, "t", 6, 3, 0, rng.next_u64());
    T x = random_map(rng, 6, 6, 6);
    return max_rel(global_msa(x, p).value(),
                   reference::global_attention(to_map(x), reference::extract(p)).v);
  });
  run("downsample-avgpool", [&]() {
    ParamRegistry<double> reg;
    GraftConfig gc;
    gc.scales = 1;
    gc.window = 2;
    GraftParams<double> gp = make_graft(reg, "g", gc, 8, 8, 6, 2, rng.next_u64());
    // Give the norm non-trivial scales so the oracle sees real work.
    for (auto& [name, p] : reg.items)
      if (name.find("norm") != std::string::npos)
        for (double& v : p.raw()) v += rng.uniform(-0.3, 0.3);
    T x = random_map(rng, 8, 8, 6);
    return max_rel(downsample(x, gp.down[0], gc).value(),
                   reference::downsample(to_map(x), reference::extract(gp).down[0], gc).v);
  });
  run("w_bilinear_upsample", [&]() {
    ParamRegistry<double> reg;
    GraftConfig gc;
    gc.scales = 1;
    gc.window = 2;
    GraftParams<double> gp = make_graft(reg, "g", gc, 8, 8, 6, 2, rng.next_u64());
    for (double& v : gp.up[0].pos.raw()) v = rng.uniform(-2.0, 2.0);
    T z = random_map(rng, 4, 4, 6);
    return max_rel(w_bilinear_upsample(z, gp.up[0], gc).value(),
                   reference::w_bilinear_up(to_map(z), reference::extract(gp).up[0], gc).v);
  });
  run("graft_forward", [&]() {
    ParamRegistry<double> reg;
    GraftConfig gc;
    gc.scales = 1 + static_cast<Index>(rng.below(3));
    gc.window = 2;
    GraftParams<double> gp = make_graft(reg, "g", gc, 16, 16, 4, 2, rng.next_u64());
    if (gc.up == UpKind::WBilinear)
      for (auto& u : gp.up)
        for (double& v : u.pos.raw()) v = rng.uniform(-2.0, 2.0);
    T x = random_map(rng, 16, 16, 4);
    return max_rel(graft_forward(x, gp).value(),
                   reference::graft_forward(to_map(x), reference::extract(gp)).v);
  });
  (void)cfg;
  return rep;
}

}  // namespace

SuiteReport run_suite(const std::string& name, const RunConfig& cfg) {
  if (name == "grad") return grad_suite(cfg);
  if (name == "invariants") return invariants_suite(cfg);
  if (name == "cost") return cost_suite(cfg);
  if (name == "oracle") return oracle_suite(cfg);
  throw ConfigError("unknown suite '" + name + "' (grad|invariants|cost|oracle)");
}

}  // namespace graft
