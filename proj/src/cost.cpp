#include "graft/cost.hpp"

namespace graft {

namespace {

using LL = long long;

LL linear_params(LL in, LL out) { return in * out + out; }
LL norm_params(LL c) { return 2 * c; }

LL attn_params(LL c, LL heads, LL rel_side) {
  LL p = 4 * linear_params(c, c);
  if (rel_side > 0) p += (2 * rel_side - 1) * (2 * rel_side - 1) * heads;
  return p;
}

struct GraftCost {
  LL params = 0, macs = 0, eltwise = 0;
};

GraftCost graft_cost(const GraftConfig& cfg, Index grid, LL c, LL heads) {
  const std::vector<LevelExtent> lv = graft_levels(cfg, grid, grid);
  const LL m = cfg.window;
  GraftCost t;
  for (Index b = 1; b <= cfg.scales; ++b) {
    const LL hw = static_cast<LL>(lv[static_cast<std::size_t>(b)].h) *
                  lv[static_cast<std::size_t>(b)].w;
    const LL hw_fine = static_cast<LL>(lv[static_cast<std::size_t>(b - 1)].h) *
                       lv[static_cast<std::size_t>(b - 1)].w;
    switch (cfg.down) {
      case DownKind::AvgPool:
        t.params += norm_params(c);
        t.eltwise += 3 * hw_fine * c;  // LN + GELU + pooled reads
        break;
      case DownKind::LinearProj:
        t.params += linear_params(cfg.ratio_h * cfg.ratio_w * c, c);
        t.macs += hw * (cfg.ratio_h * cfg.ratio_w * c) * c;
        break;
      case DownKind::CrossAttn:
        t.params += attn_params(c, heads, 0);
        t.macs += 2 * hw * c * c + 2 * hw_fine * c * c + 2 * hw * hw_fine * c;
        t.eltwise += hw_fine * c + heads * hw * hw_fine;  // query pool + softmax
        break;
    }
    // Level cell: pre-norm window attention with relative bias plus two adds.
    t.params += norm_params(c) + attn_params(c, heads, m);
    t.macs += 4 * hw * c * c + 2 * m * m * hw * c;
    t.eltwise += 3 * hw * c + heads * hw * m * m;
    switch (cfg.up) {
      case UpKind::WBilinear:
        t.params += norm_params(c) + linear_params(c, c) + hw * c;  // mixer + gate logits
        t.macs += hw * c * c;
        // LN + GELU + sigmoid + gate at the source, four taps per target.
        t.eltwise += 4 * hw * c + 4 * hw_fine * c;
        break;
      case UpKind::Nearest:
        t.eltwise += hw_fine * c;
        break;
      case UpKind::CrossAttn:
        t.params += attn_params(c, heads, 0);
        t.macs += 2 * hw_fine * c * c + 2 * hw * c * c + 2 * hw_fine * hw * c;
        t.eltwise += heads * hw_fine * hw;
        break;
    }
  }
  // Fusion into the block residual at the block's own resolution.
  t.eltwise += static_cast<LL>(grid) * grid * c;
  return t;
}

CostReport build_report(const BackboneSpec& s) {
  validate_spec(s);
  CostReport r;
  const LL g0 = s.grid(0);
  const LL c0 = s.channels[0];
  const LL p = s.patch_size;
  {
    CostRecord rec{"patch", "backbone", 0, 0, 0};
    rec.params = linear_params(p * p * 3, c0);
    rec.macs = g0 * g0 * (p * p * 3) * c0;
    if (s.kind == BackboneKind::Homogeneous) {
      rec.params += g0 * g0 * c0;
      rec.eltwise += g0 * g0 * c0;
    }
    r.records.push_back(rec);
  }
  for (Index st = 0; st < s.stages(); ++st) {
    const LL c = s.channels[static_cast<std::size_t>(st)];
    const LL heads = s.heads[static_cast<std::size_t>(st)];
    const LL g = s.grid(st);
    const LL m = s.eff_window(st);
    const bool rel = s.kind == BackboneKind::Pyramid;
    for (Index d = 0; d < s.depths[static_cast<std::size_t>(st)]; ++d) {
      const std::string bn = "s" + std::to_string(st) + ".b" + std::to_string(d);
      CostRecord rec{bn, "backbone", 0, 0, 0};
      rec.params = 2 * norm_params(c) + attn_params(c, heads, rel ? m : 0) +
                   linear_params(c, 4 * c) + linear_params(4 * c, c);
      rec.macs = 12 * g * g * c * c + 2 * m * m * g * g * c;
      rec.eltwise = 8 * g * g * c + heads * g * g * m * m;
      r.records.push_back(rec);
      if (const GraftConfig* gc = s.graft_at(st, d)) {
        const GraftCost gcost = graft_cost(*gc, g, c, heads);
        r.records.push_back({bn + ".graft", "graft", gcost.params, gcost.macs, gcost.eltwise});
      }
    }
    if (st + 1 < s.stages()) {
      const LL gh = s.grid(st + 1);
      CostRecord rec{"merge" + std::to_string(st), "backbone", 0, 0, 0};
      rec.params = norm_params(4 * c) + linear_params(4 * c, 2 * c);
      rec.macs = gh * gh * (4 * c) * (2 * c);
      rec.eltwise = gh * gh * 4 * c;
      r.records.push_back(rec);
    }
  }
  {
    const LL cl = s.channels.back();
    const LL gl = s.grid(s.stages() - 1);
    CostRecord rec{"head", "head", 0, 0, 0};
    rec.params = norm_params(cl) + linear_params(cl, s.num_classes);
    rec.macs = cl * s.num_classes;
    rec.eltwise = 2 * gl * gl * cl;  // final norm + mean pool
    r.records.push_back(rec);
  }
  return r;
}

}  // namespace

LL CostReport::total_params() const {
  LL n = 0;
  for (const CostRecord& r : records) n += r.params;
  return n;
}

LL CostReport::total_macs() const {
  LL n = 0;
  for (const CostRecord& r : records) n += r.macs;
  return n;
}

LL CostReport::total_eltwise() const {
  LL n = 0;
  for (const CostRecord& r : records) n += r.eltwise;
  return n;
}

LL CostReport::group_params(const std::string& group) const {
  LL n = 0;
  for (const CostRecord& r : records)
    if (r.group == group) n += r.params;
  return n;
}

LL CostReport::group_cost(const std::string& group) const {
  LL n = 0;
  for (const CostRecord& r : records)
    if (r.group == group) n += r.macs + r.eltwise;
  return n;
}

const CostRecord* CostReport::find(const std::string& name) const {
  for (const CostRecord& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

CostReport count_params(const BackboneSpec& spec) { return build_report(spec); }

CostReport count_flops(const BackboneSpec& spec) { return build_report(spec); }

ComplexityReport verify_complexity_claim(const BackboneSpec& spec,
                                         const std::vector<Index>& resolutions) {
  ComplexityReport rep;
  for (Index res : resolutions) {
    BackboneSpec scaled = spec;
    scaled.image_size = res * spec.patch_size;
    BackboneSpec plain = scaled;
    plain.grafts.clear();
    const CostReport gr = count_flops(scaled);
    const CostReport pr = count_flops(plain);
    ComplexityPoint pt;
    pt.resolution = res;
    pt.grafted = gr.group_cost("backbone") + gr.group_cost("graft");
    pt.plain = pr.group_cost("backbone");
    pt.ratio = static_cast<double>(pt.grafted) / static_cast<double>(pt.plain);
    rep.points.push_back(pt);
  }
  if (!rep.points.empty()) rep.limit = rep.points.back().ratio;
  for (const ComplexityPoint& pt : rep.points)
    if (pt.ratio > rep.bound) rep.bounded = false;
  return rep;
}

}  // namespace graft
