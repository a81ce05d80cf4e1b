#pragma once

#include <optional>
#include <string>

#include "graft/graft.hpp"
#include "graft/rng.hpp"

// Two toy backbones share one block layout: pre-norm window attention with an
// optional grafted multi-scale branch riding the same residual, followed by a
// single shared FFN. "Homogeneous" is a plain-ViT style column (constant
// resolution, absolute position embeddings, no relative bias, no shifting);
// "Pyramid" is a Swin style hierarchy (stages with patch merging, relative
// bias, alternating shifted windows).

namespace graft {

enum class BackboneKind { Homogeneous, Pyramid };

struct GraftAttachment {
  Index stage = 0;
  Index depth = 0;  // block index within the stage
  GraftConfig cfg;
};

struct BackboneSpec {
  BackboneKind kind = BackboneKind::Homogeneous;
  Index image_size = 32;
  Index patch_size = 4;
  std::vector<Index> depths = {2};
  std::vector<Index> channels = {32};
  std::vector<Index> heads = {2};
  Index window = 4;
  Index num_classes = 4;
  std::vector<GraftAttachment> grafts;

  Index stages() const { return static_cast<Index>(depths.size()); }
  Index grid(Index stage) const { return (image_size / patch_size) >> stage; }
  // A window larger than the grid collapses to one global window.
  Index eff_window(Index stage) const { return std::min(window, grid(stage)); }
  const GraftConfig* graft_at(Index stage, Index depth) const {
    for (const GraftAttachment& g : grafts)
      if (g.stage == stage && g.depth == depth) return &g.cfg;
    return nullptr;
  }
};

inline void validate_spec(const BackboneSpec& s) {
  if (s.image_size < 1 || s.patch_size < 1 || s.image_size % s.patch_size != 0)
    throw ConfigError("patch size " + std::to_string(s.patch_size) + " does not divide image " +
                      std::to_string(s.image_size));
  if (s.depths.empty() || s.depths.size() != s.channels.size() ||
      s.depths.size() != s.heads.size())
    throw ConfigError("depths, channels and heads must list the same number of stages");
  if (s.kind == BackboneKind::Homogeneous && s.depths.size() != 1)
    throw ConfigError("homogeneous backbone takes exactly one stage, got " +
                      std::to_string(s.depths.size()));
  if (s.num_classes < 2)
    throw ConfigError("num_classes must be >= 2, got " + std::to_string(s.num_classes));
  for (Index st = 0; st < s.stages(); ++st) {
    if (s.depths[static_cast<std::size_t>(st)] < 1)
      throw ConfigError("stage " + std::to_string(st) + " has no blocks");
    const Index c = s.channels[static_cast<std::size_t>(st)];
    const Index h = s.heads[static_cast<std::size_t>(st)];
    if (c < 1 || h < 1 || c % h != 0)
      throw ConfigError("stage " + std::to_string(st) + ": heads " + std::to_string(h) +
                        " do not divide channels " + std::to_string(c));
    if (st > 0 && c != 2 * s.channels[static_cast<std::size_t>(st - 1)])
      throw ConfigError("stage " + std::to_string(st) + " channels " + std::to_string(c) +
                        " must double the previous stage");
    const Index g = s.grid(st);
    if (g < 1) throw ConfigError("stage " + std::to_string(st) + " has an empty token grid");
    const Index m = s.eff_window(st);
    if (g % m != 0)
      throw ConfigError("window " + std::to_string(m) + " does not divide stage " +
                        std::to_string(st) + " grid " + std::to_string(g));
  }
  for (const GraftAttachment& g : s.grafts) {
    if (g.stage < 0 || g.stage >= s.stages() || g.depth < 0 ||
        g.depth >= s.depths[static_cast<std::size_t>(g.stage)])
      throw ConfigError("graft at stage " + std::to_string(g.stage) + " depth " +
                        std::to_string(g.depth) + " is outside the backbone");
    if (g.stage == 0 && g.depth == 0)
      throw ConfigError("no graft at the first layer: drop the attachment at stage 0 depth 0");
    const Index grid = s.grid(g.stage);
    (void)graft_levels(g.cfg, grid, grid);  // throws with level details
    if (s.channels[static_cast<std::size_t>(g.stage)] % s.heads[static_cast<std::size_t>(g.stage)] != 0)
      throw ConfigError("graft heads do not divide channels");
  }
  for (std::size_t i = 0; i < s.grafts.size(); ++i)
    for (std::size_t j = i + 1; j < s.grafts.size(); ++j)
      if (s.grafts[i].stage == s.grafts[j].stage && s.grafts[i].depth == s.grafts[j].depth)
        throw ConfigError("duplicate graft at stage " + std::to_string(s.grafts[i].stage) +
                          " depth " + std::to_string(s.grafts[i].depth));
}

// Largest usable scale count at a square grid: each level must halve evenly
// and stay a window-aligned multiple of m, capped at `most`.
inline Index max_scales(Index grid, Index m, Index most) {
  Index b = 0, g = grid;
  while (b < most && g % 2 == 0 && (g / 2) >= m && (g / 2) % m == 0) {
    g /= 2;
    ++b;
  }
  return b;
}

// Default attachment policy. Homogeneous: every block after the first, as
// many scales as the grid allows (up to 3). Pyramid: every block of every
// stage except the last stage, skipping the very first block.
inline std::vector<GraftAttachment> default_graft_policy(const BackboneSpec& s) {
  std::vector<GraftAttachment> out;
  const Index last = s.kind == BackboneKind::Pyramid ? s.stages() - 1 : s.stages();
  for (Index st = 0; st < last; ++st) {
    const Index grid = s.grid(st);
    GraftConfig cfg;
    cfg.window = s.eff_window(st);
    cfg.scales = max_scales(grid, cfg.window, 3);
    if (cfg.scales < 1) continue;
    for (Index d = 0; d < s.depths[static_cast<std::size_t>(st)]; ++d) {
      if (st == 0 && d == 0) continue;
      out.push_back({st, d, cfg});
    }
  }
  return out;
}

// Swaps a homogeneous backbone's global attention for unshifted local windows
// of side m. Attention elsewhere in the model is untouched; homogeneous
// models never shift.
inline BackboneSpec deit_window_substitution(BackboneSpec s, Index m) {
  if (s.kind != BackboneKind::Homogeneous)
    throw ConfigError("window substitution applies to the homogeneous backbone only");
  s.window = m;
  validate_spec(s);
  return s;
}

// ---- parameters ----

template <class S>
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  Tensor<S> add(const std::string& name, Tensor<S> t) {
    t.set_requires_grad(true);
    items.emplace_back(name, t);
    return t;
  }
  Index total() const {
    Index n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }
  const Tensor<S>* find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
  void zero_grads() {
    for (auto& [name, t] : items) t.zero_grad();
  }
};

namespace init {

// Every tensor draws from its own named stream, so two models that share a
// parameter name produce identical values for it regardless of what else
// they allocate.
template <class S>
Tensor<S> trunc_normal(const Shape& shape, double stddev, std::uint64_t seed,
                       const std::string& name) {
  Rng rng(mix_seed(seed, name));
  std::vector<S> v(static_cast<std::size_t>(shape_numel(shape)));
  for (S& x : v) x = static_cast<S>(rng.trunc_normal(stddev));
  return Tensor<S>::from_data(shape, std::move(v));
}

}  // namespace init

template <class S>
LinearParams<S> make_linear(ParamRegistry<S>& reg, const std::string& name, Index in, Index out,
                            std::uint64_t seed) {
  LinearParams<S> p;
  p.w = reg.add(name + ".w", init::trunc_normal<S>(Shape{in, out}, 0.02, seed, name + ".w"));
  p.b = reg.add(name + ".b", Tensor<S>::zeros(Shape{out}));
  return p;
}

template <class S>
LayerNormParams<S> make_norm(ParamRegistry<S>& reg, const std::string& name, Index c) {
  LayerNormParams<S> p;
  p.gamma = reg.add(name + ".g", Tensor<S>::ones(Shape{c}));
  p.beta = reg.add(name + ".b", Tensor<S>::zeros(Shape{c}));
  return p;
}

// rel_side > 0 attaches a relative-position bias table for windows of that
// side; 0 disables it.
template <class S>
AttentionParams<S> make_attention(ParamRegistry<S>& reg, const std::string& name, Index c,
                                  Index heads, Index rel_side, std::uint64_t seed) {
  AttentionParams<S> p;
  p.q = make_linear(reg, name + ".q", c, c, seed);
  p.k = make_linear(reg, name + ".k", c, c, seed);
  p.v = make_linear(reg, name + ".v", c, c, seed);
  p.o = make_linear(reg, name + ".o", c, c, seed);
  p.heads = heads;
  if (rel_side > 0) {
    const Index span = (2 * rel_side - 1) * (2 * rel_side - 1);
    p.rel_bias = reg.add(name + ".relbias", init::trunc_normal<S>(Shape{span, heads}, 0.02, seed,
                                                                  name + ".relbias"));
  }
  return p;
}

// Branch parameters. Every level owns fresh attention weights (with relative
// bias); anti-alias logits start at zero so the gate opens at exactly 1/2.
template <class S>
GraftParams<S> make_graft(ParamRegistry<S>& reg, const std::string& name, const GraftConfig& cfg,
                          Index h0, Index w0, Index c, Index heads, std::uint64_t seed) {
  GraftParams<S> p;
  p.cfg = cfg;
  const std::vector<LevelExtent> lv = graft_levels(cfg, h0, w0);
  for (Index b = 1; b <= cfg.scales; ++b) {
    const std::string dn = name + ".down" + std::to_string(b);
    GraftDownParams<S> d;
    switch (cfg.down) {
      case DownKind::AvgPool: d.norm = make_norm(reg, dn + ".norm", c); break;
      case DownKind::LinearProj:
        d.proj = make_linear(reg, dn + ".proj", cfg.ratio_h * cfg.ratio_w * c, c, seed);
        break;
      default: d.attn = make_attention(reg, dn + ".attn", c, heads, 0, seed); break;
    }
    p.down.push_back(std::move(d));

    const std::string ln = name + ".lvl" + std::to_string(b);
    GraftLevelParams<S> l;
    l.norm = make_norm(reg, ln + ".norm", c);
    l.attn = make_attention(reg, ln + ".attn", c, heads, cfg.window, seed);
    p.level.push_back(std::move(l));

    const std::string un = name + ".up" + std::to_string(b);
    GraftUpParams<S> u;
    switch (cfg.up) {
      case UpKind::WBilinear:
        u.norm = make_norm(reg, un + ".norm", c);
        u.mix = make_linear(reg, un + ".mix", c, c, seed);
        u.pos = reg.add(un + ".pos",
                        Tensor<S>::zeros(Shape{lv[static_cast<std::size_t>(b)].h,
                                               lv[static_cast<std::size_t>(b)].w, c}));
        break;
      case UpKind::Nearest: break;
      default: u.attn = make_attention(reg, un + ".attn", c, heads, 0, seed); break;
    }
    p.up.push_back(std::move(u));
  }
  return p;
}

template <class S>
struct BlockParams {
  LayerNormParams<S> norm1, norm2;
  AttentionParams<S> attn;
  LinearParams<S> fc1, fc2;  // shared FFN, expansion 4
  std::optional<GraftParams<S>> graft;
  Index shift = 0;
};

template <class S>
struct MergeParams {
  LayerNormParams<S> norm;  // over the 4C concatenation
  LinearParams<S> proj;     // 4C -> 2C
};

template <class S>
struct ModelParams {
  BackboneSpec spec;
  LinearParams<S> patch_proj;
  Tensor<S> pos_emb;  // homogeneous only, [H0, W0, C]
  std::vector<std::vector<BlockParams<S>>> stage;
  std::vector<MergeParams<S>> merge;
  LayerNormParams<S> final_norm;
  LinearParams<S> head;
  ParamRegistry<S> reg;
};

template <class S>
ModelParams<S> build_model(const BackboneSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  ModelParams<S> m;
  m.spec = spec;
  ParamRegistry<S>& reg = m.reg;
  const Index c0 = spec.channels[0];
  const Index g0 = spec.grid(0);
  m.patch_proj = make_linear(reg, "patch.proj", spec.patch_size * spec.patch_size * 3, c0, seed);
  if (spec.kind == BackboneKind::Homogeneous)
    m.pos_emb = reg.add("patch.pos",
                        init::trunc_normal<S>(Shape{g0, g0, c0}, 0.02, seed, "patch.pos"));
  for (Index st = 0; st < spec.stages(); ++st) {
    const Index c = spec.channels[static_cast<std::size_t>(st)];
    const Index heads = spec.heads[static_cast<std::size_t>(st)];
    const Index grid = spec.grid(st);
    const Index em = spec.eff_window(st);
    std::vector<BlockParams<S>> blocks;
    for (Index d = 0; d < spec.depths[static_cast<std::size_t>(st)]; ++d) {
      const std::string bn = "s" + std::to_string(st) + ".b" + std::to_string(d);
      BlockParams<S> b;
      b.norm1 = make_norm(reg, bn + ".norm1", c);
      const bool rel = spec.kind == BackboneKind::Pyramid;
      b.attn = make_attention(reg, bn + ".attn", c, heads, rel ? em : 0, seed);
      b.norm2 = make_norm(reg, bn + ".norm2", c);
      b.fc1 = make_linear(reg, bn + ".ffn.fc1", c, 4 * c, seed);
      b.fc2 = make_linear(reg, bn + ".ffn.fc2", 4 * c, c, seed);
      // Swin-style alternation: odd blocks shift by half a window, but only
      // when the grid is bigger than one window.
      if (spec.kind == BackboneKind::Pyramid && d % 2 == 1 && grid > em) b.shift = em / 2;
      if (const GraftConfig* gc = spec.graft_at(st, d))
        b.graft = make_graft(reg, bn + ".graft", *gc, grid, grid, c, heads, seed);
      blocks.push_back(std::move(b));
    }
    m.stage.push_back(std::move(blocks));
    if (st + 1 < spec.stages()) {
      const std::string mn = "merge" + std::to_string(st);
      MergeParams<S> mp;
      mp.norm = make_norm(reg, mn + ".norm", 4 * c);
      mp.proj = make_linear(reg, mn + ".proj", 4 * c, 2 * c, seed);
      m.merge.push_back(std::move(mp));
    }
  }
  const Index clast = spec.channels.back();
  m.final_norm = make_norm(reg, "final.norm", clast);
  m.head = make_linear(reg, "head", clast, spec.num_classes, seed);
  return m;
}

// ---- forward ----

// Non-overlapping patch extraction + linear projection: [Him, Wim, 3] ->
// [H0, W0, C]. The homogeneous backbone adds its absolute position table.
template <class S>
Tensor<S> patch_embed(const Tensor<S>& image, const ModelParams<S>& m) {
  const BackboneSpec& s = m.spec;
  if (image.ndim() != 3 || image.extent(0) != s.image_size || image.extent(1) != s.image_size ||
      image.extent(2) != 3)
    throw ShapeError("patch_embed: expected [" + std::to_string(s.image_size) + ", " +
                     std::to_string(s.image_size) + ", 3], got " + shape_str(image.shape()));
  const Index p = s.patch_size, g = s.grid(0);
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(s.image_size * s.image_size));
  for (Index a = 0; a < g; ++a)
    for (Index b = 0; b < g; ++b)
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) rows.push_back((a * p + i) * s.image_size + (b * p + j));
  Tensor<S> patches = reshape(gather_rows(image, std::move(rows)), Shape{g * g, p * p * 3});
  Tensor<S> tok = reshape(linear(patches, m.patch_proj), Shape{g, g, s.channels[0]});
  if (s.kind == BackboneKind::Homogeneous) tok = add(tok, m.pos_emb);
  return tok;
}

// 2x2 neighbourhood concat -> LN -> linear halving: [H, W, C] -> [H/2, W/2, 2C].
template <class S>
Tensor<S> patch_merging(const Tensor<S>& x, const MergeParams<S>& p) {
  const Index h = x.extent(0), w = x.extent(1), c = x.extent(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("patch_merging: odd extents " + shape_str(x.shape()));
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(h * w));
  for (Index a = 0; a < h / 2; ++a)
    for (Index b = 0; b < w / 2; ++b)
      for (Index i = 0; i < 2; ++i)
        for (Index j = 0; j < 2; ++j) rows.push_back((2 * a + i) * w + (2 * b + j));
  Tensor<S> cat = reshape(gather_rows(x, std::move(rows)), Shape{(h / 2) * (w / 2), 4 * c});
  Tensor<S> y = linear(layer_norm(cat, p.norm), p.proj);
  return reshape(y, Shape{h / 2, w / 2, 2 * c});
}

// One backbone block. The branch, when present, sees the block input x; its
// output joins the attention residual before the shared FFN. An output scale
// of exactly 0 skips the join, making the block bit-identical to a plain one.
template <class S>
Tensor<S> block_forward(const Tensor<S>& x, const BlockParams<S>& p, Index m) {
  Tensor<S> a = shifted_l_msa(layer_norm(x, p.norm1), p.attn, std::min(m, x.extent(0)), p.shift);
  if (p.graft && p.graft->cfg.output_scale != 0.0) {
    Tensor<S> zbar = graft_forward(x, *p.graft);
    if (p.graft->cfg.output_scale != 1.0)
      zbar = scale(zbar, static_cast<S>(p.graft->cfg.output_scale));
    a = add(a, zbar);
  }
  Tensor<S> y = add(x, a);
  Tensor<S> f = linear(gelu(linear(layer_norm(y, p.norm2), p.fc1)), p.fc2);
  return add(y, f);
}

// Full pass: patch embed, stages with merging between them, final norm, mean
// over all positions, classifier. Returns [num_classes] logits.
template <class S>
Tensor<S> model_forward(const Tensor<S>& image, const ModelParams<S>& m) {
  const BackboneSpec& s = m.spec;
  Tensor<S> x = patch_embed(image, m);
  for (Index st = 0; st < s.stages(); ++st) {
    const Index em = s.eff_window(st);
    for (const BlockParams<S>& b : m.stage[static_cast<std::size_t>(st)])
      x = block_forward(x, b, em);
    if (st + 1 < s.stages()) x = patch_merging(x, m.merge[static_cast<std::size_t>(st)]);
  }
  x = layer_norm(x, m.final_norm);
  Tensor<S> pooled = adaptive_avg_pool(x, 1, 1);
  Tensor<S> logits = linear(reshape(pooled, Shape{Index(1), x.extent(2)}), m.head);
  return reshape(logits, Shape{s.num_classes});
}

}  // namespace graft
