#pragma once

#include "graft/attention.hpp"

// Multi-scale branch grafted onto a backbone block. The branch downsamples a
// feature map B times (left to right), runs window attention at the coarsest
// scale, then walks back up: at each level the upsampled coarser signal joins
// the same-level downsampled map through a residual attention cell, and the
// final upsample returns a map at the block's own resolution for fusion.

namespace graft {

enum class DownKind { AvgPool, LinearProj, CrossAttn };
enum class UpKind { WBilinear, Nearest, CrossAttn };

inline const char* to_string(DownKind k) {
  switch (k) {
    case DownKind::AvgPool: return "avgpool";
    case DownKind::LinearProj: return "linproj";
    default: return "crossattn";
  }
}

inline const char* to_string(UpKind k) {
  switch (k) {
    case UpKind::WBilinear: return "wbilinear";
    case UpKind::Nearest: return "nearest";
    default: return "crossattn";
  }
}

struct GraftConfig {
  Index scales = 1;   // number of coarser levels hanging off the block
  Index window = 4;   // window side for branch attention and interpolation
  Index ratio_h = 2;  // per-level downsampling ratio
  Index ratio_w = 2;
  DownKind down = DownKind::AvgPool;
  UpKind up = UpKind::WBilinear;
  // Debug knob: the fused branch output is multiplied by this before joining
  // the block. 0 must make a grafted model bit-identical to its plain twin,
  // so the fusion add is skipped entirely in that case.
  double output_scale = 1.0;
};

struct LevelExtent {
  Index h = 0, w = 0;
};

// Extents of levels 0..B. Throws if any level fails to divide evenly, ends
// up smaller than the branch window, or is not window-aligned.
inline std::vector<LevelExtent> graft_levels(const GraftConfig& cfg, Index h0, Index w0) {
  if (cfg.scales < 1)
    throw ConfigError("graft: scales must be >= 1, got " + std::to_string(cfg.scales));
  if (cfg.ratio_h < 2 || cfg.ratio_w < 2)
    throw ConfigError("graft: downsampling ratio must be >= 2, got " +
                      std::to_string(cfg.ratio_h) + "x" + std::to_string(cfg.ratio_w));
  std::vector<LevelExtent> lv{{h0, w0}};
  for (Index b = 1; b <= cfg.scales; ++b) {
    const LevelExtent& prev = lv.back();
    if (prev.h % cfg.ratio_h != 0 || prev.w % cfg.ratio_w != 0)
      throw ConfigError("graft: level " + std::to_string(b - 1) + " extent " +
                        std::to_string(prev.h) + "x" + std::to_string(prev.w) +
                        " is not divisible by ratio " + std::to_string(cfg.ratio_h) + "x" +
                        std::to_string(cfg.ratio_w));
    const Index h = prev.h / cfg.ratio_h, w = prev.w / cfg.ratio_w;
    if (h < cfg.window || w < cfg.window)
      throw ConfigError("graft: level " + std::to_string(b) + " extent " + std::to_string(h) +
                        "x" + std::to_string(w) + " is smaller than window " +
                        std::to_string(cfg.window));
    if (h % cfg.window != 0 || w % cfg.window != 0)
      throw ConfigError("graft: window " + std::to_string(cfg.window) +
                        " does not divide level " + std::to_string(b) + " extent " +
                        std::to_string(h) + "x" + std::to_string(w));
    lv.push_back({h, w});
  }
  return lv;
}

template <class S>
struct GraftDownParams {
  LayerNormParams<S> norm;   // AvgPool
  LinearParams<S> proj;      // LinearProj: rh*rw*C -> C
  AttentionParams<S> attn;   // CrossAttn
};

template <class S>
struct GraftLevelParams {
  LayerNormParams<S> norm;
  AttentionParams<S> attn;
};

template <class S>
struct GraftUpParams {
  LayerNormParams<S> norm;  // WBilinear channel mixer: LN -> GELU -> Linear
  LinearParams<S> mix;
  Tensor<S> pos;            // [Hsrc, Wsrc, C] anti-alias logits at the source level
  AttentionParams<S> attn;  // CrossAttn
};

template <class S>
struct GraftParams {
  GraftConfig cfg;
  std::vector<GraftDownParams<S>> down;    // step to level b+1, index b
  std::vector<GraftLevelParams<S>> level;  // level b+1, index b
  std::vector<GraftUpParams<S>> up;        // step level b+1 -> b, index b
};

// One downsampling step: [H, W, C] -> [H/rh, W/rw, C].
template <class S>
Tensor<S> downsample(const Tensor<S>& x, const GraftDownParams<S>& p, const GraftConfig& cfg) {
  const Index h = x.extent(0), w = x.extent(1), c = x.extent(2);
  const Index oh = h / cfg.ratio_h, ow = w / cfg.ratio_w;
  switch (cfg.down) {
    case DownKind::AvgPool:
      return adaptive_avg_pool(gelu(layer_norm(x, p.norm)), oh, ow);
    case DownKind::LinearProj: {
      // Concatenate each rh x rw block along channels, then project back.
      std::vector<Index> rows;
      rows.reserve(static_cast<std::size_t>(h * w));
      for (Index a = 0; a < oh; ++a)
        for (Index b = 0; b < ow; ++b)
          for (Index i = 0; i < cfg.ratio_h; ++i)
            for (Index j = 0; j < cfg.ratio_w; ++j)
              rows.push_back((a * cfg.ratio_h + i) * w + (b * cfg.ratio_w + j));
      Tensor<S> blocks = reshape(gather_rows(x, rows), Shape{oh * ow, cfg.ratio_h * cfg.ratio_w * c});
      return reshape(linear(blocks, p.proj), Shape{oh, ow, c});
    }
    default: {
      // Queries are the average-pooled map; keys/values the full map.
      Tensor<S> q = adaptive_avg_pool(x, oh, ow);
      return cross_attention(q, x, p.attn);
    }
  }
}

// Per-window bilinear kernel: every source window of side m expands to an
// (rh*m) x (rw*m) target window using half-pixel sample centers clamped to
// the window interior. Taps never cross a window edge, so constant windows
// stay exactly constant and window locality is bit-strict.
template <class S>
Tensor<S> window_bilinear_interp(const Tensor<S>& src, Index m, Index rh, Index rw) {
  if (src.ndim() != 3)
    throw ShapeError("window_bilinear_interp: expected [H, W, C], got " + shape_str(src.shape()));
  const Index hs = src.extent(0), ws = src.extent(1), c = src.extent(2);
  (void)make_window_grid(hs, ws, m);
  const Index ht = hs * rh, wt = ws * rw;
  const Index tm_h = m * rh, tm_w = m * rw;
  const Index n = ht * wt;
  std::vector<Index> r00(static_cast<std::size_t>(n)), r01(static_cast<std::size_t>(n)),
      r10(static_cast<std::size_t>(n)), r11(static_cast<std::size_t>(n));
  std::vector<S> wy(static_cast<std::size_t>(n)), wx(static_cast<std::size_t>(n));
  for (Index u = 0; u < ht; ++u) {
    const Index mh = u / tm_h, lu = u % tm_h;
    double sy = (static_cast<double>(lu) + 0.5) / static_cast<double>(rh) - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(m - 1));
    const Index i0 = static_cast<Index>(sy);
    const Index i1 = std::min(i0 + 1, m - 1);
    const double fy = sy - static_cast<double>(i0);
    for (Index v = 0; v < wt; ++v) {
      const Index mw = v / tm_w, lv = v % tm_w;
      double sx = (static_cast<double>(lv) + 0.5) / static_cast<double>(rw) - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(m - 1));
      const Index j0 = static_cast<Index>(sx);
      const Index j1 = std::min(j0 + 1, m - 1);
      const double fx = sx - static_cast<double>(j0);
      const std::size_t o = static_cast<std::size_t>(u * wt + v);
      r00[o] = (mh * m + i0) * ws + (mw * m + j0);
      r01[o] = (mh * m + i0) * ws + (mw * m + j1);
      r10[o] = (mh * m + i1) * ws + (mw * m + j0);
      r11[o] = (mh * m + i1) * ws + (mw * m + j1);
      wy[o] = static_cast<S>(fy);
      wx[o] = static_cast<S>(fx);
    }
  }
  // Nested lerp (v0 + w*(v1 - v0)) rather than a 4-tap weighted sum: a window
  // holding a constant comes out bit-identical, since every difference is an
  // exact zero.
  Tensor<S> wyc = Tensor<S>::from_data(Shape{n, Index(1)}, std::move(wy));
  Tensor<S> wxc = Tensor<S>::from_data(Shape{n, Index(1)}, std::move(wx));
  Tensor<S> g00 = gather_rows(src, std::move(r00));
  Tensor<S> g01 = gather_rows(src, std::move(r01));
  Tensor<S> g10 = gather_rows(src, std::move(r10));
  Tensor<S> g11 = gather_rows(src, std::move(r11));
  Tensor<S> row0 = add(g00, mul(wxc, sub(g01, g00)));
  Tensor<S> row1 = add(g10, mul(wxc, sub(g11, g10)));
  return reshape(add(row0, mul(wyc, sub(row1, row0))), Shape{ht, wt, c});
}

// Learnable window-bilinear upsampling: channel mixer, anti-alias gate at the
// source resolution, then the per-window bilinear kernel. The gate is a
// sigmoid of learned logits, so it always lands strictly inside (0, 1).
template <class S>
Tensor<S> w_bilinear_upsample(const Tensor<S>& z, const GraftUpParams<S>& p,
                              const GraftConfig& cfg) {
  Tensor<S> mixed = linear(gelu(layer_norm(z, p.norm)), p.mix);
  Tensor<S> gated = mul(mixed, sigmoid(p.pos));
  return window_bilinear_interp(gated, cfg.window, cfg.ratio_h, cfg.ratio_w);
}

// Nearest-neighbour upsampling by pure replication.
template <class S>
Tensor<S> nearest_upsample(const Tensor<S>& z, Index rh, Index rw) {
  if (z.ndim() != 3)
    throw ShapeError("nearest_upsample: expected [H, W, C], got " + shape_str(z.shape()));
  const Index h = z.extent(0), w = z.extent(1), c = z.extent(2);
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(h * rh * w * rw));
  for (Index u = 0; u < h * rh; ++u)
    for (Index v = 0; v < w * rw; ++v) rows.push_back((u / rh) * w + (v / rw));
  return reshape(gather_rows(z, std::move(rows)), Shape{h * rh, w * rw, c});
}

// Cross-attention upsampling: the finer-level map queries the coarse signal.
template <class S>
Tensor<S> crossattn_upsample(const Tensor<S>& z_coarse, const Tensor<S>& x_fine,
                             const AttentionParams<S>& p) {
  return cross_attention(x_fine, z_coarse, p);
}

// Residual attention cell at one branch level: x plus window attention over
// the pre-normed map, plus the upsampled coarser signal when one exists.
template <class S>
Tensor<S> graft_block(const Tensor<S>& x, const Tensor<S>& zbar, const GraftLevelParams<S>& p,
                      Index m) {
  Tensor<S> a = l_msa(layer_norm(x, p.norm), p.attn, m);
  if (zbar.defined()) a = add(a, zbar);
  return add(x, a);
}

// Full branch pass: downsample chain, coarsest cell, then alternate upsample
// and cell back to level 1, finishing with the upsample to the block's own
// resolution. Output shape equals input shape.
template <class S>
Tensor<S> graft_forward(const Tensor<S>& x0, const GraftParams<S>& p) {
  const GraftConfig& cfg = p.cfg;
  const std::vector<LevelExtent> lv = graft_levels(cfg, x0.extent(0), x0.extent(1));
  const Index b = cfg.scales;
  std::vector<Tensor<S>> xs(static_cast<std::size_t>(b) + 1);
  xs[0] = x0;
  for (Index i = 1; i <= b; ++i)
    xs[static_cast<std::size_t>(i)] =
        downsample(xs[static_cast<std::size_t>(i - 1)], p.down[static_cast<std::size_t>(i - 1)], cfg);
  auto up_step = [&](const Tensor<S>& z, Index src_level) {
    const GraftUpParams<S>& u = p.up[static_cast<std::size_t>(src_level - 1)];
    switch (cfg.up) {
      case UpKind::WBilinear: return w_bilinear_upsample(z, u, cfg);
      case UpKind::Nearest: return nearest_upsample(z, cfg.ratio_h, cfg.ratio_w);
      default: return crossattn_upsample(z, xs[static_cast<std::size_t>(src_level - 1)], u.attn);
    }
  };
  Tensor<S> z = graft_block(xs[static_cast<std::size_t>(b)], Tensor<S>(),
                            p.level[static_cast<std::size_t>(b - 1)], cfg.window);
  for (Index i = b - 1; i >= 1; --i) {
    Tensor<S> zbar = up_step(z, i + 1);
    z = graft_block(xs[static_cast<std::size_t>(i)], zbar, p.level[static_cast<std::size_t>(i - 1)],
                    cfg.window);
  }
  (void)lv;
  return up_step(z, 1);
}

}  // namespace graft
