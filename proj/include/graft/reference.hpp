#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "graft/backbone.hpp"

// Naive double-precision oracles. Everything here is written as plain loops
// over std::vector<double>, independent of the tensor/autodiff path, and
// exists only to verify that path (tests and the `check oracle` battery).
// The structs mirror the parameter containers but hold raw copies.

namespace graft::reference {

struct Map {
  Index h = 0, w = 0, c = 0;
  std::vector<double> v;  // row-major [h][w][c]
  double& at(Index i, Index j, Index ch) {
    return v[static_cast<std::size_t>((i * w + j) * c + ch)];
  }
  double at(Index i, Index j, Index ch) const {
    return v[static_cast<std::size_t>((i * w + j) * c + ch)];
  }
};

inline Map make_map(Index h, Index w, Index c) {
  return Map{h, w, c, std::vector<double>(static_cast<std::size_t>(h * w * c), 0.0)};
}

template <class S>
std::vector<double> values(const Tensor<S>& t) {
  std::vector<double> out;
  if (!t.defined()) return out;
  out.reserve(t.value().size());
  for (S v : t.value()) out.push_back(static_cast<double>(v));
  return out;
}

struct LinearRef {
  Index in = 0, out = 0;
  std::vector<double> w, b;
};

struct NormRef {
  std::vector<double> g, b;
};

struct AttnRef {
  LinearRef q, k, v, o;
  Index heads = 1;
  std::vector<double> rel_bias;  // empty when disabled
};

template <class S>
LinearRef extract(const LinearParams<S>& p) {
  return LinearRef{p.w.extent(0), p.w.extent(1), values(p.w), values(p.b)};
}

template <class S>
NormRef extract(const LayerNormParams<S>& p) {
  return NormRef{values(p.gamma), values(p.beta)};
}

template <class S>
AttnRef extract(const AttentionParams<S>& p) {
  return AttnRef{extract(p.q), extract(p.k), extract(p.v), extract(p.o), p.heads,
                 values(p.rel_bias)};
}

// ---- primitives ----

inline std::vector<double> matmul(const std::vector<double>& a, Index m, Index k,
                                  const std::vector<double>& b, Index n) {
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Index t = 0; t < k; ++t)
        acc += a[static_cast<std::size_t>(i * k + t)] * b[static_cast<std::size_t>(t * n + j)];
      out[static_cast<std::size_t>(i * n + j)] = acc;
    }
  return out;
}

inline std::vector<double> apply_linear(const std::vector<double>& x, Index rows,
                                        const LinearRef& p) {
  std::vector<double> out = matmul(x, rows, p.in, p.w, p.out);
  for (Index r = 0; r < rows; ++r)
    for (Index j = 0; j < p.out; ++j)
      out[static_cast<std::size_t>(r * p.out + j)] += p.b[static_cast<std::size_t>(j)];
  return out;
}

inline std::vector<double> apply_norm(const std::vector<double>& x, Index rows, Index c,
                                      const NormRef& p, double eps = 1e-5) {
  std::vector<double> out(x.size());
  for (Index r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (Index i = 0; i < c; ++i) mu += x[static_cast<std::size_t>(r * c + i)];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (Index i = 0; i < c; ++i) {
      const double d = x[static_cast<std::size_t>(r * c + i)] - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (Index i = 0; i < c; ++i)
      out[static_cast<std::size_t>(r * c + i)] =
          p.g[static_cast<std::size_t>(i)] * (x[static_cast<std::size_t>(r * c + i)] - mu) * inv +
          p.b[static_cast<std::size_t>(i)];
  }
  return out;
}

inline double gelu(double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> softmax_row(std::vector<double> x) {
  double sum = 0.0;
  for (double& v : x) {
    v = std::exp(v);
    sum += v;
  }
  for (double& v : x) v /= sum;
  return x;
}

inline Map avg_pool(const Map& x, Index oh, Index ow) {
  const Index kh = x.h / oh, kw = x.w / ow;
  Map out = make_map(oh, ow, x.c);
  for (Index a = 0; a < oh; ++a)
    for (Index b = 0; b < ow; ++b)
      for (Index ch = 0; ch < x.c; ++ch) {
        double acc = 0.0;
        for (Index i = 0; i < kh; ++i)
          for (Index j = 0; j < kw; ++j) acc += x.at(a * kh + i, b * kw + j, ch);
        out.at(a, b, ch) = acc / static_cast<double>(kh * kw);
      }
  return out;
}

// ---- attention ----

// Window attention by explicit per-window, per-head loops. `shift` cyclically
// shifts the map first; pairs straddling a pre-shift discontinuity are
// excluded from the softmax outright (the tape path reaches the same weights
// through an additive mask).
inline Map window_attention(const Map& x, const AttnRef& p, Index m, Index shift = 0) {
  const Index h = x.h, w = x.w, c = x.c;
  const Index dh = c / p.heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  Map shifted = x;
  if (shift != 0)
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        for (Index ch = 0; ch < c; ++ch)
          shifted.at(i, j, ch) = x.at((i + shift) % h, (j + shift) % w, ch);
  auto region = [&](Index i, Index j) {
    auto band = [&](Index v, Index n) { return v < n - m ? 0 : (v < n - shift ? 1 : 2); };
    return band(i, h) * 3 + band(j, w);
  };
  Map out = make_map(h, w, c);
  const Index t = m * m;
  for (Index mh = 0; mh < h / m; ++mh)
    for (Index mw = 0; mw < w / m; ++mw) {
      std::vector<double> tok(static_cast<std::size_t>(t * c));
      std::vector<Index> gi(static_cast<std::size_t>(t)), gj(static_cast<std::size_t>(t));
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j) {
          const Index a = i * m + j;
          gi[static_cast<std::size_t>(a)] = mh * m + i;
          gj[static_cast<std::size_t>(a)] = mw * m + j;
          for (Index ch = 0; ch < c; ++ch)
            tok[static_cast<std::size_t>(a * c + ch)] =
                shifted.at(mh * m + i, mw * m + j, ch);
        }
      const std::vector<double> q = apply_linear(tok, t, p.q);
      const std::vector<double> k = apply_linear(tok, t, p.k);
      const std::vector<double> v = apply_linear(tok, t, p.v);
      std::vector<double> ctx(static_cast<std::size_t>(t * c), 0.0);
      for (Index hd = 0; hd < p.heads; ++hd)
        for (Index a = 0; a < t; ++a) {
          std::vector<double> logit;
          std::vector<Index> keys;
          for (Index b = 0; b < t; ++b) {
            if (shift != 0 &&
                region(gi[static_cast<std::size_t>(a)], gj[static_cast<std::size_t>(a)]) !=
                    region(gi[static_cast<std::size_t>(b)], gj[static_cast<std::size_t>(b)]))
              continue;
            double acc = 0.0;
            for (Index d = 0; d < dh; ++d)
              acc += q[static_cast<std::size_t>(a * c + hd * dh + d)] *
                     k[static_cast<std::size_t>(b * c + hd * dh + d)];
            acc *= scl;
            if (!p.rel_bias.empty()) {
              const Index dy = a / m - b / m + m - 1;
              const Index dx = a % m - b % m + m - 1;
              acc += p.rel_bias[static_cast<std::size_t>((dy * (2 * m - 1) + dx) * p.heads + hd)];
            }
            logit.push_back(acc);
            keys.push_back(b);
          }
          const std::vector<double> wts = softmax_row(logit);
          for (std::size_t e = 0; e < keys.size(); ++e)
            for (Index d = 0; d < dh; ++d)
              ctx[static_cast<std::size_t>(a * c + hd * dh + d)] +=
                  wts[e] * v[static_cast<std::size_t>(keys[e] * c + hd * dh + d)];
        }
      const std::vector<double> proj = apply_linear(ctx, t, p.o);
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < m; ++j)
          for (Index ch = 0; ch < c; ++ch)
            out.at(mh * m + i, mw * m + j, ch) =
                proj[static_cast<std::size_t>((i * m + j) * c + ch)];
    }
  if (shift != 0) {
    Map back = make_map(h, w, c);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j)
        for (Index ch = 0; ch < c; ++ch)
          back.at((i + shift) % h, (j + shift) % w, ch) = out.at(i, j, ch);
    return back;
  }
  return out;
}

// Global attention over the whole map, plain token loops (no windows).
inline Map global_attention(const Map& x, const AttnRef& p) {
  const Index t = x.h * x.w, c = x.c;
  const Index dh = c / p.heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::vector<double> q = apply_linear(x.v, t, p.q);
  const std::vector<double> k = apply_linear(x.v, t, p.k);
  const std::vector<double> v = apply_linear(x.v, t, p.v);
  std::vector<double> ctx(static_cast<std::size_t>(t * c), 0.0);
  for (Index hd = 0; hd < p.heads; ++hd)
    for (Index a = 0; a < t; ++a) {
      std::vector<double> logit(static_cast<std::size_t>(t));
      for (Index b = 0; b < t; ++b) {
        double acc = 0.0;
        for (Index d = 0; d < dh; ++d)
          acc += q[static_cast<std::size_t>(a * c + hd * dh + d)] *
                 k[static_cast<std::size_t>(b * c + hd * dh + d)];
        logit[static_cast<std::size_t>(b)] = acc * scl;
        if (!p.rel_bias.empty()) {
          const Index m = x.h;  // square map required when biased
          const Index dy = a / m - b / m + m - 1;
          const Index dx = a % m - b % m + m - 1;
          logit[static_cast<std::size_t>(b)] +=
              p.rel_bias[static_cast<std::size_t>((dy * (2 * m - 1) + dx) * p.heads + hd)];
        }
      }
      const std::vector<double> wts = softmax_row(logit);
      for (Index b = 0; b < t; ++b)
        for (Index d = 0; d < dh; ++d)
          ctx[static_cast<std::size_t>(a * c + hd * dh + d)] +=
              wts[static_cast<std::size_t>(b)] * v[static_cast<std::size_t>(b * c + hd * dh + d)];
    }
  Map out = make_map(x.h, x.w, c);
  out.v = apply_linear(ctx, t, p.o);
  return out;
}

inline Map cross_attention(const Map& qm, const Map& km, const AttnRef& p) {
  const Index tq = qm.h * qm.w, tk = km.h * km.w, c = qm.c;
  const Index dh = c / p.heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::vector<double> q = apply_linear(qm.v, tq, p.q);
  const std::vector<double> k = apply_linear(km.v, tk, p.k);
  const std::vector<double> v = apply_linear(km.v, tk, p.v);
  std::vector<double> ctx(static_cast<std::size_t>(tq * c), 0.0);
  for (Index hd = 0; hd < p.heads; ++hd)
    for (Index a = 0; a < tq; ++a) {
      std::vector<double> logit(static_cast<std::size_t>(tk));
      for (Index b = 0; b < tk; ++b) {
        double acc = 0.0;
        for (Index d = 0; d < dh; ++d)
          acc += q[static_cast<std::size_t>(a * c + hd * dh + d)] *
                 k[static_cast<std::size_t>(b * c + hd * dh + d)];
        logit[static_cast<std::size_t>(b)] = acc * scl;
      }
      const std::vector<double> wts = softmax_row(logit);
      for (Index b = 0; b < tk; ++b)
        for (Index d = 0; d < dh; ++d)
          ctx[static_cast<std::size_t>(a * c + hd * dh + d)] +=
              wts[static_cast<std::size_t>(b)] * v[static_cast<std::size_t>(b * c + hd * dh + d)];
    }
  Map out = make_map(qm.h, qm.w, c);
  out.v = apply_linear(ctx, tq, p.o);
  return out;
}

// ---- interpolation ----

// Scalar form of the per-window bilinear kernel: half-pixel centers, clamped
// to the window, taps never crossing window edges.
inline Map window_bilinear(const Map& src, Index m, Index rh, Index rw) {
  Map out = make_map(src.h * rh, src.w * rw, src.c);
  for (Index u = 0; u < out.h; ++u)
    for (Index vv = 0; vv < out.w; ++vv) {
      const Index mh = u / (m * rh), mw = vv / (m * rw);
      double sy = (static_cast<double>(u % (m * rh)) + 0.5) / static_cast<double>(rh) - 0.5;
      double sx = (static_cast<double>(vv % (m * rw)) + 0.5) / static_cast<double>(rw) - 0.5;
      sy = std::min(std::max(sy, 0.0), static_cast<double>(m - 1));
      sx = std::min(std::max(sx, 0.0), static_cast<double>(m - 1));
      const Index i0 = static_cast<Index>(sy), j0 = static_cast<Index>(sx);
      const Index i1 = std::min(i0 + 1, m - 1), j1 = std::min(j0 + 1, m - 1);
      const double fy = sy - static_cast<double>(i0), fx = sx - static_cast<double>(j0);
      for (Index ch = 0; ch < src.c; ++ch)
        out.at(u, vv, ch) =
            (1.0 - fy) * (1.0 - fx) * src.at(mh * m + i0, mw * m + j0, ch) +
            (1.0 - fy) * fx * src.at(mh * m + i0, mw * m + j1, ch) +
            fy * (1.0 - fx) * src.at(mh * m + i1, mw * m + j0, ch) +
            fy * fx * src.at(mh * m + i1, mw * m + j1, ch);
    }
  return out;
}

inline Map nearest(const Map& src, Index rh, Index rw) {
  Map out = make_map(src.h * rh, src.w * rw, src.c);
  for (Index u = 0; u < out.h; ++u)
    for (Index v = 0; v < out.w; ++v)
      for (Index ch = 0; ch < src.c; ++ch) out.at(u, v, ch) = src.at(u / rh, v / rw, ch);
  return out;
}

// ---- graft composite ----

struct DownRef {
  NormRef norm;
  LinearRef proj;
  AttnRef attn;
};

struct UpRef {
  NormRef norm;
  LinearRef mix;
  std::vector<double> pos;
  Index pos_h = 0, pos_w = 0;
  AttnRef attn;
};

struct LevelRef {
  NormRef norm;
  AttnRef attn;
};

struct GraftRef {
  GraftConfig cfg;
  std::vector<DownRef> down;
  std::vector<LevelRef> level;
  std::vector<UpRef> up;
};

template <class S>
GraftRef extract(const GraftParams<S>& p) {
  GraftRef r;
  r.cfg = p.cfg;
  for (const auto& d : p.down) {
    DownRef dr;
    if (p.cfg.down == DownKind::AvgPool) dr.norm = extract(d.norm);
    if (p.cfg.down == DownKind::LinearProj) dr.proj = extract(d.proj);
    if (p.cfg.down == DownKind::CrossAttn) dr.attn = extract(d.attn);
    r.down.push_back(std::move(dr));
  }
  for (const auto& l : p.level) r.level.push_back(LevelRef{extract(l.norm), extract(l.attn)});
  for (const auto& u : p.up) {
    UpRef ur;
    if (p.cfg.up == UpKind::WBilinear) {
      ur.norm = extract(u.norm);
      ur.mix = extract(u.mix);
      ur.pos = values(u.pos);
      ur.pos_h = u.pos.extent(0);
      ur.pos_w = u.pos.extent(1);
    }
    if (p.cfg.up == UpKind::CrossAttn) ur.attn = extract(u.attn);
    r.up.push_back(std::move(ur));
  }
  return r;
}

inline Map downsample(const Map& x, const DownRef& p, const GraftConfig& cfg) {
  const Index oh = x.h / cfg.ratio_h, ow = x.w / cfg.ratio_w;
  switch (cfg.down) {
    case DownKind::AvgPool: {
      Map t = x;
      t.v = apply_norm(x.v, x.h * x.w, x.c, p.norm);
      for (double& v : t.v) v = gelu(v);
      return avg_pool(t, oh, ow);
    }
    case DownKind::LinearProj: {
      const Index rr = cfg.ratio_h * cfg.ratio_w;
      std::vector<double> blocks(static_cast<std::size_t>(oh * ow * rr * x.c));
      for (Index a = 0; a < oh; ++a)
        for (Index b = 0; b < ow; ++b) {
          Index slot = 0;
          for (Index i = 0; i < cfg.ratio_h; ++i)
            for (Index j = 0; j < cfg.ratio_w; ++j, ++slot)
              for (Index ch = 0; ch < x.c; ++ch)
                blocks[static_cast<std::size_t>(((a * ow + b) * rr + slot) * x.c + ch)] =
                    x.at(a * cfg.ratio_h + i, b * cfg.ratio_w + j, ch);
        }
      Map out = make_map(oh, ow, x.c);
      out.v = apply_linear(blocks, oh * ow, p.proj);
      return out;
    }
    default: return cross_attention(avg_pool(x, oh, ow), x, p.attn);
  }
}

inline Map w_bilinear_up(const Map& z, const UpRef& p, const GraftConfig& cfg) {
  Map mixed = z;
  mixed.v = apply_norm(z.v, z.h * z.w, z.c, p.norm);
  for (double& v : mixed.v) v = gelu(v);
  mixed.v = apply_linear(mixed.v, z.h * z.w, p.mix);
  for (std::size_t i = 0; i < mixed.v.size(); ++i) mixed.v[i] *= sigmoid(p.pos[i]);
  return window_bilinear(mixed, cfg.window, cfg.ratio_h, cfg.ratio_w);
}

inline Map graft_cell(const Map& x, const Map* zbar, const LevelRef& p, Index m) {
  Map normed = x;
  normed.v = apply_norm(x.v, x.h * x.w, x.c, p.norm);
  Map a = window_attention(normed, p.attn, m);
  Map out = x;
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    out.v[i] = x.v[i] + (a.v[i] + (zbar ? zbar->v[i] : 0.0));
  }
  return out;
}

inline Map graft_forward(const Map& x0, const GraftRef& p) {
  const GraftConfig& cfg = p.cfg;
  const Index b = cfg.scales;
  std::vector<Map> xs(static_cast<std::size_t>(b) + 1);
  xs[0] = x0;
  for (Index i = 1; i <= b; ++i)
    xs[static_cast<std::size_t>(i)] =
        downsample(xs[static_cast<std::size_t>(i - 1)], p.down[static_cast<std::size_t>(i - 1)], cfg);
  auto up_step = [&](const Map& z, Index src_level) {
    const UpRef& u = p.up[static_cast<std::size_t>(src_level - 1)];
    switch (cfg.up) {
      case UpKind::WBilinear: return w_bilinear_up(z, u, cfg);
      case UpKind::Nearest: return nearest(z, cfg.ratio_h, cfg.ratio_w);
      default: return cross_attention(xs[static_cast<std::size_t>(src_level - 1)], z, u.attn);
    }
  };
  Map z = graft_cell(xs[static_cast<std::size_t>(b)], nullptr,
                     p.level[static_cast<std::size_t>(b - 1)], cfg.window);
  for (Index i = b - 1; i >= 1; --i) {
    Map zbar = up_step(z, i + 1);
    z = graft_cell(xs[static_cast<std::size_t>(i)], &zbar, p.level[static_cast<std::size_t>(i - 1)],
                   cfg.window);
  }
  return up_step(z, 1);
}

// ---- backbone composite ----

struct BlockRef {
  NormRef norm1, norm2;
  AttnRef attn;
  LinearRef fc1, fc2;
  std::optional<GraftRef> graft;
  Index shift = 0;
};

struct ModelRef {
  BackboneSpec spec;
  LinearRef patch_proj;
  std::vector<double> pos;
  std::vector<std::vector<BlockRef>> stage;
  std::vector<std::pair<NormRef, LinearRef>> merge;
  NormRef final_norm;
  LinearRef head;
};

template <class S>
ModelRef extract(const ModelParams<S>& m) {
  ModelRef r;
  r.spec = m.spec;
  r.patch_proj = extract(m.patch_proj);
  r.pos = values(m.pos_emb);
  for (const auto& blocks : m.stage) {
    std::vector<BlockRef> bs;
    for (const auto& b : blocks) {
      BlockRef br;
      br.norm1 = extract(b.norm1);
      br.norm2 = extract(b.norm2);
      br.attn = extract(b.attn);
      br.fc1 = extract(b.fc1);
      br.fc2 = extract(b.fc2);
      br.shift = b.shift;
      if (b.graft) br.graft = extract(*b.graft);
      bs.push_back(std::move(br));
    }
    r.stage.push_back(std::move(bs));
  }
  for (const auto& mg : m.merge) r.merge.emplace_back(extract(mg.norm), extract(mg.proj));
  r.final_norm = extract(m.final_norm);
  r.head = extract(m.head);
  return r;
}

inline Map block_forward(const Map& x, const BlockRef& p, Index m) {
  Map normed = x;
  normed.v = apply_norm(x.v, x.h * x.w, x.c, p.norm1);
  Map a = window_attention(normed, p.attn, std::min(m, x.h), p.shift);
  std::optional<Map> zbar;
  if (p.graft && p.graft->cfg.output_scale != 0.0) {
    zbar = graft_forward(x, *p.graft);
    if (p.graft->cfg.output_scale != 1.0)
      for (double& v : zbar->v) v *= p.graft->cfg.output_scale;
  }
  Map y = x;
  for (std::size_t i = 0; i < y.v.size(); ++i)
    y.v[i] = x.v[i] + (a.v[i] + (zbar ? zbar->v[i] : 0.0));
  std::vector<double> f = apply_norm(y.v, y.h * y.w, y.c, p.norm2);
  f = apply_linear(f, y.h * y.w, p.fc1);
  for (double& v : f) v = gelu(v);
  f = apply_linear(f, y.h * y.w, p.fc2);
  Map out = y;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = y.v[i] + f[i];
  return out;
}

inline std::vector<double> model_forward(const std::vector<double>& image, const ModelRef& r) {
  const BackboneSpec& s = r.spec;
  const Index p = s.patch_size, g = s.grid(0);
  std::vector<double> patches(static_cast<std::size_t>(g * g * p * p * 3));
  for (Index a = 0; a < g; ++a)
    for (Index b = 0; b < g; ++b) {
      Index slot = 0;
      for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j)
          for (Index ch = 0; ch < 3; ++ch, ++slot)
            patches[static_cast<std::size_t>((a * g + b) * p * p * 3 + slot)] =
                image[static_cast<std::size_t>(((a * p + i) * s.image_size + (b * p + j)) * 3 + ch)];
    }
  Map x = make_map(g, g, s.channels[0]);
  x.v = apply_linear(patches, g * g, r.patch_proj);
  if (s.kind == BackboneKind::Homogeneous)
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += r.pos[i];
  for (Index st = 0; st < s.stages(); ++st) {
    const Index em = s.eff_window(st);
    for (const BlockRef& b : r.stage[static_cast<std::size_t>(st)]) x = block_forward(x, b, em);
    if (st + 1 < s.stages()) {
      const auto& [norm, proj] = r.merge[static_cast<std::size_t>(st)];
      const Index oh = x.h / 2, ow = x.w / 2;
      std::vector<double> cat(static_cast<std::size_t>(oh * ow * 4 * x.c));
      for (Index a = 0; a < oh; ++a)
        for (Index b = 0; b < ow; ++b) {
          Index slot = 0;
          for (Index i = 0; i < 2; ++i)
            for (Index j = 0; j < 2; ++j)
              for (Index ch = 0; ch < x.c; ++ch, ++slot)
                cat[static_cast<std::size_t>((a * ow + b) * 4 * x.c + slot)] =
                    x.at(2 * a + i, 2 * b + j, ch);
        }
      cat = apply_norm(cat, oh * ow, 4 * x.c, norm);
      Map nx = make_map(oh, ow, 2 * x.c);
      nx.v = apply_linear(cat, oh * ow, proj);
      x = std::move(nx);
    }
  }
  x.v = apply_norm(x.v, x.h * x.w, x.c, r.final_norm);
  std::vector<double> pooled(static_cast<std::size_t>(x.c), 0.0);
  for (Index i = 0; i < x.h; ++i)
    for (Index j = 0; j < x.w; ++j)
      for (Index ch = 0; ch < x.c; ++ch) pooled[static_cast<std::size_t>(ch)] += x.at(i, j, ch);
  for (double& v : pooled) v /= static_cast<double>(x.h * x.w);
  return apply_linear(pooled, 1, r.head);
}

}  // namespace graft::reference
