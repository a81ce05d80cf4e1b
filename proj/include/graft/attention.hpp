#pragma once

#include <cmath>

#include "graft/ops.hpp"

// Window-local multi-head self attention. A feature map [H, W, C] is split
// into non-overlapping M x M windows; attention runs independently per
// window, optionally with a learned relative-position bias shared across
// windows and an additive logit mask (used by the shifted variant).

namespace graft {

struct WindowGrid {
  Index h = 0, w = 0, m = 1;
  Index win_h() const { return h / m; }
  Index win_w() const { return w / m; }
  Index windows() const { return win_h() * win_w(); }
  Index tokens() const { return m * m; }
};

inline WindowGrid make_window_grid(Index h, Index w, Index m) {
  if (m < 1 || h % m != 0 || w % m != 0)
    throw ConfigError("window " + std::to_string(m) + " does not divide feature grid " +
                      std::to_string(h) + "x" + std::to_string(w));
  return WindowGrid{h, w, m};
}

// Row order of window partitioning: windows in row-major grid order, tokens
// in row-major order within each window.
inline std::vector<Index> window_partition_rows(const WindowGrid& g) {
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(g.h * g.w));
  for (Index mh = 0; mh < g.win_h(); ++mh)
    for (Index mw = 0; mw < g.win_w(); ++mw)
      for (Index i = 0; i < g.m; ++i)
        for (Index j = 0; j < g.m; ++j) rows.push_back((mh * g.m + i) * g.w + (mw * g.m + j));
  return rows;
}

inline std::vector<Index> window_reverse_rows(const WindowGrid& g) {
  const std::vector<Index> fwd = window_partition_rows(g);
  std::vector<Index> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i)
    inv[static_cast<std::size_t>(fwd[i])] = static_cast<Index>(i);
  return inv;
}

// [H, W, C] -> [nWin, M*M, C]
template <class S>
Tensor<S> window_partition(const Tensor<S>& x, Index m) {
  if (x.ndim() != 3)
    throw ShapeError("window_partition: expected [H, W, C], got " + shape_str(x.shape()));
  const WindowGrid g = make_window_grid(x.extent(0), x.extent(1), m);
  Tensor<S> rows = gather_rows(x, window_partition_rows(g));
  return reshape(rows, Shape{g.windows(), g.tokens(), x.extent(2)});
}

// [nWin, M*M, C] -> [H, W, C]; exact inverse of window_partition.
template <class S>
Tensor<S> window_reverse(const Tensor<S>& wins, const WindowGrid& g) {
  if (wins.ndim() != 3 || wins.extent(0) != g.windows() || wins.extent(1) != g.tokens())
    throw ShapeError("window_reverse: got " + shape_str(wins.shape()) + " for grid " +
                     std::to_string(g.h) + "x" + std::to_string(g.w) + " m=" +
                     std::to_string(g.m));
  Tensor<S> rows = gather_rows(wins, window_reverse_rows(g));
  return reshape(rows, Shape{g.h, g.w, wins.extent(2)});
}

template <class S>
struct LinearParams {
  Tensor<S> w;  // [in, out]
  Tensor<S> b;  // [out]
};

template <class S>
Tensor<S> linear(const Tensor<S>& x, const LinearParams<S>& p) {
  return add(matmul(x, p.w), p.b);
}

template <class S>
struct LayerNormParams {
  Tensor<S> gamma;
  Tensor<S> beta;
};

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const LayerNormParams<S>& p) {
  return layer_norm(x, p.gamma, p.beta);
}

template <class S>
struct AttentionParams {
  LinearParams<S> q, k, v, o;
  Index heads = 1;
  // [(2M-1)^2, heads] table of relative-position biases; leave undefined to
  // disable (the plain-ViT style backbone runs without it).
  Tensor<S> rel_bias;
};

// Flat lookup indices mapping every (query, key) pair of an M x M window to
// its relative offset row in the bias table.
inline std::vector<Index> relative_bias_index(Index m) {
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(m * m * m * m));
  for (Index qi = 0; qi < m; ++qi)
    for (Index qj = 0; qj < m; ++qj)
      for (Index ki = 0; ki < m; ++ki)
        for (Index kj = 0; kj < m; ++kj)
          idx.push_back((qi - ki + m - 1) * (2 * m - 1) + (qj - kj + m - 1));
  return idx;
}

// Multi-head attention over already-windowed tokens [nWin, T, C].
// bias: [heads, T, T] additive logits or undefined. mask: [nWin, 1, T, T]
// additive logits or undefined.
template <class S>
Tensor<S> attend_tokens(const Tensor<S>& wins, const AttentionParams<S>& p, const Tensor<S>& bias,
                        const Tensor<S>& mask) {
  const Index nw = wins.extent(0), t = wins.extent(1), c = wins.extent(2);
  if (p.heads < 1 || c % p.heads != 0)
    throw ConfigError("attention: heads " + std::to_string(p.heads) +
                      " do not divide channels " + std::to_string(c));
  const Index dh = c / p.heads;
  auto split = [&](const Tensor<S>& tok) {
    return permute(reshape(tok, Shape{nw, t, p.heads, dh}), {0, 2, 1, 3});
  };
  Tensor<S> q = split(linear(wins, p.q));
  Tensor<S> k = split(linear(wins, p.k));
  Tensor<S> v = split(linear(wins, p.v));
  q = scale(q, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
  Tensor<S> logits = matmul(q, permute(k, {0, 1, 3, 2}));  // [nWin, heads, T, T]
  if (bias.defined()) logits = add(logits, reshape(bias, Shape{Index(1), p.heads, t, t}));
  if (mask.defined()) logits = add(logits, mask);
  Tensor<S> attn = softmax(logits);
  Tensor<S> ctx = matmul(attn, v);                           // [nWin, heads, T, dh]
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), Shape{nw, t, c});
  return linear(ctx, p.o);
}

template <class S>
Tensor<S> head_bias(const AttentionParams<S>& p, Index m) {
  if (!p.rel_bias.defined()) return Tensor<S>();
  const Index span = (2 * m - 1) * (2 * m - 1);
  if (p.rel_bias.ndim() != 2 || p.rel_bias.extent(0) != span || p.rel_bias.extent(1) != p.heads)
    throw ShapeError("relative bias table " + shape_str(p.rel_bias.shape()) +
                     " does not match window " + std::to_string(m) + " with " +
                     std::to_string(p.heads) + " heads");
  Tensor<S> rows = gather_rows(p.rel_bias, relative_bias_index(m));  // [T*T, heads]
  return permute(reshape(rows, Shape{m * m, m * m, p.heads}), {2, 0, 1});
}

// Window-local attention on a feature map. No residual, no pre-norm; callers
// compose those.
template <class S>
Tensor<S> l_msa(const Tensor<S>& x, const AttentionParams<S>& p, Index m) {
  const WindowGrid g = make_window_grid(x.extent(0), x.extent(1), m);
  Tensor<S> wins = window_partition(x, m);
  Tensor<S> y = attend_tokens(wins, p, head_bias(p, m), Tensor<S>());
  return window_reverse(y, g);
}

// Global attention as the degenerate single-window case. For square maps it
// is literally l_msa with M = H; non-square maps are handled as one window
// spanning the whole map and require the bias table to be disabled.
template <class S>
Tensor<S> global_msa(const Tensor<S>& x, const AttentionParams<S>& p) {
  if (x.ndim() != 3)
    throw ShapeError("global_msa: expected [H, W, C], got " + shape_str(x.shape()));
  const Index h = x.extent(0), w = x.extent(1), c = x.extent(2);
  if (h == w) return l_msa(x, p, h);
  if (p.rel_bias.defined())
    throw ConfigError("global_msa: relative bias requires a square map, got " +
                      std::to_string(h) + "x" + std::to_string(w));
  Tensor<S> wins = reshape(x, Shape{Index(1), h * w, c});
  Tensor<S> y = attend_tokens(wins, p, Tensor<S>(), Tensor<S>());
  return reshape(y, Shape{h, w, c});
}

namespace detail {
// Cyclic shift indices: out[h][w] = in[(h + dh) mod H][(w + dw) mod W].
inline std::vector<Index> roll_rows(Index h, Index w, Index dh, Index dw) {
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(h * w));
  for (Index i = 0; i < h; ++i)
    for (Index j = 0; j < w; ++j)
      rows.push_back((((i + dh) % h + h) % h) * w + (((j + dw) % w + w) % w));
  return rows;
}
}  // namespace detail

// Additive mask blocking attention between tokens that were not spatial
// neighbours before the cyclic shift. Three index bands per axis give nine
// regions; any pair from different regions gets a large negative logit, so
// its softmax weight underflows to exactly zero.
template <class S>
Tensor<S> shift_attn_mask(const WindowGrid& g, Index shift) {
  std::vector<Index> region(static_cast<std::size_t>(g.h * g.w));
  auto band = [&](Index v, Index n) {
    if (v < n - g.m) return Index(0);
    if (v < n - shift) return Index(1);
    return Index(2);
  };
  for (Index i = 0; i < g.h; ++i)
    for (Index j = 0; j < g.w; ++j)
      region[static_cast<std::size_t>(i * g.w + j)] = band(i, g.h) * 3 + band(j, g.w);
  const std::vector<Index> order = window_partition_rows(g);
  const Index nw = g.windows(), t = g.tokens();
  Tensor<S> mask = Tensor<S>::zeros(Shape{nw, Index(1), t, t});
  S* pm = mask.raw().data();
  for (Index wdx = 0; wdx < nw; ++wdx)
    for (Index a = 0; a < t; ++a)
      for (Index b = 0; b < t; ++b) {
        const Index ra = region[static_cast<std::size_t>(order[static_cast<std::size_t>(wdx * t + a)])];
        const Index rb = region[static_cast<std::size_t>(order[static_cast<std::size_t>(wdx * t + b)])];
        if (ra != rb) pm[(wdx * t + a) * t + b] = S(-1e30);
      }
  return mask;
}

// Shifted-window attention: cyclic shift by `shift`, masked window attention,
// shift back. shift = 0 reduces to l_msa.
template <class S>
Tensor<S> shifted_l_msa(const Tensor<S>& x, const AttentionParams<S>& p, Index m, Index shift) {
  if (shift == 0) return l_msa(x, p, m);
  const WindowGrid g = make_window_grid(x.extent(0), x.extent(1), m);
  if (shift < 0 || shift >= m)
    throw ConfigError("shift " + std::to_string(shift) + " outside window " + std::to_string(m));
  const Index c = x.extent(2);
  Tensor<S> rolled =
      reshape(gather_rows(x, detail::roll_rows(g.h, g.w, shift, shift)), Shape{g.h, g.w, c});
  Tensor<S> wins = window_partition(rolled, m);
  Tensor<S> y = attend_tokens(wins, p, head_bias(p, m), shift_attn_mask<S>(g, shift));
  Tensor<S> back = window_reverse(y, g);
  return reshape(gather_rows(back, detail::roll_rows(g.h, g.w, -shift, -shift)),
                 Shape{g.h, g.w, c});
}

// Cross attention: queries from one map, keys/values from another. Both maps
// share the channel width; output has the query map's spatial extents.
template <class S>
Tensor<S> cross_attention(const Tensor<S>& query_map, const Tensor<S>& kv_map,
                          const AttentionParams<S>& p) {
  if (query_map.ndim() != 3 || kv_map.ndim() != 3 || query_map.extent(2) != kv_map.extent(2))
    throw ShapeError("cross_attention: maps " + shape_str(query_map.shape()) + " and " +
                     shape_str(kv_map.shape()) + " are incompatible");
  const Index c = query_map.extent(2);
  if (p.heads < 1 || c % p.heads != 0)
    throw ConfigError("attention: heads " + std::to_string(p.heads) +
                      " do not divide channels " + std::to_string(c));
  const Index tq = query_map.extent(0) * query_map.extent(1);
  const Index tk = kv_map.extent(0) * kv_map.extent(1);
  const Index dh = c / p.heads;
  auto split = [&](const Tensor<S>& tok, Index t) {
    return permute(reshape(tok, Shape{t, p.heads, dh}), {1, 0, 2});
  };
  Tensor<S> q = split(linear(reshape(query_map, Shape{tq, c}), p.q), tq);
  Tensor<S> k = split(linear(reshape(kv_map, Shape{tk, c}), p.k), tk);
  Tensor<S> v = split(linear(reshape(kv_map, Shape{tk, c}), p.v), tk);
  q = scale(q, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
  Tensor<S> attn = softmax(matmul(q, permute(k, {0, 2, 1})));  // [heads, Tq, Tk]
  Tensor<S> ctx = reshape(permute(matmul(attn, v), {1, 0, 2}), Shape{tq, c});
  return reshape(linear(ctx, p.o), Shape{query_map.extent(0), query_map.extent(1), c});
}

}  // namespace graft
