#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "graft/tensor.hpp"

// Differentiable tensor primitives. Free functions; each computes its value
// eagerly and, if a Tape is active and an input requires grad, records a
// closure that accumulates adjoints. All loops run in fixed row-major order
// so that repeated runs are bit-identical, including reductions.

namespace graft {

namespace detail {

template <class S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class S>
inline bool track(std::initializer_list<const Tensor<S>*> ins) {
  if (!Tape<S>::recording()) return false;
  for (const Tensor<S>* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    const Index ea = i < a.size() ? a[a.size() - 1 - i] : 1;
    const Index eb = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    out[nd - 1 - i] = std::max(ea, eb);
  }
  return out;
}

// Element strides of `s` right-aligned into `out`, 0 on broadcast axes.
inline std::vector<Index> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<Index> st(out.size(), 0);
  Index stride = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t si = s.size() - 1 - i;
    const std::size_t oi = out.size() - 1 - i;
    st[oi] = (s[si] == 1 && out[oi] != 1) ? 0 : stride;
    stride *= s[si];
  }
  return st;
}

// Odometer walk over `out` in row-major order, tracking offsets into two
// broadcast operands. fn(i, offA, offB) is called once per output element.
template <class Fn>
void for_each_bcast(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb,
                    Fn&& fn) {
  const Index total = shape_numel(out);
  const Index nd = static_cast<Index>(out.size());
  std::vector<Index> coord(static_cast<std::size_t>(nd), 0);
  Index offa = 0, offb = 0;
  for (Index i = 0; i < total; ++i) {
    fn(i, offa, offb);
    for (Index d = nd - 1; d >= 0; --d) {
      ++coord[static_cast<std::size_t>(d)];
      offa += sa[static_cast<std::size_t>(d)];
      offb += sb[static_cast<std::size_t>(d)];
      if (coord[static_cast<std::size_t>(d)] < out[static_cast<std::size_t>(d)]) break;
      offa -= sa[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
      offb -= sb[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
      coord[static_cast<std::size_t>(d)] = 0;
    }
  }
}

template <class S, class FwdFn, class BwdFn>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, const char* name, FwdFn fwd,
                    BwdFn bwd) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), name);
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  Tensor<S> out = Tensor<S>::zeros(os);
  {
    const S* pa = a.value().data();
    const S* pb = b.value().data();
    S* po = out.raw().data();
    for_each_bcast(os, sa, sb, [&](Index i, Index ia, Index ib) { po[i] = fwd(pa[ia], pb[ib]); });
  }
  if (track<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tensor<S> ac = a, bc = b, oc = out;
    Tape<S>::record([ac, bc, oc, os, sa, sb, bwd]() mutable {
      const auto& go = oc.grad();
      const S* pa = ac.value().data();
      const S* pb = bc.value().data();
      S* ga = ac.requires_grad() ? ac.grad().data() : nullptr;
      S* gb = bc.requires_grad() ? bc.grad().data() : nullptr;
      for_each_bcast(os, sa, sb, [&](Index i, Index ia, Index ib) {
        S da, db;
        bwd(pa[ia], pb[ib], go[static_cast<std::size_t>(i)], da, db);
        if (ga) ga[ia] += da;
        if (gb) gb[ib] += db;
      });
    });
  }
  return out;
}

template <class S, class FwdFn, class DerFn>
Tensor<S> unary_op(const Tensor<S>& x, FwdFn fwd, DerFn der) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* px = x.value().data();
  S* po = out.raw().data();
  const Index n = x.numel();
  for (Index i = 0; i < n; ++i) po[i] = fwd(px[i]);
  if (track<S>({&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    Tape<S>::record([xc, oc, der]() mutable {
      const auto& go = oc.grad();
      const S* px = xc.value().data();
      const S* py = oc.value().data();
      S* gx = xc.grad().data();
      const Index n = xc.numel();
      for (Index i = 0; i < n; ++i) gx[i] += go[static_cast<std::size_t>(i)] * der(px[i], py[i]);
    });
  }
  return out;
}

}  // namespace detail

// ---- elementwise ----

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, "add", [](S x, S y) { return x + y; },
      [](S, S, S g, S& da, S& db) {
        da = g;
        db = g;
      });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, "sub", [](S x, S y) { return x - y; },
      [](S, S, S g, S& da, S& db) {
        da = g;
        db = -g;
      });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op(
      a, b, "mul", [](S x, S y) { return x * y; },
      [](S x, S y, S g, S& da, S& db) {
        da = g * y;
        db = g * x;
      });
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return detail::unary_op(
      x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
  return add(a, b);
}
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
  return sub(a, b);
}
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
  return mul(a, b);
}
template <class S>
Tensor<S> operator*(S c, const Tensor<S>& x) {
  return scale(x, c);
}

// Exact Gaussian-CDF form: x * Phi(x), no tanh shortcut. Evaluated in double
// for both scalar widths; erfc keeps the tail accurate where 1 + erf(x) would
// cancel.
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  auto phi = [](double v) { return 0.5 * std::erfc(-v * 0.70710678118654752440); };
  return detail::unary_op(
      x, [phi](S v) { return static_cast<S>(static_cast<double>(v) * phi(v)); },
      [phi](S v, S) {
        const double d = static_cast<double>(v);
        const double pdf = 0.39894228040143267794 * std::exp(-0.5 * d * d);
        return static_cast<S>(phi(d) + d * pdf);
      });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  auto sig = [](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  };
  return detail::unary_op(
      x, [sig](S v) { return static_cast<S>(sig(static_cast<double>(v))); },
      [](S, S y) { return y * (S(1) - y); });
}

// ---- matmul ----

// Batched matrix product with broadcasting over leading axes. The last two
// axes multiply as [m, k] x [k, n]; batch slices run through Eigen one at a
// time in row-major batch order.
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() < 2 || b.ndim() < 2)
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const Index m = as[as.size() - 2], k = as[as.size() - 1];
  const Index k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
  if (k != k2)
    throw ShapeError("matmul: inner extents differ: " + shape_str(as) + " x " + shape_str(bs));
  const Shape abatch(as.begin(), as.end() - 2);
  const Shape bbatch(bs.begin(), bs.end() - 2);
  const Shape obatch = detail::broadcast_shape(abatch, bbatch, "matmul");
  // Batch strides in units of one [rows, cols] slice.
  const auto sa = detail::broadcast_strides(abatch, obatch);
  const auto sb = detail::broadcast_strides(bbatch, obatch);
  Shape os = obatch;
  os.push_back(m);
  os.push_back(n);
  Tensor<S> out = Tensor<S>::zeros(os);
  {
    const S* pa = a.value().data();
    const S* pb = b.value().data();
    S* po = out.raw().data();
    detail::for_each_bcast(obatch, sa, sb, [&](Index i, Index ia, Index ib) {
      detail::CMatMap<S> A(pa + ia * m * k, m, k);
      detail::CMatMap<S> B(pb + ib * k * n, k, n);
      detail::MatMap<S> C(po + i * m * n, m, n);
      C.noalias() = A * B;
    });
  }
  if (detail::track<S>({&a, &b})) {
    out.set_requires_grad(true);
    Tensor<S> ac = a, bc = b, oc = out;
    Tape<S>::record([ac, bc, oc, obatch, sa, sb, m, k, n]() mutable {
      const S* pa = ac.value().data();
      const S* pb = bc.value().data();
      const S* pg = oc.grad().data();
      S* ga = ac.requires_grad() ? ac.grad().data() : nullptr;
      S* gb = bc.requires_grad() ? bc.grad().data() : nullptr;
      detail::for_each_bcast(obatch, sa, sb, [&](Index i, Index ia, Index ib) {
        detail::CMatMap<S> A(pa + ia * m * k, m, k);
        detail::CMatMap<S> B(pb + ib * k * n, k, n);
        detail::CMatMap<S> G(pg + i * m * n, m, n);
        if (ga) {
          detail::MatMap<S> GA(ga + ia * m * k, m, k);
          GA.noalias() += G * B.transpose();
        }
        if (gb) {
          detail::MatMap<S> GB(gb + ib * k * n, k, n);
          GB.noalias() += A.transpose() * G;
        }
      });
    });
  }
  return out;
}

// ---- normalization and softmax ----

// Normalizes over the last axis. gamma/beta have that axis's extent.
// Reductions are plain sequential sums; mean and variance use the two-pass
// form.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
  if (x.ndim() < 1) throw ShapeError("layer_norm: rank-0 input");
  const Index c = x.extent(x.ndim() - 1);
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("layer_norm: scale/shift " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match channel extent " +
                     std::to_string(c));
  const Index rows = x.numel() / c;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  {
    const S* px = x.value().data();
    const S* pg = gamma.value().data();
    const S* pb = beta.value().data();
    S* po = out.raw().data();
    for (Index r = 0; r < rows; ++r) {
      const S* xr = px + r * c;
      S* yr = po + r * c;
      S mu = S(0);
      for (Index i = 0; i < c; ++i) mu += xr[i];
      mu /= static_cast<S>(c);
      S var = S(0);
      for (Index i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
      var /= static_cast<S>(c);
      const S inv = S(1) / std::sqrt(var + eps);
      for (Index i = 0; i < c; ++i) yr[i] = pg[i] * ((xr[i] - mu) * inv) + pb[i];
    }
  }
  if (detail::track<S>({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, gc = gamma, bc = beta, oc = out;
    Tape<S>::record([xc, gc, bc, oc, rows, c, eps]() mutable {
      const S* px = xc.value().data();
      const S* pg = gc.value().data();
      const S* pgo = oc.grad().data();
      S* gx = xc.requires_grad() ? xc.grad().data() : nullptr;
      S* gg = gc.requires_grad() ? gc.grad().data() : nullptr;
      S* gb = bc.requires_grad() ? bc.grad().data() : nullptr;
      std::vector<S> xhat(static_cast<std::size_t>(c));
      for (Index r = 0; r < rows; ++r) {
        const S* xr = px + r * c;
        const S* gor = pgo + r * c;
        S mu = S(0);
        for (Index i = 0; i < c; ++i) mu += xr[i];
        mu /= static_cast<S>(c);
        S var = S(0);
        for (Index i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<S>(c);
        const S inv = S(1) / std::sqrt(var + eps);
        for (Index i = 0; i < c; ++i) xhat[static_cast<std::size_t>(i)] = (xr[i] - mu) * inv;
        if (gg)
          for (Index i = 0; i < c; ++i) gg[i] += gor[i] * xhat[static_cast<std::size_t>(i)];
        if (gb)
          for (Index i = 0; i < c; ++i) gb[i] += gor[i];
        if (gx) {
          S s1 = S(0), s2 = S(0);
          for (Index i = 0; i < c; ++i) {
            const S gh = gor[i] * pg[i];
            s1 += gh;
            s2 += gh * xhat[static_cast<std::size_t>(i)];
          }
          for (Index i = 0; i < c; ++i) {
            const S gh = gor[i] * pg[i];
            gx[r * c + i] += inv * (gh - s1 / static_cast<S>(c) -
                                    xhat[static_cast<std::size_t>(i)] * s2 / static_cast<S>(c));
          }
        }
      }
    });
  }
  return out;
}

// Softmax over the last axis, max-subtracted for stability.
template <class S>
Tensor<S> softmax(const Tensor<S>& x) {
  if (x.ndim() < 1) throw ShapeError("softmax: rank-0 input");
  const Index c = x.extent(x.ndim() - 1);
  const Index rows = x.numel() / c;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  {
    const S* px = x.value().data();
    S* po = out.raw().data();
    for (Index r = 0; r < rows; ++r) {
      const S* xr = px + r * c;
      S* yr = po + r * c;
      S mx = xr[0];
      for (Index i = 1; i < c; ++i) mx = std::max(mx, xr[i]);
      S sum = S(0);
      for (Index i = 0; i < c; ++i) {
        yr[i] = std::exp(xr[i] - mx);
        sum += yr[i];
      }
      const S inv = S(1) / sum;
      for (Index i = 0; i < c; ++i) yr[i] *= inv;
    }
  }
  if (detail::track<S>({&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    Tape<S>::record([xc, oc, rows, c]() mutable {
      const S* py = oc.value().data();
      const S* pgo = oc.grad().data();
      S* gx = xc.grad().data();
      for (Index r = 0; r < rows; ++r) {
        const S* yr = py + r * c;
        const S* gor = pgo + r * c;
        S dot = S(0);
        for (Index i = 0; i < c; ++i) dot += gor[i] * yr[i];
        for (Index i = 0; i < c; ++i) gx[r * c + i] += yr[i] * (gor[i] - dot);
      }
    });
  }
  return out;
}

// ---- pooling ----

// Mean over equal blocks of a [H, W, C] map. Output extents must divide the
// input extents; anything else is a configuration error here.
template <class S>
Tensor<S> adaptive_avg_pool(const Tensor<S>& x, Index oh, Index ow) {
  if (x.ndim() != 3)
    throw ShapeError("adaptive_avg_pool: expected [H, W, C], got " + shape_str(x.shape()));
  const Index h = x.extent(0), w = x.extent(1), c = x.extent(2);
  if (oh < 1 || ow < 1 || h % oh != 0 || w % ow != 0)
    throw ConfigError("adaptive_avg_pool: output " + std::to_string(oh) + "x" +
                      std::to_string(ow) + " does not divide input " + std::to_string(h) + "x" +
                      std::to_string(w));
  const Index kh = h / oh, kw = w / ow;
  const S inv = S(1) / static_cast<S>(kh * kw);
  Tensor<S> out = Tensor<S>::zeros(Shape{oh, ow, c});
  {
    const S* px = x.value().data();
    S* po = out.raw().data();
    for (Index a = 0; a < oh; ++a)
      for (Index b = 0; b < ow; ++b)
        for (Index ch = 0; ch < c; ++ch) {
          S sum = S(0);
          for (Index i = 0; i < kh; ++i)
            for (Index j = 0; j < kw; ++j) sum += px[((a * kh + i) * w + b * kw + j) * c + ch];
          po[(a * ow + b) * c + ch] = sum * inv;
        }
  }
  if (detail::track<S>({&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    Tape<S>::record([xc, oc, oh, ow, kh, kw, w, c, inv]() mutable {
      const S* pgo = oc.grad().data();
      S* gx = xc.grad().data();
      for (Index a = 0; a < oh; ++a)
        for (Index b = 0; b < ow; ++b)
          for (Index ch = 0; ch < c; ++ch) {
            const S g = pgo[(a * ow + b) * c + ch] * inv;
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) gx[((a * kh + i) * w + b * kw + j) * c + ch] += g;
          }
    });
  }
  return out;
}

// ---- data movement ----

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  Tensor<S> out = Tensor<S>::from_data(std::move(shape), x.value());
  if (detail::track<S>({&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    Tape<S>::record([xc, oc]() mutable {
      const auto& go = oc.grad();
      S* gx = xc.grad().data();
      const Index n = xc.numel();
      for (Index i = 0; i < n; ++i) gx[i] += go[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

namespace detail {
template <class S>
void permute_copy(const S* src, S* dst, const Shape& in, const std::vector<Index>& axes,
                  bool inverse) {
  const Index nd = static_cast<Index>(in.size());
  std::vector<Index> istr(static_cast<std::size_t>(nd), 1);
  for (Index d = nd - 2; d >= 0; --d)
    istr[static_cast<std::size_t>(d)] =
        istr[static_cast<std::size_t>(d + 1)] * in[static_cast<std::size_t>(d + 1)];
  Shape os(static_cast<std::size_t>(nd));
  std::vector<Index> sstr(static_cast<std::size_t>(nd));
  for (Index d = 0; d < nd; ++d) {
    os[static_cast<std::size_t>(d)] = in[static_cast<std::size_t>(axes[static_cast<std::size_t>(d)])];
    sstr[static_cast<std::size_t>(d)] = istr[static_cast<std::size_t>(axes[static_cast<std::size_t>(d)])];
  }
  const Index total = shape_numel(in);
  std::vector<Index> coord(static_cast<std::size_t>(nd), 0);
  Index soff = 0;
  for (Index i = 0; i < total; ++i) {
    if (inverse)
      dst[soff] += src[i];
    else
      dst[i] = src[soff];
    for (Index d = nd - 1; d >= 0; --d) {
      ++coord[static_cast<std::size_t>(d)];
      soff += sstr[static_cast<std::size_t>(d)];
      if (coord[static_cast<std::size_t>(d)] < os[static_cast<std::size_t>(d)]) break;
      soff -= sstr[static_cast<std::size_t>(d)] * os[static_cast<std::size_t>(d)];
      coord[static_cast<std::size_t>(d)] = 0;
    }
  }
}
}  // namespace detail

template <class S>
Tensor<S> permute(const Tensor<S>& x, std::vector<Index> axes) {
  const Index nd = x.ndim();
  if (static_cast<Index>(axes.size()) != nd)
    throw ShapeError("permute: got " + std::to_string(axes.size()) + " axes for rank " +
                     std::to_string(nd));
  std::vector<bool> seen(static_cast<std::size_t>(nd), false);
  Shape os(static_cast<std::size_t>(nd));
  for (Index d = 0; d < nd; ++d) {
    const Index a = axes[static_cast<std::size_t>(d)];
    if (a < 0 || a >= nd || seen[static_cast<std::size_t>(a)])
      throw ShapeError("permute: invalid axis list");
    seen[static_cast<std::size_t>(a)] = true;
    os[static_cast<std::size_t>(d)] = x.extent(a);
  }
  Tensor<S> out = Tensor<S>::zeros(os);
  detail::permute_copy(x.value().data(), out.raw().data(), x.shape(), axes, false);
  if (detail::track<S>({&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    Shape in = x.shape();
    Tape<S>::record([xc, oc, in, axes]() mutable {
      detail::permute_copy(oc.grad().data(), xc.grad().data(), in, axes, true);
    });
  }
  return out;
}

// Views x as [R, L] with L the last-axis extent and copies the listed rows.
// Duplicate row indices are allowed; backward scatter-adds sequentially.
template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<Index> rows) {
  if (x.ndim() < 1) throw ShapeError("gather_rows: rank-0 input");
  const Index len = x.extent(x.ndim() - 1);
  const Index r = x.numel() / len;
  for (Index idx : rows)
    if (idx < 0 || idx >= r)
      throw ShapeError("gather_rows: row " + std::to_string(idx) + " out of range [0, " +
                       std::to_string(r) + ")");
  const Index nr = static_cast<Index>(rows.size());
  Tensor<S> out = Tensor<S>::zeros(Shape{nr, len});
  {
    const S* px = x.value().data();
    S* po = out.raw().data();
    for (Index i = 0; i < nr; ++i)
      std::copy_n(px + rows[static_cast<std::size_t>(i)] * len, len, po + i * len);
  }
  if (detail::track<S>({&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    Tape<S>::record([xc, oc, rows = std::move(rows), len]() mutable {
      const S* pgo = oc.grad().data();
      S* gx = xc.grad().data();
      const Index nr = static_cast<Index>(rows.size());
      for (Index i = 0; i < nr; ++i) {
        S* dst = gx + rows[static_cast<std::size_t>(i)] * len;
        const S* src = pgo + i * len;
        for (Index j = 0; j < len; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// ---- reductions and loss ----

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.value()) acc += v;
  Tensor<S> out = Tensor<S>::scalar(acc);
  if (detail::track<S>({&x})) {
    out.set_requires_grad(true);
    Tensor<S> xc = x, oc = out;
    Tape<S>::record([xc, oc]() mutable {
      const S g = oc.grad()[0];
      S* gx = xc.grad().data();
      const Index n = xc.numel();
      for (Index i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
  return scale(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

// Cross entropy of a single logit vector against an integer class label,
// computed via a stable log-sum-exp.
template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, Index target) {
  if (logits.ndim() != 1)
    throw ShapeError("cross_entropy: expected rank-1 logits, got " + shape_str(logits.shape()));
  const Index k = logits.extent(0);
  if (target < 0 || target >= k)
    throw UsageError("cross_entropy: label " + std::to_string(target) + " outside [0, " +
                     std::to_string(k) + ")");
  const S* px = logits.value().data();
  S mx = px[0];
  for (Index i = 1; i < k; ++i) mx = std::max(mx, px[i]);
  S sum = S(0);
  for (Index i = 0; i < k; ++i) sum += std::exp(px[i] - mx);
  Tensor<S> out = Tensor<S>::scalar(mx + std::log(sum) - px[target]);
  if (detail::track<S>({&logits})) {
    out.set_requires_grad(true);
    Tensor<S> xc = logits, oc = out;
    Tape<S>::record([xc, oc, target, k, mx, sum]() mutable {
      const S g = oc.grad()[0];
      const S* px = xc.value().data();
      S* gx = xc.grad().data();
      for (Index i = 0; i < k; ++i) {
        const S p = std::exp(px[i] - mx) / sum;
        gx[i] += g * (p - (i == target ? S(1) : S(0)));
      }
    });
  }
  return out;
}

template <class S>
Index argmax(const Tensor<S>& logits) {
  const auto& v = logits.value();
  Index best = 0;
  for (Index i = 1; i < static_cast<Index>(v.size()); ++i)
    if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
  return best;
}

}  // namespace graft
