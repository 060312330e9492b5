#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "echomap/autodiff/tensor.hpp"

// Differentiable operations. Every forward pass ends with a finiteness sweep:
// an overflow or domain error surfaces immediately as an exception instead of
// propagating NaNs through the tape.

namespace echomap::ad {

inline void check_finite(const char* op, std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::runtime_error(std::string(op) + ": non-finite forward value");
}

inline Tensor emit_checked(Graph& g, const char* op, Shape shape, std::vector<double> values,
                           bool requires_grad, std::function<void(Graph&, int)> backprop) {
  check_finite(op, values);
  return g.emit(std::move(shape), std::move(values), requires_grad, std::move(backprop));
}

// ---- elementwise binary (equal shapes, or scalar broadcast on either side) ----

namespace detail {

enum class Bin { Add, Sub, Mul };

inline Tensor binary(const char* name, Bin kind, const Tensor& a, const Tensor& b) {
  Graph& g = a.graph();
  if (&b.graph() != &g) throw std::logic_error(std::string(name) + ": operands from different graphs");
  auto av = a.values(), bv = b.values();
  const bool as = av.size() == 1, bs = bv.size() == 1;
  if (!as && !bs && !same_shape(a.shape(), b.shape()))
    throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const Shape out_shape = bs ? a.shape() : b.shape();
  const std::size_t n = std::max(av.size(), bv.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[as ? 0 : i], y = bv[bs ? 0 : i];
    out[i] = kind == Bin::Add ? x + y : kind == Bin::Sub ? x - y : x * y;
  }
  const bool rg = a.requires_grad() || b.requires_grad();
  const int aid = a.id(), bid = b.id();
  return emit_checked(g, name, out_shape, std::move(out), rg, [=](Graph& gg, int self) {
    auto dy = gg.node(self).grad;
    auto da = gg.grad_buffer(aid), db = gg.grad_buffer(bid);
    auto pa = gg.values(aid), pb = gg.values(bid);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const double go = dy[i];
      if (!da.empty()) {
        const double d = kind == Bin::Mul ? go * pb[bs ? 0 : i] : go;
        da[as ? 0 : i] += d;
      }
      if (!db.empty()) {
        double d;
        if (kind == Bin::Mul) d = go * pa[as ? 0 : i];
        else if (kind == Bin::Sub) d = -go;
        else d = go;
        db[bs ? 0 : i] += d;
      }
    }
  });
}

template <class F, class DF>
Tensor unary(const char* name, const Tensor& x, F f, DF df) {
  Graph& g = x.graph();
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const int xid = x.id();
  return emit_checked(g, name, x.shape(), std::move(out), x.requires_grad(),
                      [xid, df](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        if (dx.empty()) return;
                        auto xs = gg.values(xid);
                        auto ys = gg.values(self);
                        for (std::size_t i = 0; i < dy.size(); ++i)
                          dx[i] += dy[i] * df(xs[i], ys[i]);
                      });
}

// Splits a shape around one axis into [outer, len, inner] extents.
inline void axis_decomp(const Shape& s, int axis, std::size_t& outer, std::size_t& len,
                        std::size_t& inner) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument("axis out of range for shape " + shape_str(s));
  outer = len = inner = 1;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis) outer *= static_cast<std::size_t>(s[i]);
    else if (i == axis) len = static_cast<std::size_t>(s[i]);
    else inner *= static_cast<std::size_t>(s[i]);
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary("add", detail::Bin::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary("sub", detail::Bin::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary("mul", detail::Bin::Mul, a, b); }

inline Tensor scale(const Tensor& x, double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("scale: non-finite factor");
  return detail::unary("scale", x, [c](double v) { return c * v; },
                       [c](double, double) { return c; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary("square", x, [](double v) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary("sqrt", x, [](double v) { return std::sqrt(v); },
                       [](double, double y) { return 0.5 / y; });
}

inline Tensor log1p(const Tensor& x) {
  return detail::unary("log1p", x, [](double v) { return std::log1p(v); },
                       [](double v, double) { return 1.0 / (1.0 + v); });
}

// natural log; inputs must be strictly positive (the finiteness check on the
// forward pass rejects anything else)
inline Tensor vlog(const Tensor& x) {
  return detail::unary("vlog", x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

// max(x, c); gradient passes only through the strictly unclamped region.
inline Tensor clamp_min(const Tensor& x, double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("clamp_min: non-finite bound");
  return detail::unary("clamp_min", x, [c](double v) { return v > c ? v : c; },
                       [c](double v, double) { return v > c ? 1.0 : 0.0; });
}

// ---- linear algebra ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph& g = a.graph();
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw std::invalid_argument("matmul: rank-2 operands required");
  const int M = a.shape()[0], K = a.shape()[1], K2 = b.shape()[0], N = b.shape()[1];
  if (K != K2)
    throw std::invalid_argument("matmul: inner dims differ " + shape_str(a.shape()) + " " +
                                shape_str(b.shape()));
  auto av = a.values(), bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(M) * N, 0.0);
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < K; ++k) {
      const double amk = av[static_cast<std::size_t>(m) * K + k];
      if (amk == 0.0) continue;
      const double* brow = &bv[static_cast<std::size_t>(k) * N];
      double* orow = &out[static_cast<std::size_t>(m) * N];
      for (int n = 0; n < N; ++n) orow[n] += amk * brow[n];
    }
  const int aid = a.id(), bid = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return emit_checked(g, "matmul", {M, N}, std::move(out), rg, [=](Graph& gg, int self) {
    auto dy = gg.node(self).grad;
    auto da = gg.grad_buffer(aid), db = gg.grad_buffer(bid);
    auto pa = gg.values(aid), pb = gg.values(bid);
    if (!da.empty())
      for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) {
          const double go = dy[static_cast<std::size_t>(m) * N + n];
          if (go == 0.0) continue;
          for (int k = 0; k < K; ++k)
            da[static_cast<std::size_t>(m) * K + k] += go * pb[static_cast<std::size_t>(k) * N + n];
        }
    if (!db.empty())
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
          const double amk = pa[static_cast<std::size_t>(m) * K + k];
          if (amk == 0.0) continue;
          const double* grow = &dy[static_cast<std::size_t>(m) * N];
          double* brow = &db[static_cast<std::size_t>(k) * N];
          for (int n = 0; n < N; ++n) brow[n] += amk * grow[n];
        }
  });
}

// matmul whose inner sums accumulate products in value order, so the result
// does not depend on how the K axis is arranged. Used where an input axis
// enumerates order-free sets (attention over tokens).
inline Tensor matmul_sorted(const Tensor& a, const Tensor& b) {
  Graph& g = a.graph();
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw std::invalid_argument("matmul_sorted: rank-2 operands required");
  const int M = a.shape()[0], K = a.shape()[1], K2 = b.shape()[0], N = b.shape()[1];
  if (K != K2)
    throw std::invalid_argument("matmul_sorted: inner dims differ " + shape_str(a.shape()) +
                                " " + shape_str(b.shape()));
  auto av = a.values(), bv = b.values();
  std::vector<double> out(static_cast<std::size_t>(M) * N);
  std::vector<double> prods(static_cast<std::size_t>(K));
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) {
      for (int k = 0; k < K; ++k)
        prods[static_cast<std::size_t>(k)] =
            av[static_cast<std::size_t>(m) * K + k] * bv[static_cast<std::size_t>(k) * N + n];
      std::sort(prods.begin(), prods.end());
      double s = 0.0;
      for (double v : prods) s += v;
      out[static_cast<std::size_t>(m) * N + n] = s;
    }
  const int aid = a.id(), bid = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return emit_checked(g, "matmul_sorted", {M, N}, std::move(out), rg, [=](Graph& gg, int self) {
    auto dy = gg.node(self).grad;
    auto da = gg.grad_buffer(aid), db = gg.grad_buffer(bid);
    auto pa = gg.values(aid), pb = gg.values(bid);
    if (!da.empty())
      for (int m = 0; m < M; ++m)
        for (int n = 0; n < N; ++n) {
          const double go = dy[static_cast<std::size_t>(m) * N + n];
          if (go == 0.0) continue;
          for (int k = 0; k < K; ++k)
            da[static_cast<std::size_t>(m) * K + k] += go * pb[static_cast<std::size_t>(k) * N + n];
        }
    if (!db.empty())
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
          const double amk = pa[static_cast<std::size_t>(m) * K + k];
          if (amk == 0.0) continue;
          const double* grow = &dy[static_cast<std::size_t>(m) * N];
          double* brow = &db[static_cast<std::size_t>(k) * N];
          for (int n = 0; n < N; ++n) brow[n] += amk * grow[n];
        }
  });
}

inline Tensor transpose2d(const Tensor& x) {
  if (x.shape().size() != 2) throw std::invalid_argument("transpose2d: rank-2 required");
  const int M = x.shape()[0], N = x.shape()[1];
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n) out[static_cast<std::size_t>(n) * M + m] = xv[static_cast<std::size_t>(m) * N + n];
  const int xid = x.id();
  return emit_checked(x.graph(), "transpose2d", {N, M}, std::move(out), x.requires_grad(),
                      [xid, M, N](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        if (dx.empty()) return;
                        for (int n = 0; n < N; ++n)
                          for (int m = 0; m < M; ++m)
                            dx[static_cast<std::size_t>(m) * N + n] += dy[static_cast<std::size_t>(n) * M + m];
                      });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.values().size())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) +
                                " -> " + shape_str(shape));
  auto xv = x.values();
  const int xid = x.id();
  return x.graph().emit(std::move(shape), std::vector<double>(xv.begin(), xv.end()),
                        x.requires_grad(), [xid](Graph& gg, int self) {
                          auto dy = gg.node(self).grad;
                          auto dx = gg.grad_buffer(xid);
                          if (dx.empty()) return;
                          for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                        });
}

// ---- convolutions (channels-first, single item: [C,H,W]) ----

namespace detail {
inline void conv_check(const char* name, const Tensor& x, const Tensor& w, int sh, int sw, int ph,
                       int pw) {
  if (x.shape().size() != 3 || w.shape().size() != 4)
    throw std::invalid_argument(std::string(name) + ": expected x[C,H,W], w rank-4");
  if (sh < 1 || sw < 1 || ph < 0 || pw < 0)
    throw std::invalid_argument(std::string(name) + ": bad stride/padding");
}
}  // namespace detail

// x: [Cin,H,W], w: [Cout,Cin,kh,kw] -> [Cout,Ho,Wo]
inline Tensor conv2d(const Tensor& x, const Tensor& w, int sh, int sw, int ph, int pw) {
  detail::conv_check("conv2d", x, w, sh, sw, ph, pw);
  const int Cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int Cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != Cin)
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x.shape()) + " " +
                                shape_str(w.shape()));
  if (H + 2 * ph < kh || W + 2 * pw < kw) throw std::invalid_argument("conv2d: kernel exceeds padded input");
  const int Ho = (H + 2 * ph - kh) / sh + 1;
  const int Wo = (W + 2 * pw - kw) / sw + 1;
  auto xv = x.values(), wv = w.values();
  std::vector<double> out(static_cast<std::size_t>(Cout) * Ho * Wo, 0.0);
  for (int co = 0; co < Cout; ++co)
    for (int ho = 0; ho < Ho; ++ho)
      for (int wo = 0; wo < Wo; ++wo) {
        double acc = 0.0;
        for (int ci = 0; ci < Cin; ++ci)
          for (int u = 0; u < kh; ++u) {
            const int ih = ho * sh - ph + u;
            if (ih < 0 || ih >= H) continue;
            for (int v = 0; v < kw; ++v) {
              const int iw = wo * sw - pw + v;
              if (iw < 0 || iw >= W) continue;
              acc += xv[(static_cast<std::size_t>(ci) * H + ih) * W + iw] *
                     wv[((static_cast<std::size_t>(co) * Cin + ci) * kh + u) * kw + v];
            }
          }
        out[(static_cast<std::size_t>(co) * Ho + ho) * Wo + wo] = acc;
      }
  const int xid = x.id(), wid = w.id();
  const bool rg = x.requires_grad() || w.requires_grad();
  return emit_checked(x.graph(), "conv2d", {Cout, Ho, Wo}, std::move(out), rg,
                      [=](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        auto dw = gg.grad_buffer(wid);
                        auto px = gg.values(xid);
                        auto pw2 = gg.values(wid);
                        for (int co = 0; co < Cout; ++co)
                          for (int ho = 0; ho < Ho; ++ho)
                            for (int wo = 0; wo < Wo; ++wo) {
                              const double go = dy[(static_cast<std::size_t>(co) * Ho + ho) * Wo + wo];
                              if (go == 0.0) continue;
                              for (int ci = 0; ci < Cin; ++ci)
                                for (int u = 0; u < kh; ++u) {
                                  const int ih = ho * sh - ph + u;
                                  if (ih < 0 || ih >= H) continue;
                                  for (int v = 0; v < kw; ++v) {
                                    const int iw = wo * sw - pw + v;
                                    if (iw < 0 || iw >= W) continue;
                                    const std::size_t xi = (static_cast<std::size_t>(ci) * H + ih) * W + iw;
                                    const std::size_t wi =
                                        ((static_cast<std::size_t>(co) * Cin + ci) * kh + u) * kw + v;
                                    if (!dx.empty()) dx[xi] += go * pw2[wi];
                                    if (!dw.empty()) dw[wi] += go * px[xi];
                                  }
                                }
                            }
                      });
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  return conv2d(x, w, stride, stride, pad, pad);
}

// x: [Cin,H,W], w: [Cin,Cout,kh,kw] -> [Cout,(H-1)*sh-2ph+kh,(W-1)*sw-2pw+kw]
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int sh, int sw, int ph, int pw) {
  detail::conv_check("conv_transpose2d", x, w, sh, sw, ph, pw);
  const int Cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int Cout = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[0] != Cin)
    throw std::invalid_argument("conv_transpose2d: channel mismatch " + shape_str(x.shape()) +
                                " " + shape_str(w.shape()));
  const int Ho = (H - 1) * sh - 2 * ph + kh;
  const int Wo = (W - 1) * sw - 2 * pw + kw;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv_transpose2d: empty output");
  auto xv = x.values(), wv = w.values();
  std::vector<double> out(static_cast<std::size_t>(Cout) * Ho * Wo, 0.0);
  for (int ci = 0; ci < Cin; ++ci)
    for (int h = 0; h < H; ++h)
      for (int wd = 0; wd < W; ++wd) {
        const double xi = xv[(static_cast<std::size_t>(ci) * H + h) * W + wd];
        if (xi == 0.0) continue;
        for (int co = 0; co < Cout; ++co)
          for (int u = 0; u < kh; ++u) {
            const int oh = h * sh - ph + u;
            if (oh < 0 || oh >= Ho) continue;
            for (int v = 0; v < kw; ++v) {
              const int ow = wd * sw - pw + v;
              if (ow < 0 || ow >= Wo) continue;
              out[(static_cast<std::size_t>(co) * Ho + oh) * Wo + ow] +=
                  xi * wv[((static_cast<std::size_t>(ci) * Cout + co) * kh + u) * kw + v];
            }
          }
      }
  const int xid = x.id(), wid = w.id();
  const bool rg = x.requires_grad() || w.requires_grad();
  return emit_checked(x.graph(), "conv_transpose2d", {Cout, Ho, Wo}, std::move(out), rg,
                      [=](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        auto dw = gg.grad_buffer(wid);
                        auto px = gg.values(xid);
                        auto pw2 = gg.values(wid);
                        for (int ci = 0; ci < Cin; ++ci)
                          for (int h = 0; h < H; ++h)
                            for (int wd = 0; wd < W; ++wd) {
                              const std::size_t xoff = (static_cast<std::size_t>(ci) * H + h) * W + wd;
                              const double xval = px[xoff];
                              double xacc = 0.0;
                              for (int co = 0; co < Cout; ++co)
                                for (int u = 0; u < kh; ++u) {
                                  const int oh = h * sh - ph + u;
                                  if (oh < 0 || oh >= Ho) continue;
                                  for (int v = 0; v < kw; ++v) {
                                    const int ow = wd * sw - pw + v;
                                    if (ow < 0 || ow >= Wo) continue;
                                    const double go =
                                        dy[(static_cast<std::size_t>(co) * Ho + oh) * Wo + ow];
                                    const std::size_t wi =
                                        ((static_cast<std::size_t>(ci) * Cout + co) * kh + u) * kw + v;
                                    xacc += go * pw2[wi];
                                    if (!dw.empty()) dw[wi] += go * xval;
                                  }
                                }
                              if (!dx.empty()) dx[xoff] += xacc;
                            }
                      });
}

inline Tensor conv_transpose2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  return conv_transpose2d(x, w, stride, stride, pad, pad);
}

// ---- bias / assembly helpers ----

inline Tensor bias_rows(const Tensor& x, const Tensor& b) {
  if (x.shape().size() != 2 || b.shape().size() != 1 || b.shape()[0] != x.shape()[1])
    throw std::invalid_argument("bias_rows: want x[N,D], b[D]");
  const int N = x.shape()[0], D = x.shape()[1];
  auto xv = x.values(), bv = b.values();
  std::vector<double> out(xv.size());
  for (int n = 0; n < N; ++n)
    for (int d = 0; d < D; ++d)
      out[static_cast<std::size_t>(n) * D + d] = xv[static_cast<std::size_t>(n) * D + d] + bv[d];
  const int xid = x.id(), bid = b.id();
  const bool rg = x.requires_grad() || b.requires_grad();
  return emit_checked(x.graph(), "bias_rows", x.shape(), std::move(out), rg,
                      [=](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        auto db = gg.grad_buffer(bid);
                        for (int n = 0; n < N; ++n)
                          for (int d = 0; d < D; ++d) {
                            const double go = dy[static_cast<std::size_t>(n) * D + d];
                            if (!dx.empty()) dx[static_cast<std::size_t>(n) * D + d] += go;
                            if (!db.empty()) db[d] += go;
                          }
                      });
}

inline Tensor bias_channels(const Tensor& x, const Tensor& b) {
  if (x.shape().size() != 3 || b.shape().size() != 1 || b.shape()[0] != x.shape()[0])
    throw std::invalid_argument("bias_channels: want x[C,H,W], b[C]");
  const int C = x.shape()[0];
  const std::size_t hw = static_cast<std::size_t>(x.shape()[1]) * x.shape()[2];
  auto xv = x.values(), bv = b.values();
  std::vector<double> out(xv.size());
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = xv[c * hw + i] + bv[c];
  const int xid = x.id(), bid = b.id();
  const bool rg = x.requires_grad() || b.requires_grad();
  return emit_checked(x.graph(), "bias_channels", x.shape(), std::move(out), rg,
                      [=](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        auto db = gg.grad_buffer(bid);
                        for (int c = 0; c < C; ++c)
                          for (std::size_t i = 0; i < hw; ++i) {
                            const double go = dy[c * hw + i];
                            if (!dx.empty()) dx[c * hw + i] += go;
                            if (!db.empty()) db[c] += go;
                          }
                      });
}

// Concatenation along axis 0; trailing dimensions must agree.
inline Tensor concat_first(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_first: no inputs");
  Graph& g = parts[0].graph();
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t inner = 1;
  for (int d : tail) inner *= static_cast<std::size_t>(d);
  int total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    Shape pt(p.shape().begin() + 1, p.shape().end());
    if (pt != tail)
      throw std::invalid_argument("concat_first: trailing dims differ: " + shape_str(p.shape()));
    total += p.shape()[0];
    rg = rg || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total) * inner);
  std::vector<int> ids;
  std::vector<std::size_t> sizes;
  for (const Tensor& p : parts) {
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(p.id());
    sizes.push_back(v.size());
  }
  Shape out_shape;
  out_shape.push_back(total);
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  return emit_checked(g, "concat_first", std::move(out_shape), std::move(out), rg,
                      [ids, sizes](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        std::size_t off = 0;
                        for (std::size_t p = 0; p < ids.size(); ++p) {
                          auto dx = gg.grad_buffer(ids[p]);
                          if (!dx.empty())
                            for (std::size_t i = 0; i < sizes[p]; ++i) dx[i] += dy[off + i];
                          off += sizes[p];
                        }
                      });
}

// Column-wise concatenation of rank-2 tensors sharing a row count.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Graph& g = parts[0].graph();
  const int N = parts[0].shape()[0];
  int D = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != N)
      throw std::invalid_argument("concat_cols: want rank-2 with equal rows");
    D += p.shape()[1];
    rg = rg || p.requires_grad();
  }
  std::vector<double> out(static_cast<std::size_t>(N) * D);
  std::vector<int> ids;
  std::vector<int> widths;
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.shape()[1];
    auto v = p.values();
    for (int n = 0; n < N; ++n)
      for (int d = 0; d < w; ++d)
        out[static_cast<std::size_t>(n) * D + off + d] = v[static_cast<std::size_t>(n) * w + d];
    ids.push_back(p.id());
    widths.push_back(w);
    off += w;
  }
  return emit_checked(g, "concat_cols", {N, D}, std::move(out), rg,
                      [ids, widths, N, D](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        int off = 0;
                        for (std::size_t p = 0; p < ids.size(); ++p) {
                          const int w = widths[p];
                          auto dx = gg.grad_buffer(ids[p]);
                          if (!dx.empty())
                            for (int n = 0; n < N; ++n)
                              for (int d = 0; d < w; ++d)
                                dx[static_cast<std::size_t>(n) * w + d] +=
                                    dy[static_cast<std::size_t>(n) * D + off + d];
                          off += w;
                        }
                      });
}

inline Tensor slice_first(const Tensor& x, int start, int len) {
  if (x.shape().empty()) throw std::invalid_argument("slice_first: scalar input");
  const int N = x.shape()[0];
  if (start < 0 || len <= 0 || start + len > N)
    throw std::invalid_argument("slice_first: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of " + std::to_string(N));
  std::size_t inner = 1;
  for (std::size_t i = 1; i < x.shape().size(); ++i) inner *= static_cast<std::size_t>(x.shape()[i]);
  auto xv = x.values();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(start * inner),
                          xv.begin() + static_cast<std::ptrdiff_t>((start + len) * inner));
  Shape out_shape = x.shape();
  out_shape[0] = len;
  const int xid = x.id();
  return x.graph().emit(std::move(out_shape), std::move(out), x.requires_grad(),
                        [xid, start, inner](Graph& gg, int self) {
                          auto dy = gg.node(self).grad;
                          auto dx = gg.grad_buffer(xid);
                          if (dx.empty()) return;
                          const std::size_t off = static_cast<std::size_t>(start) * inner;
                          for (std::size_t i = 0; i < dy.size(); ++i) dx[off + i] += dy[i];
                        });
}

// ---- normalization / attention pieces ----

inline Tensor softmax(const Tensor& x) {
  if (x.shape().empty()) throw std::invalid_argument("softmax: scalar input");
  const std::size_t L = static_cast<std::size_t>(x.shape().back());
  auto xv = x.values();
  const std::size_t rows = xv.size() / L;
  std::vector<double> out(xv.size());
  std::vector<double> sorted(L);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = &xv[r * L];
    double* yo = &out[r * L];
    double mx = xi[0];
    for (std::size_t i = 1; i < L; ++i) mx = std::max(mx, xi[i]);
    for (std::size_t i = 0; i < L; ++i) yo[i] = std::exp(xi[i] - mx);
    // summing in value order makes the result independent of how the
    // entries along the axis happen to be arranged
    std::copy(yo, yo + L, sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    double s = 0.0;
    for (double v : sorted) s += v;
    for (std::size_t i = 0; i < L; ++i) yo[i] /= s;
  }
  const int xid = x.id();
  return emit_checked(x.graph(), "softmax", x.shape(), std::move(out), x.requires_grad(),
                      [xid, L](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        if (dx.empty()) return;
                        auto y = gg.values(self);
                        const std::size_t rows = dy.size() / L;
                        for (std::size_t r = 0; r < rows; ++r) {
                          double dot = 0.0;
                          for (std::size_t i = 0; i < L; ++i) dot += dy[r * L + i] * y[r * L + i];
                          for (std::size_t i = 0; i < L; ++i)
                            dx[r * L + i] += y[r * L + i] * (dy[r * L + i] - dot);
                        }
                      });
}

// Normalizes over the last axis; gamma/beta have that axis's extent.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  if (x.shape().empty()) throw std::invalid_argument("layer_norm: scalar input");
  const int D = x.shape().back();
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D})
    throw std::invalid_argument("layer_norm: gamma/beta must be [" + std::to_string(D) + "]");
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();
  const std::size_t L = static_cast<std::size_t>(D);
  const std::size_t rows = xv.size() / L;
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xi = &xv[r * L];
    double mu = 0.0;
    for (std::size_t i = 0; i < L; ++i) mu += xi[i];
    mu /= static_cast<double>(L);
    double var = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      const double d = xi[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(L);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t i = 0; i < L; ++i) {
      const double h = (xi[i] - mu) * rs;
      xhat[r * L + i] = h;
      out[r * L + i] = gv[i] * h + bv[i];
    }
  }
  const int xid = x.id(), gid = gamma.id(), bid = beta.id();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return emit_checked(
      x.graph(), "layer_norm", x.shape(), std::move(out), rg,
      [xid, gid, bid, L, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& gg, int self) {
        auto dy = gg.node(self).grad;
        auto dx = gg.grad_buffer(xid);
        auto dg = gg.grad_buffer(gid);
        auto db = gg.grad_buffer(bid);
        auto gv = gg.values(gid);
        const std::size_t rows = dy.size() / L;
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t i = 0; i < L; ++i) {
            const double go = dy[r * L + i];
            const double h = xhat[r * L + i];
            if (!dg.empty()) dg[i] += go * h;
            if (!db.empty()) db[i] += go;
            const double dh = go * gv[i];
            sum_dh += dh;
            sum_dh_h += dh * h;
          }
          if (!dx.empty()) {
            const double inv_l = 1.0 / static_cast<double>(L);
            for (std::size_t i = 0; i < L; ++i) {
              const double dh = dy[r * L + i] * gv[i];
              dx[r * L + i] +=
                  rstd[r] * (dh - inv_l * sum_dh - xhat[r * L + i] * inv_l * sum_dh_h);
            }
          }
        }
      });
}

// ---- reductions ----

enum class Reduce { Sum, Mean, Max };

inline Tensor reduce(const Tensor& x, int axis, Reduce kind) {
  std::size_t outer, len, inner;
  detail::axis_decomp(x.shape(), axis, outer, len, inner);
  Shape out_shape;
  for (int i = 0; i < static_cast<int>(x.shape().size()); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape = {1};
  auto xv = x.values();
  std::vector<double> out(outer * inner, 0.0);
  std::vector<int> winner;
  if (kind == Reduce::Max) winner.assign(outer * inner, 0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t oi = o * inner + i;
      if (kind == Reduce::Max) {
        double best = xv[(o * len) * inner + i];
        int bi = 0;
        for (std::size_t j = 1; j < len; ++j) {
          const double v = xv[(o * len + j) * inner + i];
          if (v > best) {
            best = v;
            bi = static_cast<int>(j);
          }
        }
        out[oi] = best;
        winner[oi] = bi;
      } else {
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j) s += xv[(o * len + j) * inner + i];
        out[oi] = kind == Reduce::Mean ? s / static_cast<double>(len) : s;
      }
    }
  const int xid = x.id();
  return emit_checked(x.graph(), "reduce", std::move(out_shape), std::move(out), x.requires_grad(),
                      [xid, outer, len, inner, kind, winner = std::move(winner)](Graph& gg,
                                                                                  int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        if (dx.empty()) return;
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < inner; ++i) {
                            const double go = dy[o * inner + i];
                            if (kind == Reduce::Max) {
                              dx[(o * len + static_cast<std::size_t>(winner[o * inner + i])) * inner + i] += go;
                            } else {
                              const double d =
                                  kind == Reduce::Mean ? go / static_cast<double>(len) : go;
                              for (std::size_t j = 0; j < len; ++j) dx[(o * len + j) * inner + i] += d;
                            }
                          }
                      });
}

inline Tensor reduce_all(const Tensor& x, Reduce kind) {
  auto xv = x.values();
  const std::size_t n = xv.size();
  double v;
  std::vector<int> winner;
  if (kind == Reduce::Max) {
    double best = xv[0];
    int bi = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (xv[i] > best) {
        best = xv[i];
        bi = static_cast<int>(i);
      }
    v = best;
    winner = {bi};
  } else {
    double s = 0.0;
    for (double e : xv) s += e;
    v = kind == Reduce::Mean ? s / static_cast<double>(n) : s;
  }
  const int xid = x.id();
  return emit_checked(x.graph(), "reduce_all", {1}, {v}, x.requires_grad(),
                      [xid, n, kind, winner = std::move(winner)](Graph& gg, int self) {
                        const double go = gg.node(self).grad[0];
                        auto dx = gg.grad_buffer(xid);
                        if (dx.empty()) return;
                        if (kind == Reduce::Max) {
                          dx[static_cast<std::size_t>(winner[0])] += go;
                        } else {
                          const double d = kind == Reduce::Mean ? go / static_cast<double>(n) : go;
                          for (std::size_t i = 0; i < n; ++i) dx[i] += d;
                        }
                      });
}

// Suffix sums along the last axis: y[..,i] = sum_{j>=i} x[..,j].
inline Tensor reverse_cumsum(const Tensor& x) {
  if (x.shape().empty()) throw std::invalid_argument("reverse_cumsum: scalar input");
  const std::size_t L = static_cast<std::size_t>(x.shape().back());
  auto xv = x.values();
  const std::size_t rows = xv.size() / L;
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = L; i-- > 0;) {
      acc += xv[r * L + i];
      out[r * L + i] = acc;
    }
  }
  const int xid = x.id();
  return emit_checked(x.graph(), "reverse_cumsum", x.shape(), std::move(out), x.requires_grad(),
                      [xid, L](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(xid);
                        if (dx.empty()) return;
                        const std::size_t rows = dy.size() / L;
                        for (std::size_t r = 0; r < rows; ++r) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < L; ++i) {
                            acc += dy[r * L + i];
                            dx[r * L + i] += acc;
                          }
                        }
                      });
}

// Scatters row k of src into output row cell[k], keeping the per-column max.
// cell[k] == -1 drops the contribution. Unwritten cells stay exactly zero; a
// written cell holds the max over its contributions even when negative. Ties
// route the gradient to the earliest contributing row.
inline Tensor scatter_max(const Tensor& src, const std::vector<long long>& cell, int n_cells) {
  if (src.shape().size() != 2) throw std::invalid_argument("scatter_max: want src[K,D]");
  const int K = src.shape()[0], D = src.shape()[1];
  if (static_cast<int>(cell.size()) != K)
    throw std::invalid_argument("scatter_max: cell index count != K");
  if (n_cells <= 0) throw std::invalid_argument("scatter_max: n_cells must be positive");
  for (long long c : cell)
    if (c < -1 || c >= n_cells) throw std::invalid_argument("scatter_max: cell index out of range");
  auto sv = src.values();
  std::vector<double> out(static_cast<std::size_t>(n_cells) * D, 0.0);
  std::vector<int> winner(static_cast<std::size_t>(n_cells) * D, -1);
  for (int k = 0; k < K; ++k) {
    const long long c = cell[k];
    if (c < 0) continue;
    for (int d = 0; d < D; ++d) {
      const std::size_t oi = static_cast<std::size_t>(c) * D + d;
      const double v = sv[static_cast<std::size_t>(k) * D + d];
      if (winner[oi] < 0 || v > out[oi]) {
        out[oi] = v;
        winner[oi] = k;
      }
    }
  }
  const int sid = src.id();
  return emit_checked(src.graph(), "scatter_max", {n_cells, D}, std::move(out),
                      src.requires_grad(),
                      [sid, D, winner = std::move(winner)](Graph& gg, int self) {
                        auto dy = gg.node(self).grad;
                        auto dx = gg.grad_buffer(sid);
                        if (dx.empty()) return;
                        for (std::size_t oi = 0; oi < dy.size(); ++oi) {
                          const int k = winner[oi];
                          if (k < 0) continue;
                          dx[static_cast<std::size_t>(k) * D + (oi % static_cast<std::size_t>(D))] += dy[oi];
                        }
                      });
}

// Mean absolute error over the unmasked entries:
//   sum(|pred - target| * mask) / sum(mask), or 0 when the mask is empty.
inline Tensor l1_masked(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (!same_shape(pred.shape(), target.shape()) || !same_shape(pred.shape(), mask.shape()))
    throw std::invalid_argument("l1_masked: shapes differ");
  auto pv = pred.values(), tv = target.values(), mv = mask.values();
  double denom = 0.0, num = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    denom += mv[i];
    num += std::abs(pv[i] - tv[i]) * mv[i];
  }
  const double y = denom > 0.0 ? num / denom : 0.0;
  const int pid = pred.id(), tid = target.id(), mid = mask.id();
  const bool rg = pred.requires_grad() || target.requires_grad() || mask.requires_grad();
  return emit_checked(pred.graph(), "l1_masked", {1}, {y}, rg, [=](Graph& gg, int self) {
    if (denom <= 0.0) return;
    const double go = gg.node(self).grad[0];
    auto dp = gg.grad_buffer(pid);
    auto dt = gg.grad_buffer(tid);
    auto dm = gg.grad_buffer(mid);
    auto pv2 = gg.values(pid);
    auto tv2 = gg.values(tid);
    auto mv2 = gg.values(mid);
    const double yv = gg.node(self).values[0];
    for (std::size_t i = 0; i < pv2.size(); ++i) {
      const double e = pv2[i] - tv2[i];
      const double s = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
      const double d = go * s * mv2[i] / denom;
      if (!dp.empty()) dp[i] += d;
      if (!dt.empty()) dt[i] -= d;
      if (!dm.empty()) dm[i] += go * (std::abs(e) - yv) / denom;
    }
  });
}

}  // namespace echomap::ad
