// SPDX-License-Identifier: Apache-2.0
#include "dgae/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace dgae::ag {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
void require_rank(const Var<T>& v, int rank, const char* op) {
  if (v.value().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(v.shape()));
}

/// Elementwise unary op with derivative computed from the input value.
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const int aid = a.id;
  return a.tape->record(std::move(out), {a}, [aid, df](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& x = tp.value(aid);
    Tensor<T>& ga = tp.grad(aid);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * df(x[i]);
  });
}

template <typename T>
void im2col(const T* x, std::int64_t n_batch, std::int64_t ch, std::int64_t h, std::int64_t w, int k,
            int stride, int pad, std::int64_t ho, std::int64_t wo, T* col) {
  const std::int64_t cols = n_batch * ho * wo;
  for (std::int64_t c = 0; c < ch; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        T* row = col + ((c * k + kh) * k + kw) * cols;
        for (std::int64_t n = 0; n < n_batch; ++n) {
          const T* xs = x + (n * ch + c) * h * w;
          for (std::int64_t oh = 0; oh < ho; ++oh) {
            T* dst = row + (n * ho + oh) * wo;
            const std::int64_t ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= h) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T* src = xs + ih * w;
            for (std::int64_t ow = 0; ow < wo; ++ow) {
              const std::int64_t iw = ow * stride - pad + kw;
              dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
            }
          }
        }
      }
}

template <typename T>
void col2im(const T* col, std::int64_t n_batch, std::int64_t ch, std::int64_t h, std::int64_t w, int k,
            int stride, int pad, std::int64_t ho, std::int64_t wo, T* x) {
  const std::int64_t cols = n_batch * ho * wo;
  for (std::int64_t c = 0; c < ch; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        const T* row = col + ((c * k + kh) * k + kw) * cols;
        for (std::int64_t n = 0; n < n_batch; ++n) {
          T* xs = x + (n * ch + c) * h * w;
          for (std::int64_t oh = 0; oh < ho; ++oh) {
            const std::int64_t ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= h) continue;
            const T* src = row + (n * ho + oh) * wo;
            T* dst = xs + ih * w;
            for (std::int64_t ow = 0; ow < wo; ++ow) {
              const std::int64_t iw = ow * stride - pad + kw;
              if (iw >= 0 && iw < w) dst[iw] += src[ow];
            }
          }
        }
      }
}

template <typename T>
Tensor<T> scalar_tensor(double v) {
  return Tensor<T>(Shape{1}, static_cast<T>(v));
}

}  // namespace

// Elementwise ---------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const int aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {a, b}, [aid, bid](Tape<T>& tp, const Tensor<T>& g) {
    for (int id : {aid, bid}) {
      if (!tp.requires_grad(id)) continue;
      Tensor<T>& gi = tp.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const int aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {a, b}, [aid, bid](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(aid)) {
      Tensor<T>& ga = tp.grad(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(bid)) {
      Tensor<T>& gb = tp.grad(bid);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const int aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {a, b}, [aid, bid](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& x = tp.value(aid);
    const Tensor<T>& y = tp.value(bid);
    if (tp.requires_grad(aid)) {
      Tensor<T>& ga = tp.grad(aid);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (tp.requires_grad(bid)) {
      Tensor<T>& gb = tp.grad(bid);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return unary(a, [s](T x) { return s * x; }, [s](T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T) { return T(1); });
}

template <typename T>
Var<T> silu(Var<T> a) {
  return unary(
      a, [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T x) {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
  return unary(
      a, [slope](T x) { return x > T(0) ? x : slope * x; },
      [slope](T x) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary(
      a, [](T x) { return std::tanh(x); },
      [](T x) {
        const T y = std::tanh(x);
        return T(1) - y * y;
      });
}

template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  return unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> mul_per_sample(Var<T> x, std::span<const T> s) {
  const Tensor<T>& xv = x.value();
  const std::int64_t n = xv.dim(0);
  if (static_cast<std::int64_t>(s.size()) != n) throw ShapeError("mul_per_sample: scale length mismatch");
  const std::size_t per = xv.size() / static_cast<std::size_t>(n);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * s[i / per];
  std::vector<T> sc(s.begin(), s.end());
  const int xid = x.id;
  return x.tape->record(std::move(out), {x}, [xid, sc, per](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& gx = tp.grad(xid);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sc[i / per];
  });
}

template <typename T>
Var<T> reparameterize(Var<T> mu, Var<T> logvar, const Tensor<T>& noise) {
  require_same_shape(mu.shape(), logvar.shape(), "reparameterize");
  require_same_shape(mu.shape(), noise.shape(), "reparameterize(noise)");
  const Tensor<T>& m = mu.value();
  const Tensor<T>& lv = logvar.value();
  Tensor<T> out(m.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] + std::exp(T(0.5) * lv[i]) * noise[i];
  const int mid = mu.id, lid = logvar.id;
  return mu.tape->record(std::move(out), {mu, logvar}, [mid, lid, noise](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(mid)) {
      Tensor<T>& gm = tp.grad(mid);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    }
    if (tp.requires_grad(lid)) {
      const Tensor<T>& lvv = tp.value(lid);
      Tensor<T>& gl = tp.grad(lid);
      for (std::size_t i = 0; i < g.size(); ++i)
        gl[i] += g[i] * T(0.5) * std::exp(T(0.5) * lvv[i]) * noise[i];
    }
  });
}

// Structural ----------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  const int aid = a.id;
  return a.tape->record(std::move(out), {a}, [aid](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& ga = tp.grad(aid);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
  const std::int64_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
  Tensor<T> out(Shape{n, ca + cb, sa[2], sa[3]});
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(bv.data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
  }
  const int aid = a.id, bid = b.id;
  return a.tape->record(std::move(out), {a, b}, [=](Tape<T>& tp, const Tensor<T>& g) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (tp.requires_grad(aid)) {
        T* ga = tp.grad(aid).data() + i * ca * hw;
        const T* src = g.data() + i * (ca + cb) * hw;
        for (std::int64_t j = 0; j < ca * hw; ++j) ga[j] += src[j];
      }
      if (tp.requires_grad(bid)) {
        T* gb = tp.grad(bid).data() + i * cb * hw;
        const T* src = g.data() + (i * (ca + cb) + ca) * hw;
        for (std::int64_t j = 0; j < cb * hw; ++j) gb[j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> a, std::int64_t start, std::int64_t count) {
  require_rank(a, 4, "slice_channels");
  const Shape& s = a.shape();
  if (start < 0 || count < 0 || start + count > s[1]) throw ShapeError("slice_channels: range out of bounds");
  const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  Tensor<T> out(Shape{n, count, s[2], s[3]});
  const Tensor<T>& av = a.value();
  for (std::int64_t i = 0; i < n; ++i)
    std::copy_n(av.data() + (i * c + start) * hw, count * hw, out.data() + i * count * hw);
  const int aid = a.id;
  return a.tape->record(std::move(out), {a}, [=](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& ga = tp.grad(aid);
    for (std::int64_t i = 0; i < n; ++i) {
      T* dst = ga.data() + (i * c + start) * hw;
      const T* src = g.data() + i * count * hw;
      for (std::int64_t j = 0; j < count * hw; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, std::int64_t factor) {
  require_rank(x, 4, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const Shape& s = x.shape();
  const std::int64_t nc = s[0] * s[1], h = s[2], w = s[3], ho = h * factor, wo = w * factor;
  Tensor<T> out(Shape{s[0], s[1], ho, wo});
  const Tensor<T>& xv = x.value();
  for (std::int64_t p = 0; p < nc; ++p)
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j)
        out[static_cast<std::size_t>((p * ho + i) * wo + j)] =
            xv[static_cast<std::size_t>((p * h + i / factor) * w + j / factor)];
  const int xid = x.id;
  return x.tape->record(std::move(out), {x}, [=](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& gx = tp.grad(xid);
    for (std::int64_t p = 0; p < nc; ++p)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j)
          gx[static_cast<std::size_t>((p * h + i / factor) * w + j / factor)] +=
              g[static_cast<std::size_t>((p * ho + i) * wo + j)];
  });
}

template <typename T>
Var<T> add_channel_vector(Var<T> x, Var<T> e) {
  require_rank(x, 4, "add_channel_vector");
  const Shape& s = x.shape();
  if (e.shape() != Shape{s[0], s[1]})
    throw ShapeError("add_channel_vector: " + shape_str(e.shape()) + " vs " + shape_str(s));
  const std::int64_t nc = s[0] * s[1], hw = s[2] * s[3];
  const Tensor<T>& xv = x.value();
  const Tensor<T>& ev = e.value();
  Tensor<T> out(s);
  for (std::int64_t p = 0; p < nc; ++p)
    for (std::int64_t j = 0; j < hw; ++j) out[p * hw + j] = xv[p * hw + j] + ev[p];
  const int xid = x.id, eid = e.id;
  return x.tape->record(std::move(out), {x, e}, [=](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(xid)) {
      Tensor<T>& gx = tp.grad(xid);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.requires_grad(eid)) {
      Tensor<T>& ge = tp.grad(eid);
      for (std::int64_t p = 0; p < nc; ++p) {
        double acc = 0;
        for (std::int64_t j = 0; j < hw; ++j) acc += g[p * hw + j];
        ge[p] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Var<T> mean_spatial(Var<T> x) {
  require_rank(x, 4, "mean_spatial");
  const Shape& s = x.shape();
  const std::int64_t nc = s[0] * s[1], hw = s[2] * s[3];
  const Tensor<T>& xv = x.value();
  Tensor<T> out(Shape{s[0], s[1]});
  for (std::int64_t p = 0; p < nc; ++p) {
    double acc = 0;
    for (std::int64_t j = 0; j < hw; ++j) acc += xv[p * hw + j];
    out[p] = static_cast<T>(acc / static_cast<double>(hw));
  }
  const int xid = x.id;
  return x.tape->record(std::move(out), {x}, [=](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& gx = tp.grad(xid);
    const T inv = T(1) / static_cast<T>(hw);
    for (std::int64_t p = 0; p < nc; ++p)
      for (std::int64_t j = 0; j < hw; ++j) gx[p * hw + j] += g[p] * inv;
  });
}

// Layers --------------------------------------------------------------------

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  require_rank(x, 4, "conv2d(input)");
  require_rank(w, 4, "conv2d(weight)");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::int64_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const std::int64_t cout = ws[0];
  const int k = static_cast<int>(ws[2]);
  if (ws[1] != cin || ws[3] != k)
    throw ShapeError("conv2d: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  if (b.valid() && b.shape() != Shape{cout}) throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
  const std::int64_t ho = (h + 2 * pad - k) / stride + 1;
  const std::int64_t wo = (wd + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input " + shape_str(xs) + " too small for kernel");
  const std::int64_t rows = cin * k * k, cols = n * ho * wo, plane = ho * wo;

  std::vector<T> col(static_cast<std::size_t>(rows * cols));
  im2col(x.value().data(), n, cin, h, wd, k, stride, pad, ho, wo, col.data());
  MatR<T> y = CMapR<T>(w.value().data(), cout, rows) * CMapR<T>(col.data(), rows, cols);
  Tensor<T> out(Shape{n, cout, ho, wo});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t co = 0; co < cout; ++co) {
      const T bias = b.valid() ? b.value()[static_cast<std::size_t>(co)] : T(0);
      T* dst = out.data() + (i * cout + co) * plane;
      const T* src = y.data() + co * cols + i * plane;
      for (std::int64_t p = 0; p < plane; ++p) dst[p] = src[p] + bias;
    }

  const int xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1;
  std::initializer_list<Var<T>> parents = {x, w, b};
  return x.tape->record(std::move(out), parents, [=](Tape<T>& tp, const Tensor<T>& g) {
    MatR<T> dy(cout, cols);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t co = 0; co < cout; ++co)
        std::copy_n(g.data() + (i * cout + co) * plane, plane, dy.data() + co * cols + i * plane);
    if (bid >= 0 && tp.requires_grad(bid)) {
      Tensor<T>& gb = tp.grad(bid);
      for (std::int64_t co = 0; co < cout; ++co) gb[static_cast<std::size_t>(co)] += dy.row(co).sum();
    }
    const bool need_w = tp.requires_grad(wid);
    const bool need_x = tp.requires_grad(xid);
    if (!need_w && !need_x) return;
    std::vector<T> colb(static_cast<std::size_t>(rows * cols));
    if (need_w) {
      im2col(tp.value(xid).data(), n, cin, h, wd, k, stride, pad, ho, wo, colb.data());
      MapR<T>(tp.grad(wid).data(), cout, rows).noalias() += dy * CMapR<T>(colb.data(), rows, cols).transpose();
    }
    if (need_x) {
      MapR<T>(colb.data(), rows, cols).noalias() = CMapR<T>(tp.value(wid).data(), cout, rows).transpose() * dy;
      col2im(colb.data(), n, cin, h, wd, k, stride, pad, ho, wo, tp.grad(xid).data());
    }
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  require_rank(x, 2, "linear(input)");
  require_rank(w, 2, "linear(weight)");
  const std::int64_t n = x.dim(0), in = x.dim(1), outd = w.dim(0);
  if (w.dim(1) != in) throw ShapeError("linear: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  if (b.valid() && b.shape() != Shape{outd}) throw ShapeError("linear: bias shape " + shape_str(b.shape()));
  Tensor<T> out(Shape{n, outd});
  MapR<T> y(out.data(), n, outd);
  y.noalias() = CMapR<T>(x.value().data(), n, in) * CMapR<T>(w.value().data(), outd, in).transpose();
  if (b.valid())
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t o = 0; o < outd; ++o) y(i, o) += b.value()[static_cast<std::size_t>(o)];
  const int xid = x.id, wid = w.id, bid = b.valid() ? b.id : -1;
  std::initializer_list<Var<T>> parents = {x, w, b};
  return x.tape->record(std::move(out), parents, [=](Tape<T>& tp, const Tensor<T>& g) {
    CMapR<T> dy(g.data(), n, outd);
    if (tp.requires_grad(xid))
      MapR<T>(tp.grad(xid).data(), n, in).noalias() += dy * CMapR<T>(tp.value(wid).data(), outd, in);
    if (tp.requires_grad(wid))
      MapR<T>(tp.grad(wid).data(), outd, in).noalias() += dy.transpose() * CMapR<T>(tp.value(xid).data(), n, in);
    if (bid >= 0 && tp.requires_grad(bid)) {
      Tensor<T>& gb = tp.grad(bid);
      for (std::int64_t o = 0; o < outd; ++o) gb[static_cast<std::size_t>(o)] += dy.col(o).sum();
    }
  });
}

template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps) {
  require_rank(x, 4, "group_norm");
  const Shape& s = x.shape();
  const std::int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  if (groups < 1 || c % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) throw ShapeError("group_norm: affine shape mismatch");
  const std::int64_t cpg = c / groups, m = cpg * hw;
  const Tensor<T>& xv = x.value();
  Tensor<T> xhat(s);
  std::vector<T> rstd(static_cast<std::size_t>(n * groups));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const std::int64_t base = (i * c + gi * cpg) * hw;
      double sum = 0, sq = 0;
      for (std::int64_t j = 0; j < m; ++j) sum += xv[base + j];
      const double mu = sum / static_cast<double>(m);
      for (std::int64_t j = 0; j < m; ++j) {
        const double d = xv[base + j] - mu;
        sq += d * d;
      }
      const double r = 1.0 / std::sqrt(sq / static_cast<double>(m) + static_cast<double>(eps));
      rstd[i * groups + gi] = static_cast<T>(r);
      for (std::int64_t j = 0; j < m; ++j) xhat[base + j] = static_cast<T>((xv[base + j] - mu) * r);
    }
  Tensor<T> out(s);
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (i * c + ch) * hw;
      for (std::int64_t j = 0; j < hw; ++j) out[base + j] = xhat[base + j] * gv[ch] + bv[ch];
    }
  const int xid = x.id, gid = gamma.id, bid = beta.id;
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [=, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(gid) || tp.requires_grad(bid)) {
      std::vector<double> dg(static_cast<std::size_t>(c), 0.0), db(static_cast<std::size_t>(c), 0.0);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t base = (i * c + ch) * hw;
          for (std::int64_t j = 0; j < hw; ++j) {
            dg[ch] += static_cast<double>(g[base + j]) * xhat[base + j];
            db[ch] += g[base + j];
          }
        }
      if (tp.requires_grad(gid)) {
        Tensor<T>& gg = tp.grad(gid);
        for (std::int64_t ch = 0; ch < c; ++ch) gg[ch] += static_cast<T>(dg[ch]);
      }
      if (tp.requires_grad(bid)) {
        Tensor<T>& gb = tp.grad(bid);
        for (std::int64_t ch = 0; ch < c; ++ch) gb[ch] += static_cast<T>(db[ch]);
      }
    }
    if (!tp.requires_grad(xid)) return;
    const Tensor<T>& gv2 = tp.value(gid);
    Tensor<T>& gx = tp.grad(xid);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t gi = 0; gi < groups; ++gi) {
        double s1 = 0, s2 = 0;
        for (std::int64_t cc = 0; cc < cpg; ++cc) {
          const std::int64_t ch = gi * cpg + cc;
          const std::int64_t base = (i * c + ch) * hw;
          for (std::int64_t j = 0; j < hw; ++j) {
            const double dxh = static_cast<double>(g[base + j]) * gv2[ch];
            s1 += dxh;
            s2 += dxh * xhat[base + j];
          }
        }
        const double r = rstd[i * groups + gi];
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::int64_t cc = 0; cc < cpg; ++cc) {
          const std::int64_t ch = gi * cpg + cc;
          const std::int64_t base = (i * c + ch) * hw;
          for (std::int64_t j = 0; j < hw; ++j) {
            const double dxh = static_cast<double>(g[base + j]) * gv2[ch];
            gx[base + j] += static_cast<T>(r * (dxh - inv_m * s1 - xhat[base + j] * inv_m * s2));
          }
        }
      }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  require_rank(x, 2, "layer_norm");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) throw ShapeError("layer_norm: affine shape mismatch");
  // Same math as a single-group group norm over a [N, D, 1, 1] view.
  Var<T> as4 = reshape(x, Shape{n, d, 1, 1});
  Var<T> y = group_norm(as4, gamma, beta, 1, eps);
  return reshape(y, Shape{n, d});
}

template <typename T>
Var<T> normalize_spatial(Var<T> x, T eps) {
  require_rank(x, 4, "normalize_spatial");
  const Shape& s = x.shape();
  const std::int64_t nc = s[0] * s[1], hw = s[2] * s[3];
  const Tensor<T>& xv = x.value();
  Tensor<T> out(s);
  std::vector<T> norms(static_cast<std::size_t>(nc));
  for (std::int64_t p = 0; p < nc; ++p) {
    double sq = 0;
    for (std::int64_t j = 0; j < hw; ++j) sq += static_cast<double>(xv[p * hw + j]) * xv[p * hw + j];
    const double nrm = std::sqrt(sq + static_cast<double>(eps));
    norms[p] = static_cast<T>(nrm);
    for (std::int64_t j = 0; j < hw; ++j) out[p * hw + j] = static_cast<T>(xv[p * hw + j] / nrm);
  }
  const int xid = x.id;
  return x.tape->record(std::move(out), {x}, [=, norms = std::move(norms)](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& xv2 = tp.value(xid);
    Tensor<T>& gx = tp.grad(xid);
    for (std::int64_t p = 0; p < nc; ++p) {
      const double nrm = norms[p];
      double dot = 0;
      for (std::int64_t j = 0; j < hw; ++j) dot += static_cast<double>(g[p * hw + j]) * xv2[p * hw + j];
      const double k3 = dot / (nrm * nrm * nrm);
      for (std::int64_t j = 0; j < hw; ++j)
        gx[p * hw + j] += static_cast<T>(g[p * hw + j] / nrm - xv2[p * hw + j] * k3);
    }
  });
}

// Reductions ----------------------------------------------------------------

template <typename T>
Var<T> mean(Var<T> a) {
  const Tensor<T>& av = a.value();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
  const std::size_t cnt = av.size();
  const int aid = a.id;
  return a.tape->record(scalar_tensor<T>(acc / static_cast<double>(cnt)), {a},
                        [aid, cnt](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& ga = tp.grad(aid);
    const T gv = g[0] / static_cast<T>(cnt);
    for (std::size_t i = 0; i < cnt; ++i) ga[i] += gv;
  });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  const std::size_t cnt = av.size();
  const int aid = a.id, bid = b.id;
  return a.tape->record(scalar_tensor<T>(acc / static_cast<double>(cnt)), {a, b},
                        [aid, bid, cnt](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& x = tp.value(aid);
    const Tensor<T>& y = tp.value(bid);
    const T k = T(2) * g[0] / static_cast<T>(cnt);
    if (tp.requires_grad(aid)) {
      Tensor<T>& ga = tp.grad(aid);
      for (std::size_t i = 0; i < cnt; ++i) ga[i] += k * (x[i] - y[i]);
    }
    if (tp.requires_grad(bid)) {
      Tensor<T>& gb = tp.grad(bid);
      for (std::size_t i = 0; i < cnt; ++i) gb[i] -= k * (x[i] - y[i]);
    }
  });
}

template <typename T>
Var<T> weighted_mse_per_sample(Var<T> a, Var<T> b, std::span<const T> w) {
  require_same_shape(a.shape(), b.shape(), "weighted_mse_per_sample");
  const std::int64_t n = a.dim(0);
  if (static_cast<std::int64_t>(w.size()) != n) throw ShapeError("weighted_mse_per_sample: weight length mismatch");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const std::size_t per = av.size() / static_cast<std::size_t>(n);
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < per; ++j) {
      const double d = static_cast<double>(av[i * per + j]) - bv[i * per + j];
      acc += d * d;
    }
    total += static_cast<double>(w[i]) * acc / static_cast<double>(per);
  }
  std::vector<T> wc(w.begin(), w.end());
  const int aid = a.id, bid = b.id;
  return a.tape->record(scalar_tensor<T>(total / static_cast<double>(n)), {a, b},
                        [=](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& x = tp.value(aid);
    const Tensor<T>& y = tp.value(bid);
    const T base = T(2) * g[0] / static_cast<T>(n * static_cast<std::int64_t>(per));
    T* ga = tp.requires_grad(aid) ? tp.grad(aid).data() : nullptr;
    T* gb = tp.requires_grad(bid) ? tp.grad(bid).data() : nullptr;
    for (std::int64_t i = 0; i < n; ++i) {
      const T k = base * wc[i];
      for (std::size_t j = 0; j < per; ++j) {
        const std::size_t q = i * per + j;
        const T d = k * (x[q] - y[q]);
        if (ga) ga[q] += d;
        if (gb) gb[q] -= d;
      }
    }
  });
}

template <typename T>
Var<T> kl_standard_normal(Var<T> mu, Var<T> logvar) {
  require_same_shape(mu.shape(), logvar.shape(), "kl_standard_normal");
  const Tensor<T>& m = mu.value();
  const Tensor<T>& lv = logvar.value();
  const std::int64_t n = mu.dim(0);
  double acc = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double mi = m[i], li = lv[i];
    acc += mi * mi + std::exp(li) - 1.0 - li;
  }
  const int mid = mu.id, lid = logvar.id;
  return mu.tape->record(scalar_tensor<T>(0.5 * acc / static_cast<double>(n)), {mu, logvar},
                         [=](Tape<T>& tp, const Tensor<T>& g) {
    const T k = g[0] / static_cast<T>(n);
    if (tp.requires_grad(mid)) {
      const Tensor<T>& mv = tp.value(mid);
      Tensor<T>& gm = tp.grad(mid);
      for (std::size_t i = 0; i < mv.size(); ++i) gm[i] += k * mv[i];
    }
    if (tp.requires_grad(lid)) {
      const Tensor<T>& lvv = tp.value(lid);
      Tensor<T>& gl = tp.grad(lid);
      for (std::size_t i = 0; i < lvv.size(); ++i) gl[i] += k * T(0.5) * (std::exp(lvv[i]) - T(1));
    }
  });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  const Tensor<T>& lv = logits.value();
  Tensor<T> probs(Shape{n, k});
  double loss = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ShapeError("softmax_cross_entropy: label out of range");
    double mx = lv[i * k];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max<double>(mx, lv[i * k + j]);
    double z = 0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(lv[i * k + j] - mx);
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] = static_cast<T>(std::exp(lv[i * k + j] - mx) / z);
    loss += -(lv[i * k + labels[i]] - mx - std::log(z));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  const int lid = logits.id;
  return logits.tape->record(scalar_tensor<T>(loss / static_cast<double>(n)), {logits},
                             [=, probs = std::move(probs)](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& gl = tp.grad(lid);
    const T s = g[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < k; ++j)
        gl[i * k + j] += s * (probs[i * k + j] - (j == lab[i] ? T(1) : T(0)));
  });
}

#define DGAE_INSTANTIATE(T)                                                                  \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> sub(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> scale(Var<T>, T);                                                          \
  template Var<T> add_scalar(Var<T>, T);                                                     \
  template Var<T> silu(Var<T>);                                                              \
  template Var<T> relu(Var<T>);                                                              \
  template Var<T> leaky_relu(Var<T>, T);                                                     \
  template Var<T> tanh(Var<T>);                                                              \
  template Var<T> clamp(Var<T>, T, T);                                                       \
  template Var<T> mul_per_sample(Var<T>, std::span<const T>);                                \
  template Var<T> reparameterize(Var<T>, Var<T>, const Tensor<T>&);                          \
  template Var<T> reshape(Var<T>, Shape);                                                    \
  template Var<T> concat_channels(Var<T>, Var<T>);                                           \
  template Var<T> slice_channels(Var<T>, std::int64_t, std::int64_t);                        \
  template Var<T> upsample_nearest(Var<T>, std::int64_t);                                    \
  template Var<T> add_channel_vector(Var<T>, Var<T>);                                        \
  template Var<T> mean_spatial(Var<T>);                                                      \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                                  \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                            \
  template Var<T> group_norm(Var<T>, Var<T>, Var<T>, int, T);                                \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                     \
  template Var<T> normalize_spatial(Var<T>, T);                                              \
  template Var<T> mean(Var<T>);                                                              \
  template Var<T> mse(Var<T>, Var<T>);                                                       \
  template Var<T> weighted_mse_per_sample(Var<T>, Var<T>, std::span<const T>);               \
  template Var<T> kl_standard_normal(Var<T>, Var<T>);                                        \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const int>);

DGAE_INSTANTIATE(float)
DGAE_INSTANTIATE(double)
#undef DGAE_INSTANTIATE

}  // namespace dgae::ag
