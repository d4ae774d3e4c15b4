#include "mmworld/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mmworld/rng.hpp"

namespace mmw {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool req(Tape* t, int id) { return t->requires_grad(Var{t, id}); }

const Tensor& val(Tape* t, int id) { return t->value(Var{t, id}); }

Tensor transpose_last2(const Tensor& x) {
  std::vector<int> axes(static_cast<size_t>(x.ndim()));
  for (int i = 0; i < x.ndim(); ++i) axes[static_cast<size_t>(i)] = i;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

template <typename F>
void for_each_lane(const Shape& shape, int axis, F f) {
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[i];
  for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) inner *= shape[i];
  const int64_t n = shape[axis];
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) f(o * n * inner + in, inner, n);
}

}  // namespace

Var Tape::leaf(Tensor value, bool requires_grad) {
  return make(std::move(value), requires_grad, nullptr);
}

Var Tape::make(Tensor value, bool requires_grad, std::function<void()> back) {
  Node nd;
  nd.value = std::move(value);
  nd.requires_grad = requires_grad;
  nd.back = std::move(back);
  nodes_.push_back(std::move(nd));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor* Tape::grad(Var v) const {
  const Node& nd = nodes_[static_cast<size_t>(v.id)];
  return nd.grad_set ? &nd.grad : nullptr;
}

Tensor& Tape::grad_ref(int id) {
  Node& nd = nodes_[static_cast<size_t>(id)];
  if (!nd.grad_set) {
    nd.grad = Tensor::zeros(nd.value.shape());
    nd.grad_set = true;
  }
  return nd.grad;
}

void Tape::accumulate(int id, const Tensor& contribution) {
  Node& nd = nodes_[static_cast<size_t>(id)];
  if (!nd.requires_grad) return;
  add_inplace(grad_ref(id), contribution);
}

void Tape::backward(Var loss) {
  check(loss.tape == this, "backward: loss from another tape");
  if (value(loss).numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(value(loss).shape()));
  if (!nodes_[static_cast<size_t>(loss.id)].requires_grad) return;  // constant graph: all grads zero
  grad_ref(loss.id) = Tensor::ones(value(loss).shape());
  for (int i = loss.id; i >= 0; --i) {
    Node& nd = nodes_[static_cast<size_t>(i)];
    if (nd.grad_set && nd.back) nd.back();
  }
}

// ---- op helpers ----

namespace {

using Back = std::function<void()>;

Var emit(Tape* t, Tensor out, bool rg, Back back) {
  return t->make(std::move(out), rg, rg ? std::move(back) : Back());
}

}  // namespace

Var add(Var a, Var b) {
  check(a.tape == b.tape, "add: vars from different tapes");
  Tape* t = a.tape;
  const bool rg = req(t, a.id) || req(t, b.id);
  const int ia = a.id, ib = b.id, self = static_cast<int>(t->size());
  const Shape sa = val(t, ia).shape(), sb = val(t, ib).shape();
  return emit(t, add(val(t, ia), val(t, ib)), rg, [t, ia, ib, self, sa, sb] {
    const Tensor& g = *t->grad(Var{t, self});
    if (req(t, ia)) t->accumulate(ia, sum_to_shape(g, sa));
    if (req(t, ib)) t->accumulate(ib, sum_to_shape(g, sb));
  });
}

Var sub(Var a, Var b) {
  check(a.tape == b.tape, "sub: vars from different tapes");
  Tape* t = a.tape;
  const bool rg = req(t, a.id) || req(t, b.id);
  const int ia = a.id, ib = b.id, self = static_cast<int>(t->size());
  const Shape sa = val(t, ia).shape(), sb = val(t, ib).shape();
  return emit(t, sub(val(t, ia), val(t, ib)), rg, [t, ia, ib, self, sa, sb] {
    const Tensor& g = *t->grad(Var{t, self});
    if (req(t, ia)) t->accumulate(ia, sum_to_shape(g, sa));
    if (req(t, ib)) t->accumulate(ib, sum_to_shape(neg(g), sb));
  });
}

Var mul(Var a, Var b) {
  check(a.tape == b.tape, "mul: vars from different tapes");
  Tape* t = a.tape;
  const bool rg = req(t, a.id) || req(t, b.id);
  const int ia = a.id, ib = b.id, self = static_cast<int>(t->size());
  const Shape sa = val(t, ia).shape(), sb = val(t, ib).shape();
  return emit(t, mul(val(t, ia), val(t, ib)), rg, [t, ia, ib, self, sa, sb] {
    const Tensor& g = *t->grad(Var{t, self});
    if (req(t, ia)) t->accumulate(ia, sum_to_shape(mul(g, val(t, ib)), sa));
    if (req(t, ib)) t->accumulate(ib, sum_to_shape(mul(g, val(t, ia)), sb));
  });
}

Var div_(Var a, Var b) {
  check(a.tape == b.tape, "div: vars from different tapes");
  Tape* t = a.tape;
  const bool rg = req(t, a.id) || req(t, b.id);
  const int ia = a.id, ib = b.id, self = static_cast<int>(t->size());
  const Shape sa = val(t, ia).shape(), sb = val(t, ib).shape();
  return emit(t, div_(val(t, ia), val(t, ib)), rg, [t, ia, ib, self, sa, sb] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& bv = val(t, ib);
    if (req(t, ia)) t->accumulate(ia, sum_to_shape(div_(g, bv), sa));
    if (req(t, ib)) {
      Tensor gb = neg(mul(g, div_(val(t, ia), mul(bv, bv))));
      t->accumulate(ib, sum_to_shape(gb, sb));
    }
  });
}

namespace {

// Unary op with an elementwise derivative computed from the input value.
template <typename FwdF, typename DerivF>
Var unary(Var a, FwdF fwd, DerivF dfdx) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  return emit(t, fwd(val(t, ia)), rg, [t, ia, self, dfdx] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& x = val(t, ia);
    Tensor dx(x.shape());
    const double* px = x.data();
    const double* pg = g.data();
    double* pd = dx.data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) pd[i] = static_cast<double>(pg[i] * dfdx(px[i]));
    t->accumulate(ia, dx);
  });
}

}  // namespace

Var neg(Var a) {
  return unary(a, [](const Tensor& x) { return neg(x); }, [](double) { return -1.0; });
}

Var exp_(Var a) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  return emit(t, exp_(val(t, ia)), rg, [t, ia, self] {
    const Tensor& g = *t->grad(Var{t, self});
    t->accumulate(ia, mul(g, val(t, self)));
  });
}

Var log_(Var a) {
  return unary(a, [](const Tensor& x) { return log_(x); },
               [](double x) { return 1.0 / static_cast<double>(x); });
}

Var tanh_(Var a) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  return emit(t, tanh_(val(t, ia)), rg, [t, ia, self] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& y = val(t, self);
    Tensor dx(y.shape());
    for (int64_t i = 0; i < y.numel(); ++i)
      dx[i] = static_cast<double>(g[i] * (1.0 - static_cast<double>(y[i]) * y[i]));
    t->accumulate(ia, dx);
  });
}

Var abs_(Var a) {
  return unary(a, [](const Tensor& x) { return abs_(x); },
               [](double x) { return x > 0.0f ? 1.0 : (x < 0.0f ? -1.0 : 0.0); });
}

Var gelu(Var a) {
  return unary(a, [](const Tensor& x) { return gelu(x); }, [](double xf) {
    const double x = xf;
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    return cdf + x * pdf;
  });
}

Var clamp(Var a, double lo, double hi) {
  return unary(a, [lo, hi](const Tensor& x) { return clamp(x, lo, hi); },
               [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var scale(Var a, double s) {
  return unary(a, [s](const Tensor& x) { return scale(x, s); }, [s](double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](const Tensor& x) { return add_scalar(x, s); }, [](double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  check(a.tape == b.tape, "matmul: vars from different tapes");
  Tape* t = a.tape;
  const bool rg = req(t, a.id) || req(t, b.id);
  const int ia = a.id, ib = b.id, self = static_cast<int>(t->size());
  return emit(t, matmul(val(t, ia), val(t, ib)), rg, [t, ia, ib, self] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& av = val(t, ia);
    const Tensor& bv = val(t, ib);
    if (req(t, ia)) t->accumulate(ia, matmul(g, transpose_last2(bv)));
    if (req(t, ib)) {
      if (bv.ndim() == 2 && av.ndim() > 2) {
        const int64_t K = av.shape()[av.ndim() - 1];
        const int64_t N = g.shape()[g.ndim() - 1];
        const int64_t rows = av.numel() / K;
        Tensor a2 = av.reshaped({rows, K});
        Tensor g2 = g.reshaped({rows, N});
        t->accumulate(ib, matmul(transpose_last2(a2), g2));
      } else {
        t->accumulate(ib, matmul(transpose_last2(av), g));
      }
    }
  });
}

Var softmax(Var a, int axis) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  const int ax = normalize_axis(axis, val(t, ia).ndim());
  return emit(t, softmax(val(t, ia), ax), rg, [t, ia, self, ax] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& y = val(t, self);
    Tensor dx(y.shape());
    const double* py = y.data();
    const double* pg = g.data();
    double* pd = dx.data();
    for_each_lane(y.shape(), ax, [&](int64_t base, int64_t stride, int64_t n) {
      double dot = 0.0;
      for (int64_t i = 0; i < n; ++i) dot += static_cast<double>(pg[base + i * stride]) * py[base + i * stride];
      for (int64_t i = 0; i < n; ++i) {
        const int64_t k = base + i * stride;
        pd[k] = static_cast<double>(py[k] * (pg[k] - dot));
      }
    });
    t->accumulate(ia, dx);
  });
}

Var layernorm(Var x, Var gamma, Var beta, int axis, double eps) {
  check(x.tape == gamma.tape && x.tape == beta.tape, "layernorm: vars from different tapes");
  Tape* t = x.tape;
  const bool rg = req(t, x.id) || req(t, gamma.id) || req(t, beta.id);
  const int ix = x.id, ig = gamma.id, ibt = beta.id, self = static_cast<int>(t->size());
  const int ax = normalize_axis(axis, val(t, ix).ndim());
  return emit(t, layernorm(val(t, ix), val(t, ig), val(t, ibt), ax, eps), rg,
              [t, ix, ig, ibt, self, ax, eps] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& xv = val(t, ix);
    const Tensor& gm = val(t, ig);
    const int64_t n = xv.shape()[ax];
    Tensor dx(xv.shape());
    std::vector<double> dgamma(static_cast<size_t>(n), 0.0), dbeta(static_cast<size_t>(n), 0.0);
    const double* px = xv.data();
    const double* pg = g.data();
    const double* pgm = gm.data();
    double* pd = dx.data();
    for_each_lane(xv.shape(), ax, [&](int64_t base, int64_t stride, int64_t cnt) {
      double mean = 0.0;
      for (int64_t i = 0; i < cnt; ++i) mean += px[base + i * stride];
      mean /= static_cast<double>(cnt);
      double var = 0.0;
      for (int64_t i = 0; i < cnt; ++i) {
        const double d = px[base + i * stride] - mean;
        var += d * d;
      }
      var /= static_cast<double>(cnt);
      const double inv = 1.0 / std::sqrt(var + eps);
      double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
      for (int64_t i = 0; i < cnt; ++i) {
        const int64_t k = base + i * stride;
        const double xhat = (px[k] - mean) * inv;
        const double dxh = static_cast<double>(pg[k]) * pgm[i];
        m1 += dxh;
        m2 += dxh * xhat;
        dgamma[static_cast<size_t>(i)] += static_cast<double>(pg[k]) * xhat;
        dbeta[static_cast<size_t>(i)] += pg[k];
      }
      m1 /= static_cast<double>(cnt);
      m2 /= static_cast<double>(cnt);
      for (int64_t i = 0; i < cnt; ++i) {
        const int64_t k = base + i * stride;
        const double xhat = (px[k] - mean) * inv;
        const double dxh = static_cast<double>(pg[k]) * pgm[i];
        pd[k] = static_cast<double>((dxh - m1 - xhat * m2) * inv);
      }
    });
    if (req(t, ix)) t->accumulate(ix, dx);
    if (req(t, ig) || req(t, ibt)) {
      Tensor tg({n}), tb({n});
      for (int64_t i = 0; i < n; ++i) {
        tg[i] = static_cast<double>(dgamma[static_cast<size_t>(i)]);
        tb[i] = static_cast<double>(dbeta[static_cast<size_t>(i)]);
      }
      if (req(t, ig)) t->accumulate(ig, tg);
      if (req(t, ibt)) t->accumulate(ibt, tb);
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  const Shape sa = val(t, ia).shape();
  return emit(t, val(t, ia).reshaped(std::move(shape)), rg, [t, ia, self, sa] {
    t->accumulate(ia, t->grad(Var{t, self})->reshaped(sa));
  });
}

Var permute(Var a, const std::vector<int>& axes) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  const int nd = val(t, ia).ndim();
  std::vector<int> inv(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) inv[static_cast<size_t>(normalize_axis(axes[static_cast<size_t>(i)], nd))] = i;
  return emit(t, permute(val(t, ia), axes), rg, [t, ia, self, inv] {
    t->accumulate(ia, permute(*t->grad(Var{t, self}), inv));
  });
}

Var slice(Var a, int axis, int64_t start, int64_t len) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  const int ax = normalize_axis(axis, val(t, ia).ndim());
  return emit(t, slice(val(t, ia), ax, start, len), rg, [t, ia, self, ax, start, len] {
    const Tensor& g = *t->grad(Var{t, self});
    const Shape sa = val(t, ia).shape();
    Tensor dx(sa);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= sa[static_cast<size_t>(i)];
    for (int i = ax + 1; i < static_cast<int>(sa.size()); ++i) inner *= sa[static_cast<size_t>(i)];
    double* pd = dx.data();
    const double* pg = g.data();
    for (int64_t o = 0; o < outer; ++o) {
      double* dst = pd + (o * sa[static_cast<size_t>(ax)] + start) * inner;
      const double* src = pg + o * len * inner;
      for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
    }
    t->accumulate(ia, dx);
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  check(!parts.empty(), "concat: no inputs");
  Tape* t = parts[0].tape;
  bool rg = false;
  std::vector<Tensor> vals;
  std::vector<int> ids;
  vals.reserve(parts.size());
  for (Var p : parts) {
    check(p.tape == t, "concat: vars from different tapes");
    rg = rg || req(t, p.id);
    vals.push_back(val(t, p.id));
    ids.push_back(p.id);
  }
  const int ax = normalize_axis(axis, vals[0].ndim());
  const int self = static_cast<int>(t->size());
  return emit(t, concat(vals, ax), rg, [t, ids, self, ax] {
    const Tensor& g = *t->grad(Var{t, self});
    int64_t off = 0;
    for (int id : ids) {
      const int64_t len = val(t, id).shape()[static_cast<size_t>(ax)];
      if (req(t, id)) t->accumulate(id, slice(g, ax, off, len));
      off += len;
    }
  });
}

Var patch_project(Var x, int pt, int ph, int pw, Var w, Var b) {
  check(x.tape == w.tape && x.tape == b.tape, "patch_project: vars from different tapes");
  Tape* t = x.tape;
  const bool rg = req(t, x.id) || req(t, w.id) || req(t, b.id);
  const int ix = x.id, iw = w.id, ib = b.id, self = static_cast<int>(t->size());
  return emit(t, patch_project(val(t, ix), pt, ph, pw, val(t, iw), val(t, ib)), rg,
              [t, ix, iw, ib, self, pt, ph, pw] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& xv = val(t, ix);
    const Tensor& wv = val(t, iw);
    const int64_t N = xv.shape()[0], T = xv.shape()[1], H = xv.shape()[2], W = xv.shape()[3], C = xv.shape()[4];
    const int64_t D = wv.shape()[1];
    const int64_t To = T / pt, Ho = H / ph, Wo = W / pw;
    const bool need_x = req(t, ix), need_w = req(t, iw), need_b = req(t, ib);
    Tensor gx = need_x ? Tensor::zeros(xv.shape()) : Tensor();
    std::vector<double> gw(need_w ? static_cast<size_t>(wv.numel()) : 0, 0.0);
    std::vector<double> gb(need_b ? static_cast<size_t>(D) : 0, 0.0);
    const double* px = xv.data();
    const double* pw_ = wv.data();
    const double* pg = g.data();
    for (int64_t nn = 0; nn < N; ++nn)
      for (int64_t to = 0; to < To; ++to)
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const double* grow = pg + (((nn * To + to) * Ho + ho) * Wo + wo) * D;
            if (need_b)
              for (int64_t d = 0; d < D; ++d) gb[static_cast<size_t>(d)] += grow[d];
            int64_t pidx = 0;
            for (int64_t dt = 0; dt < pt; ++dt)
              for (int64_t dh = 0; dh < ph; ++dh)
                for (int64_t dw = 0; dw < pw; ++dw) {
                  const int64_t base = (((nn * T + to * pt + dt) * H + ho * ph + dh) * W + wo * pw + dw) * C;
                  for (int64_t c = 0; c < C; ++c, ++pidx) {
                    const double* wr = pw_ + pidx * D;
                    if (need_x) {
                      double acc = 0.0;
                      for (int64_t d = 0; d < D; ++d) acc += static_cast<double>(wr[d]) * grow[d];
                      gx[base + c] += static_cast<double>(acc);
                    }
                    if (need_w) {
                      const double v = px[base + c];
                      double* gwr = gw.data() + pidx * D;
                      for (int64_t d = 0; d < D; ++d) gwr[d] += v * grow[d];
                    }
                  }
                }
          }
    if (need_x) t->accumulate(ix, gx);
    if (need_w) {
      Tensor tw(wv.shape());
      for (int64_t i = 0; i < tw.numel(); ++i) tw[i] = static_cast<double>(gw[static_cast<size_t>(i)]);
      t->accumulate(iw, tw);
    }
    if (need_b) {
      Tensor tb({D});
      for (int64_t i = 0; i < D; ++i) tb[i] = static_cast<double>(gb[static_cast<size_t>(i)]);
      t->accumulate(ib, tb);
    }
  });
}

Var patch_unproject(Var x, int pt, int ph, int pw, Var w, Var b) {
  check(x.tape == w.tape && x.tape == b.tape, "patch_unproject: vars from different tapes");
  Tape* t = x.tape;
  const bool rg = req(t, x.id) || req(t, w.id) || req(t, b.id);
  const int ix = x.id, iw = w.id, ib = b.id, self = static_cast<int>(t->size());
  return emit(t, patch_unproject(val(t, ix), pt, ph, pw, val(t, iw), val(t, ib)), rg,
              [t, ix, iw, ib, self, pt, ph, pw] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& xv = val(t, ix);
    const Tensor& wv = val(t, iw);
    const int64_t N = xv.shape()[0], T = xv.shape()[1], H = xv.shape()[2], W = xv.shape()[3], D = xv.shape()[4];
    const int64_t cols = wv.shape()[1];
    const int64_t Cout = cols / (static_cast<int64_t>(pt) * ph * pw);
    const int64_t To = T * pt, Ho = H * ph, Wo = W * pw;
    const bool need_x = req(t, ix), need_w = req(t, iw), need_b = req(t, ib);
    Tensor gx = need_x ? Tensor::zeros(xv.shape()) : Tensor();
    std::vector<double> gw(need_w ? static_cast<size_t>(wv.numel()) : 0, 0.0);
    std::vector<double> gb(need_b ? static_cast<size_t>(Cout) : 0, 0.0);
    const double* px = xv.data();
    const double* pw_ = wv.data();
    const double* pg = g.data();
    std::vector<double> gpatch(static_cast<size_t>(cols));
    for (int64_t nn = 0; nn < N; ++nn)
      for (int64_t tt = 0; tt < T; ++tt)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t ww = 0; ww < W; ++ww) {
            // Gather the output-patch gradient for this latent cell.
            int64_t j = 0;
            for (int64_t dt = 0; dt < pt; ++dt)
              for (int64_t dh = 0; dh < ph; ++dh)
                for (int64_t dw = 0; dw < pw; ++dw) {
                  const double* grow =
                      pg + (((nn * To + tt * pt + dt) * Ho + h * ph + dh) * Wo + ww * pw + dw) * Cout;
                  for (int64_t c = 0; c < Cout; ++c, ++j) {
                    gpatch[static_cast<size_t>(j)] = grow[c];
                    if (need_b) gb[static_cast<size_t>(c)] += grow[c];
                  }
                }
            const double* src = px + (((nn * T + tt) * H + h) * W + ww) * D;
            for (int64_t d = 0; d < D; ++d) {
              const double* wr = pw_ + d * cols;
              if (need_x) {
                double acc = 0.0;
                for (int64_t jj = 0; jj < cols; ++jj) acc += static_cast<double>(wr[jj]) * gpatch[static_cast<size_t>(jj)];
                gx[(((nn * T + tt) * H + h) * W + ww) * D + d] += static_cast<double>(acc);
              }
              if (need_w) {
                const double v = src[d];
                double* gwr = gw.data() + d * cols;
                for (int64_t jj = 0; jj < cols; ++jj) gwr[jj] += v * gpatch[static_cast<size_t>(jj)];
              }
            }
          }
    if (need_x) t->accumulate(ix, gx);
    if (need_w) {
      Tensor tw(wv.shape());
      for (int64_t i = 0; i < tw.numel(); ++i) tw[i] = static_cast<double>(gw[static_cast<size_t>(i)]);
      t->accumulate(iw, tw);
    }
    if (need_b) {
      Tensor tb({Cout});
      for (int64_t i = 0; i < Cout; ++i) tb[i] = static_cast<double>(gb[static_cast<size_t>(i)]);
      t->accumulate(ib, tb);
    }
  });
}

Var conv3d_same(Var x, Var w, Var b) {
  check(x.tape == w.tape && x.tape == b.tape, "conv3d_same: vars from different tapes");
  Tape* t = x.tape;
  const bool rg = req(t, x.id) || req(t, w.id) || req(t, b.id);
  const int ix = x.id, iw = w.id, ib = b.id, self = static_cast<int>(t->size());
  return emit(t, conv3d_same(val(t, ix), val(t, iw), val(t, ib)), rg, [t, ix, iw, ib, self] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& xv = val(t, ix);
    const Tensor& wv = val(t, iw);
    const int64_t N = xv.shape()[0], T = xv.shape()[1], H = xv.shape()[2], W = xv.shape()[3], C = xv.shape()[4];
    const int64_t kt = wv.shape()[0], kh = wv.shape()[1], kw = wv.shape()[2], Cout = wv.shape()[4];
    const int64_t rt = kt / 2, rh = kh / 2, rw = kw / 2;
    const bool need_x = req(t, ix), need_w = req(t, iw), need_b = req(t, ib);
    Tensor gx = need_x ? Tensor::zeros(xv.shape()) : Tensor();
    std::vector<double> gw(need_w ? static_cast<size_t>(wv.numel()) : 0, 0.0);
    std::vector<double> gb(need_b ? static_cast<size_t>(Cout) : 0, 0.0);
    const double* px = xv.data();
    const double* pw_ = wv.data();
    const double* pg = g.data();
    for (int64_t nn = 0; nn < N; ++nn)
      for (int64_t tt = 0; tt < T; ++tt)
        for (int64_t h = 0; h < H; ++h)
          for (int64_t ww = 0; ww < W; ++ww) {
            const double* grow = pg + (((nn * T + tt) * H + h) * W + ww) * Cout;
            if (need_b)
              for (int64_t c = 0; c < Cout; ++c) gb[static_cast<size_t>(c)] += grow[c];
            for (int64_t dt = -rt; dt <= rt; ++dt) {
              const int64_t ti = tt + dt;
              if (ti < 0 || ti >= T) continue;
              for (int64_t dh = -rh; dh <= rh; ++dh) {
                const int64_t hi = h + dh;
                if (hi < 0 || hi >= H) continue;
                for (int64_t dw = -rw; dw <= rw; ++dw) {
                  const int64_t wi = ww + dw;
                  if (wi < 0 || wi >= W) continue;
                  const int64_t xbase = (((nn * T + ti) * H + hi) * W + wi) * C;
                  const int64_t wbase = (((dt + rt) * kh + dh + rh) * kw + dw + rw) * C * Cout;
                  for (int64_t c = 0; c < C; ++c) {
                    const double* wr = pw_ + wbase + c * Cout;
                    if (need_x) {
                      double acc = 0.0;
                      for (int64_t co = 0; co < Cout; ++co) acc += static_cast<double>(wr[co]) * grow[co];
                      gx[xbase + c] += static_cast<double>(acc);
                    }
                    if (need_w) {
                      const double v = px[xbase + c];
                      double* gwr = gw.data() + wbase + c * Cout;
                      for (int64_t co = 0; co < Cout; ++co) gwr[co] += v * grow[co];
                    }
                  }
                }
              }
            }
          }
    if (need_x) t->accumulate(ix, gx);
    if (need_w) {
      Tensor tw(wv.shape());
      for (int64_t i = 0; i < tw.numel(); ++i) tw[i] = static_cast<double>(gw[static_cast<size_t>(i)]);
      t->accumulate(iw, tw);
    }
    if (need_b) {
      Tensor tb({Cout});
      for (int64_t i = 0; i < Cout; ++i) tb[i] = static_cast<double>(gb[static_cast<size_t>(i)]);
      t->accumulate(ib, tb);
    }
  });
}

Var nn_upsample(Var x, int ft, int fh, int fw, bool causal_t) {
  Tape* t = x.tape;
  const bool rg = req(t, x.id);
  const int ix = x.id, self = static_cast<int>(t->size());
  return emit(t, nn_upsample(val(t, ix), ft, fh, fw, causal_t), rg, [t, ix, self, ft, fh, fw, causal_t] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& xv = val(t, ix);
    const int64_t N = xv.shape()[0], T = xv.shape()[1], H = xv.shape()[2], W = xv.shape()[3], C = xv.shape()[4];
    const int64_t To = g.shape()[1], Ho = g.shape()[2], Wo = g.shape()[3];
    Tensor gx(xv.shape());
    const double* pg = g.data();
    double* pd = gx.data();
    for (int64_t nn = 0; nn < N; ++nn)
      for (int64_t to = 0; to < To; ++to) {
        const int64_t ti = causal_t ? (to == 0 ? 0 : 1 + (to - 1) / ft) : to / ft;
        for (int64_t ho = 0; ho < Ho; ++ho)
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const double* src = pg + (((nn * To + to) * Ho + ho) * Wo + wo) * C;
            double* dst = pd + (((nn * T + ti) * H + ho / fh) * W + wo / fw) * C;
            for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
          }
      }
    t->accumulate(ix, gx);
  });
}

Var avg_pool_hw(Var x, int f) {
  Tape* t = x.tape;
  const bool rg = req(t, x.id);
  const int ix = x.id, self = static_cast<int>(t->size());
  return emit(t, avg_pool_hw(val(t, ix), f), rg, [t, ix, self, f] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& xv = val(t, ix);
    const int64_t N = xv.shape()[0], H = xv.shape()[1], W = xv.shape()[2], C = xv.shape()[3];
    Tensor gx(xv.shape());
    const double inv = 1.0 / (static_cast<double>(f) * f);
    for (int64_t nn = 0; nn < N; ++nn)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t w = 0; w < W; ++w)
          for (int64_t c = 0; c < C; ++c)
            gx[(((nn * H + h) * W) + w) * C + c] = static_cast<double>(
                g[((nn * (H / f) + h / f) * (W / f) + w / f) * C + c] * inv);
    t->accumulate(ix, gx);
  });
}

Var embed_rows(Var table, std::vector<int64_t> ids) {
  Tape* t = table.tape;
  const bool rg = req(t, table.id);
  const int it = table.id, self = static_cast<int>(t->size());
  return emit(t, embed_rows(val(t, it), ids), rg, [t, it, self, ids] {
    const Tensor& g = *t->grad(Var{t, self});
    const Tensor& tab = val(t, it);
    const int64_t D = tab.shape()[1];
    Tensor gt(tab.shape());
    for (size_t i = 0; i < ids.size(); ++i)
      for (int64_t d = 0; d < D; ++d)
        gt[ids[i] * D + d] += g[static_cast<int64_t>(i) * D + d];
    t->accumulate(it, gt);
  });
}

Var rotate_half(Var a) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  return emit(t, rotate_half(val(t, ia)), rg, [t, ia, self] {
    t->accumulate(ia, neg(rotate_half(*t->grad(Var{t, self}))));
  });
}

Var sum_all(Var a) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  return emit(t, Tensor::scalar(sum_all(val(t, ia))), rg, [t, ia, self] {
    const double gv = (*t->grad(Var{t, self}))[0];
    t->accumulate(ia, Tensor::full(val(t, ia).shape(), gv));
  });
}

Var mean_all(Var a) {
  Tape* t = a.tape;
  const bool rg = req(t, a.id);
  const int ia = a.id, self = static_cast<int>(t->size());
  return emit(t, Tensor::scalar(mean_all(val(t, ia))), rg, [t, ia, self] {
    const Tensor& xv = val(t, ia);
    const double gv = (*t->grad(Var{t, self}))[0] / static_cast<double>(xv.numel());
    t->accumulate(ia, Tensor::full(xv.shape(), static_cast<double>(gv)));
  });
}

double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                  const std::vector<Tensor>& params, double eps, int max_checks_per_param,
                  uint64_t seed) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(tape.leaf(p, true));
    Var loss = f(tape, vars);
    if (loss.value().numel() != 1)
      throw std::invalid_argument("grad_check: loss must be scalar, got shape " + shape_str(loss.shape()));
    tape.backward(loss);
    for (Var v : vars) {
      const Tensor* g = tape.grad(v);
      analytic.push_back(g ? *g : Tensor::zeros(v.shape()));
    }
  }
  auto eval = [&f](const std::vector<Tensor>& ps) -> double {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(ps.size());
    for (const Tensor& p : ps) vars.push_back(tape.leaf(p, false));
    return static_cast<double>(f(tape, vars).value()[0]);
  };
  Rng rng(seed);
  std::vector<Tensor> work = params;
  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const int64_t n = params[pi].numel();
    std::vector<int64_t> coords;
    if (max_checks_per_param > 0 && n > max_checks_per_param) {
      coords.reserve(static_cast<size_t>(max_checks_per_param));
      for (int i = 0; i < max_checks_per_param; ++i) coords.push_back(rng.uniform_int(n));
    } else {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    }
    for (int64_t c : coords) {
      const double orig = work[pi][c];
      const double plus = static_cast<double>(static_cast<double>(orig) + eps);
      const double minus = static_cast<double>(static_cast<double>(orig) - eps);
      work[pi][c] = plus;
      const double fp = eval(work);
      work[pi][c] = minus;
      const double fm = eval(work);
      work[pi][c] = orig;
      const double numeric = (fp - fm) / (static_cast<double>(plus) - static_cast<double>(minus));
      const double ana = analytic[pi][c];
      const double rel = std::fabs(ana - numeric) /
                         std::max({std::fabs(ana), std::fabs(numeric), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace mmw
