#include "mmworld/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace mmw {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t n = std::max(a.size(), b.size());
  Shape out(n, 1);
  for (size_t i = 0; i < n; ++i) {
    const int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      fail("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
    out[n - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (int64_t e : shape_) check(e >= 1, "tensor extent must be >= 1, got shape " + shape_str(shape_));
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check(shape_numel(shape_) == static_cast<int64_t>(data_.size()),
        "data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  for (int64_t e : shape_) check(e >= 1, "tensor extent must be >= 1");
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

int64_t Tensor::dim(int axis) const { return shape_[static_cast<size_t>(normalize_axis(axis, ndim()))]; }

namespace {

int64_t flat_offset(const Shape& shape, const std::vector<int64_t>& idx) {
  check(idx.size() == shape.size(), "index rank mismatch");
  const auto st = row_strides(shape);
  int64_t off = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < shape[i], "index out of range");
    off += idx[i] * st[i];
  }
  return off;
}

}  // namespace

double Tensor::at(const std::vector<int64_t>& idx) const {
  return data_[static_cast<size_t>(flat_offset(shape_, idx))];
}

double& Tensor::at(const std::vector<int64_t>& idx) {
  return data_[static_cast<size_t>(flat_offset(shape_, idx))];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  check(shape_numel(shape) == numel(),
        "reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
  return Tensor(std::move(shape), data_);
}

int normalize_axis(int axis, int ndim) {
  int a = axis < 0 ? axis + ndim : axis;
  check(a >= 0 && a < ndim, "axis " + std::to_string(axis) + " out of range for ndim " + std::to_string(ndim));
  return a;
}

std::vector<int64_t> row_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// ---- elementwise ----

namespace {

template <typename F>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, const char* name) {
  if (a.same_shape(b)) {
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  Shape os;
  try {
    os = broadcast_shape(a.shape(), b.shape());
  } catch (const std::exception&) {
    fail(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out(os);
  const int nd = out.ndim();
  // Per-output-axis strides; 0 where the input broadcasts.
  std::vector<int64_t> sa(nd, 0), sb(nd, 0), idx(nd, 0);
  const auto sta = row_strides(a.shape());
  const auto stb = row_strides(b.shape());
  for (int i = 0; i < nd; ++i) {
    const int ia = i - (nd - a.ndim());
    const int ib = i - (nd - b.ndim());
    if (ia >= 0 && a.shape()[ia] != 1) sa[i] = sta[ia];
    if (ib >= 0 && b.shape()[ib] != 1) sb[i] = stb[ib];
  }
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const int64_t n = out.numel();
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    po[i] = f(pa[oa], pb[ob]);
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < out.shape()[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      idx[d] = 0;
      oa -= sa[d] * (out.shape()[d] - 1);
      ob -= sb[d] * (out.shape()[d] - 1);
    }
  }
  return out;
}

template <typename F>
Tensor unary_op(const Tensor& a, F f) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, [](double x, double y) { return x + y; }, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, [](double x, double y) { return x - y; }, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, [](double x, double y) { return x * y; }, "mul"); }
Tensor div_(const Tensor& a, const Tensor& b) { return binary_op(a, b, [](double x, double y) { return x / y; }, "div"); }

Tensor neg(const Tensor& a) { return unary_op(a, [](double x) { return -x; }); }
Tensor exp_(const Tensor& a) { return unary_op(a, [](double x) { return std::exp(x); }); }
Tensor log_(const Tensor& a) { return unary_op(a, [](double x) { return std::log(x); }); }
Tensor tanh_(const Tensor& a) { return unary_op(a, [](double x) { return std::tanh(x); }); }
Tensor abs_(const Tensor& a) { return unary_op(a, [](double x) { return std::fabs(x); }); }

Tensor gelu(const Tensor& a) {
  return unary_op(a, [](double x) {
    const double xd = x;
    return static_cast<double>(0.5 * xd * (1.0 + std::erf(xd * kInvSqrt2)));
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary_op(a, [lo, hi](double x) { return std::min(hi, std::max(lo, x)); });
}

Tensor scale(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return static_cast<double>(x * s); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(a, [s](double x) { return static_cast<double>(x + s); });
}

// ---- structure ----

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  const int nd = a.ndim();
  check(static_cast<int>(axes.size()) == nd, "permute: axes rank mismatch");
  std::vector<bool> seen(nd, false);
  Shape os(nd);
  for (int i = 0; i < nd; ++i) {
    const int ax = normalize_axis(axes[i], nd);
    check(!seen[ax], "permute: duplicate axis");
    seen[ax] = true;
    os[i] = a.shape()[ax];
  }
  Tensor out(os);
  const auto sta = row_strides(a.shape());
  std::vector<int64_t> src_stride(nd);
  for (int i = 0; i < nd; ++i) src_stride[i] = sta[normalize_axis(axes[i], nd)];
  std::vector<int64_t> idx(nd, 0);
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = out.numel();
  int64_t oa = 0;
  for (int64_t i = 0; i < n; ++i) {
    po[i] = pa[oa];
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < os[d]) {
        oa += src_stride[d];
        break;
      }
      idx[d] = 0;
      oa -= src_stride[d] * (os[d] - 1);
    }
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  const int ax = normalize_axis(axis, a.ndim());
  check(start >= 0 && len >= 1 && start + len <= a.shape()[ax],
        "slice [" + std::to_string(start) + "," + std::to_string(start + len) + ") out of range on axis " +
            std::to_string(ax) + " of " + shape_str(a.shape()));
  Shape os = a.shape();
  os[ax] = len;
  Tensor out(os);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= a.shape()[i];
  for (int i = ax + 1; i < a.ndim(); ++i) inner *= a.shape()[i];
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    const double* src = pa + (o * a.shape()[ax] + start) * inner;
    std::memcpy(po + o * len * inner, src, static_cast<size_t>(len * inner) * sizeof(double));
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  check(!parts.empty(), "concat: no inputs");
  const int ax = normalize_axis(axis, parts[0].ndim());
  Shape os = parts[0].shape();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    check(p.ndim() == parts[0].ndim(), "concat: rank mismatch");
    for (int i = 0; i < p.ndim(); ++i)
      check(i == ax || p.shape()[i] == os[i],
            "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(os));
    total += p.shape()[ax];
  }
  os[ax] = total;
  Tensor out(os);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= os[i];
  for (int i = ax + 1; i < static_cast<int>(os.size()); ++i) inner *= os[i];
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    int64_t off = 0;
    for (const Tensor& p : parts) {
      const int64_t rows = p.shape()[ax];
      std::memcpy(po + (o * total + off) * inner, p.data() + o * rows * inner,
                  static_cast<size_t>(rows * inner) * sizeof(double));
      off += rows;
    }
  }
  return out;
}

// ---- linalg / nn kernels ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.ndim() >= 2 && b.ndim() >= 2, "matmul: inputs must have rank >= 2");
  const int64_t M = a.shape()[a.ndim() - 2];
  const int64_t K = a.shape()[a.ndim() - 1];
  const int64_t Kb = b.shape()[b.ndim() - 2];
  const int64_t N = b.shape()[b.ndim() - 1];
  check(K == Kb, "matmul: inner dims disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Shape batch(a.shape().begin(), a.shape().end() - 2);
  const bool shared_b = b.ndim() == 2;
  if (!shared_b) {
    Shape bb(b.shape().begin(), b.shape().end() - 2);
    check(bb == batch, "matmul: batch dims disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape os = batch;
  os.push_back(M);
  os.push_back(N);
  Tensor out(os);
  const int64_t nb = shape_numel(batch);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  std::vector<double> acc(static_cast<size_t>(N));
  for (int64_t bidx = 0; bidx < nb; ++bidx) {
    const double* A = pa + bidx * M * K;
    const double* B = shared_b ? pb : pb + bidx * K * N;
    double* O = po + bidx * M * N;
    for (int64_t i = 0; i < M; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const double* Ai = A + i * K;
      for (int64_t k = 0; k < K; ++k) {
        const double av = Ai[k];
        const double* Bk = B + k * N;
        for (int64_t j = 0; j < N; ++j) acc[static_cast<size_t>(j)] += av * Bk[j];
      }
      double* Oi = O + i * N;
      for (int64_t j = 0; j < N; ++j) Oi[j] = static_cast<double>(acc[static_cast<size_t>(j)]);
    }
  }
  return out;
}

namespace {

// Applies f(lane) over all (outer, inner) lanes along `axis`.
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

Tensor softmax(const Tensor& a, int axis) {
  const int ax = normalize_axis(axis, a.ndim());
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for_each_lane(a.shape(), ax, [&](int64_t base, int64_t stride, int64_t n) {
    double mx = pa[base];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, pa[base + i * stride]);
    double denom = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double e = std::exp(static_cast<double>(pa[base + i * stride]) - mx);
      po[base + i * stride] = static_cast<double>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int64_t i = 0; i < n; ++i)
      po[base + i * stride] = static_cast<double>(po[base + i * stride] * inv);
  });
  return out;
}

Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta, int axis, double eps) {
  const int ax = normalize_axis(axis, a.ndim());
  const int64_t n = a.shape()[ax];
  check(gamma.numel() == n && beta.numel() == n, "layernorm: gamma/beta must have length " + std::to_string(n));
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double* po = out.data();
  for_each_lane(a.shape(), ax, [&](int64_t base, int64_t stride, int64_t cnt) {
    double mean = 0.0;
    for (int64_t i = 0; i < cnt; ++i) mean += pa[base + i * stride];
    mean /= static_cast<double>(cnt);
    double var = 0.0;
    for (int64_t i = 0; i < cnt; ++i) {
      const double d = pa[base + i * stride] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cnt);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < cnt; ++i) {
      const double xhat = (pa[base + i * stride] - mean) * inv;
      po[base + i * stride] = static_cast<double>(xhat * pg[i] + pb[i]);
    }
  });
  return out;
}

namespace {

void check_patch_dims(const Tensor& x, int pt, int ph, int pw) {
  check(x.ndim() == 5, "patch op expects a 5-D [N,T,H,W,C] tensor, got " + shape_str(x.shape()));
  check(pt >= 1 && ph >= 1 && pw >= 1, "patch extents must be positive");
  check(x.shape()[1] % pt == 0 && x.shape()[2] % ph == 0 && x.shape()[3] % pw == 0,
        "patch (" + std::to_string(pt) + "," + std::to_string(ph) + "," + std::to_string(pw) +
            ") does not divide input " + shape_str(x.shape()));
}

}  // namespace

Tensor patch_project(const Tensor& x, int pt, int ph, int pw, const Tensor& w, const Tensor& b) {
  check_patch_dims(x, pt, ph, pw);
  const int64_t N = x.shape()[0], T = x.shape()[1], H = x.shape()[2], W = x.shape()[3], C = x.shape()[4];
  const int64_t pc = static_cast<int64_t>(pt) * ph * pw * C;
  check(w.ndim() == 2 && w.shape()[0] == pc, "patch_project: weight must be [" + std::to_string(pc) + ",D]");
  const int64_t D = w.shape()[1];
  check(b.numel() == D, "patch_project: bias length mismatch");
  const int64_t To = T / pt, Ho = H / ph, Wo = W / pw;
  Tensor out({N, To, Ho, Wo, D});
  const double* px = x.data();
  const double* pwt = w.data();
  const double* pbs = b.data();
  double* po = out.data();
  std::vector<double> acc(static_cast<size_t>(D));
  for (int64_t nn = 0; nn < N; ++nn)
    for (int64_t to = 0; to < To; ++to)
      for (int64_t ho = 0; ho < Ho; ++ho)
        for (int64_t wo = 0; wo < Wo; ++wo) {
          for (int64_t d = 0; d < D; ++d) acc[static_cast<size_t>(d)] = pbs[d];
          int64_t pidx = 0;
          for (int64_t dt = 0; dt < pt; ++dt)
            for (int64_t dh = 0; dh < ph; ++dh)
              for (int64_t dw = 0; dw < pw; ++dw) {
                const double* src = px + (((nn * T + to * pt + dt) * H + ho * ph + dh) * W + wo * pw + dw) * C;
                for (int64_t c = 0; c < C; ++c, ++pidx) {
                  const double v = src[c];
                  const double* wr = pwt + pidx * D;
                  for (int64_t d = 0; d < D; ++d) acc[static_cast<size_t>(d)] += v * wr[d];
                }
              }
          double* dst = po + (((nn * To + to) * Ho + ho) * Wo + wo) * D;
          for (int64_t d = 0; d < D; ++d) dst[d] = static_cast<double>(acc[static_cast<size_t>(d)]);
        }
  return out;
}

Tensor patch_unproject(const Tensor& x, int pt, int ph, int pw, const Tensor& w, const Tensor& b) {
  check(x.ndim() == 5, "patch_unproject expects 5-D input, got " + shape_str(x.shape()));
  const int64_t N = x.shape()[0], T = x.shape()[1], H = x.shape()[2], W = x.shape()[3], D = x.shape()[4];
  check(w.ndim() == 2 && w.shape()[0] == D, "patch_unproject: weight must be [D, pt*ph*pw*Cout]");
  const int64_t cols = w.shape()[1];
  const int64_t cell = static_cast<int64_t>(pt) * ph * pw;
  check(cols % cell == 0, "patch_unproject: weight columns not divisible by patch volume");
  const int64_t Cout = cols / cell;
  check(b.numel() == Cout, "patch_unproject: bias length mismatch");
  Tensor out({N, T * pt, H * ph, W * pw, Cout});
  const double* px = x.data();
  const double* pwt = w.data();
  const double* pbs = b.data();
  double* po = out.data();
  const int64_t To = T * pt, Ho = H * ph, Wo = W * pw;
  std::vector<double> acc(static_cast<size_t>(cols));
  for (int64_t nn = 0; nn < N; ++nn)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t ww = 0; ww < W; ++ww) {
          std::fill(acc.begin(), acc.end(), 0.0);
          const double* src = px + (((nn * T + t) * H + h) * W + ww) * D;
          for (int64_t d = 0; d < D; ++d) {
            const double v = src[d];
            const double* wr = pwt + d * cols;
            for (int64_t j = 0; j < cols; ++j) acc[static_cast<size_t>(j)] += v * wr[j];
          }
          int64_t j = 0;
          for (int64_t dt = 0; dt < pt; ++dt)
            for (int64_t dh = 0; dh < ph; ++dh)
              for (int64_t dw = 0; dw < pw; ++dw) {
                double* dst = po + (((nn * To + t * pt + dt) * Ho + h * ph + dh) * Wo + ww * pw + dw) * Cout;
                for (int64_t c = 0; c < Cout; ++c, ++j) dst[c] = static_cast<double>(acc[static_cast<size_t>(j)] + pbs[c]);
              }
        }
  return out;
}

Tensor conv3d_same(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(x.ndim() == 5, "conv3d_same expects 5-D input");
  check(w.ndim() == 5, "conv3d_same expects 5-D weight [kt,kh,kw,Cin,Cout]");
  const int64_t N = x.shape()[0], T = x.shape()[1], H = x.shape()[2], W = x.shape()[3], C = x.shape()[4];
  const int64_t kt = w.shape()[0], kh = w.shape()[1], kw = w.shape()[2];
  check(kt % 2 == 1 && kh % 2 == 1 && kw % 2 == 1, "conv3d_same: kernel extents must be odd");
  check(w.shape()[3] == C, "conv3d_same: Cin mismatch");
  const int64_t Cout = w.shape()[4];
  check(b.numel() == Cout, "conv3d_same: bias length mismatch");
  const int64_t rt = kt / 2, rh = kh / 2, rw = kw / 2;
  Tensor out({N, T, H, W, Cout});
  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.data();
  double* po = out.data();
  std::vector<double> acc(static_cast<size_t>(Cout));
  for (int64_t nn = 0; nn < N; ++nn)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t ww = 0; ww < W; ++ww) {
          for (int64_t c = 0; c < Cout; ++c) acc[static_cast<size_t>(c)] = pb[c];
          for (int64_t dt = -rt; dt <= rt; ++dt) {
            const int64_t tt = t + dt;
            if (tt < 0 || tt >= T) continue;
            for (int64_t dh = -rh; dh <= rh; ++dh) {
              const int64_t hh = h + dh;
              if (hh < 0 || hh >= H) continue;
              for (int64_t dw = -rw; dw <= rw; ++dw) {
                const int64_t wc = ww + dw;
                if (wc < 0 || wc >= W) continue;
                const double* src = px + (((nn * T + tt) * H + hh) * W + wc) * C;
                const double* wk = pw + (((dt + rt) * kh + dh + rh) * kw + dw + rw) * C * Cout;
                for (int64_t c = 0; c < C; ++c) {
                  const double v = src[c];
                  const double* wr = wk + c * Cout;
                  for (int64_t co = 0; co < Cout; ++co) acc[static_cast<size_t>(co)] += v * wr[co];
                }
              }
            }
          }
          double* dst = po + (((nn * T + t) * H + h) * W + ww) * Cout;
          for (int64_t c = 0; c < Cout; ++c) dst[c] = static_cast<double>(acc[static_cast<size_t>(c)]);
        }
  return out;
}

Tensor nn_upsample(const Tensor& x, int ft, int fh, int fw, bool causal_t) {
  check(x.ndim() == 5, "nn_upsample expects 5-D input");
  const int64_t N = x.shape()[0], T = x.shape()[1], H = x.shape()[2], W = x.shape()[3], C = x.shape()[4];
  const int64_t To = causal_t ? 1 + ft * (T - 1) : ft * T;
  Tensor out({N, To, H * fh, W * fw, C});
  const double* px = x.data();
  double* po = out.data();
  const int64_t Ho = H * fh, Wo = W * fw;
  for (int64_t nn = 0; nn < N; ++nn)
    for (int64_t to = 0; to < To; ++to) {
      const int64_t t = causal_t ? (to == 0 ? 0 : 1 + (to - 1) / ft) : to / ft;
      for (int64_t ho = 0; ho < Ho; ++ho)
        for (int64_t wo = 0; wo < Wo; ++wo) {
          const double* src = px + (((nn * T + t) * H + ho / fh) * W + wo / fw) * C;
          double* dst = po + (((nn * To + to) * Ho + ho) * Wo + wo) * C;
          std::memcpy(dst, src, static_cast<size_t>(C) * sizeof(double));
        }
    }
  return out;
}

Tensor avg_pool_hw(const Tensor& x, int f) {
  check(x.ndim() == 4, "avg_pool_hw expects 4-D [N,H,W,C] input");
  const int64_t N = x.shape()[0], H = x.shape()[1], W = x.shape()[2], C = x.shape()[3];
  check(H % f == 0 && W % f == 0, "avg_pool_hw: extents not divisible by factor");
  const int64_t Ho = H / f, Wo = W / f;
  Tensor out({N, Ho, Wo, C});
  const double* px = x.data();
  double* po = out.data();
  const double inv = 1.0 / (static_cast<double>(f) * f);
  for (int64_t nn = 0; nn < N; ++nn)
    for (int64_t ho = 0; ho < Ho; ++ho)
      for (int64_t wo = 0; wo < Wo; ++wo)
        for (int64_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int dh = 0; dh < f; ++dh)
            for (int dw = 0; dw < f; ++dw)
              acc += px[(((nn * H + ho * f + dh) * W) + wo * f + dw) * C + c];
          po[((nn * Ho + ho) * Wo + wo) * C + c] = static_cast<double>(acc * inv);
        }
  return out;
}

Tensor embed_rows(const Tensor& table, const std::vector<int64_t>& ids) {
  check(table.ndim() == 2, "embed_rows: table must be 2-D");
  const int64_t V = table.shape()[0], D = table.shape()[1];
  Tensor out({static_cast<int64_t>(ids.size()), D});
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < V, "embed_rows: id out of range");
    std::memcpy(out.data() + static_cast<int64_t>(i) * D, table.data() + ids[i] * D,
                static_cast<size_t>(D) * sizeof(double));
  }
  return out;
}

Tensor rotate_half(const Tensor& a) {
  const int64_t d = a.shape()[a.ndim() - 1];
  check(d % 2 == 0, "rotate_half: trailing extent must be even");
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; i += 2) {
    po[i] = -pa[i + 1];
    po[i + 1] = pa[i];
  }
  return out;
}

// ---- reductions ----

double sum_all(const Tensor& a) {
  double s = 0.0;
  const double* p = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) s += p[i];
  return s;
}

double mean_all(const Tensor& a) { return sum_all(a) / static_cast<double>(a.numel()); }

double max_abs(const Tensor& a) {
  double m = 0.0f;
  const double* p = a.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) m = std::max(m, std::fabs(p[i]));
  return m;
}

Tensor sum_to_shape(const Tensor& g, const Shape& target) {
  if (shapes_equal(g.shape(), target)) return g;
  // Trailing-aligned: every target axis either matches or is 1 (or missing).
  const int nd = g.ndim();
  const int td = static_cast<int>(target.size());
  Tensor out(target);
  const auto stt = row_strides(target);
  std::vector<int64_t> so(nd, 0), idx(nd, 0);
  for (int i = 0; i < nd; ++i) {
    const int it = i - (nd - td);
    if (it >= 0 && target[it] != 1) {
      check(target[it] == g.shape()[i], "sum_to_shape: incompatible shapes " + shape_str(g.shape()) +
                                            " -> " + shape_str(target));
      so[i] = stt[it];
    }
  }
  const double* pg = g.data();
  double* po = out.data();
  const int64_t n = g.numel();
  int64_t off = 0;
  for (int64_t i = 0; i < n; ++i) {
    po[off] += pg[i];
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < g.shape()[d]) {
        off += so[d];
        break;
      }
      idx[d] = 0;
      off -= so[d] * (g.shape()[d] - 1);
    }
  }
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) fail("add_inplace: shape mismatch " + shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
  double* pd = dst.data();
  const double* ps = src.data();
  const int64_t n = dst.numel();
  for (int64_t i = 0; i < n; ++i) pd[i] += ps[i];
}

}  // namespace mmw
