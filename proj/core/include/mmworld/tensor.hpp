#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmw {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool shapes_equal(const Shape& a, const Shape& b);

/// Shape of a trailing-aligned broadcast of `a` against `b`. Throws on mismatch.
Shape broadcast_shape(const Shape& a, const Shape& b);

/// Dense row-major tensor. 64-bit scalars in memory; serialized formats
/// store f32 and convert at the IO boundary.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0f); }
  static Tensor scalar(double v) { return Tensor({1}, {static_cast<double>(v)}); }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t dim(int axis) const;  // supports negative axes

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double at(const std::vector<int64_t>& idx) const;
  double& at(const std::vector<int64_t>& idx);

  bool same_shape(const Tensor& o) const { return shapes_equal(shape_, o.shape_); }
  bool all_finite() const;
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

int normalize_axis(int axis, int ndim);
std::vector<int64_t> row_strides(const Shape& s);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div_(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor abs_(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// ---- structure ----
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- linalg / nn kernels ----
/// Batched matrix product. Accepts equal leading batch dims, or a 2-D `b`
/// shared across the batch of `a`.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& a, int axis);
/// Normalizes over `axis` (per-lane mean 0, variance 1, epsilon-stabilized),
/// then applies gamma/beta of length dim(axis).
Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                 int axis = -1, double eps = 1e-5);

/// Non-overlapping strided linear projection: x [N,T,H,W,Cin] with patch
/// (pt,ph,pw), weight [pt*ph*pw*Cin, D], bias [D] -> [N,T/pt,H/ph,W/pw,D].
/// Patch flatten order is (dt, dh, dw, c) row-major.
Tensor patch_project(const Tensor& x, int pt, int ph, int pw,
                     const Tensor& w, const Tensor& b);
/// Shape inverse of patch_project: x [N,T,H,W,D], weight [D, pt*ph*pw*Cout],
/// bias [Cout] -> [N,T*pt,H*ph,W*pw,Cout].
Tensor patch_unproject(const Tensor& x, int pt, int ph, int pw,
                       const Tensor& w, const Tensor& b);
/// Stride-1 zero-same-padded convolution: x [N,T,H,W,Cin],
/// w [kt,kh,kw,Cin,Cout] (odd kernel), b [Cout].
Tensor conv3d_same(const Tensor& x, const Tensor& w, const Tensor& b);
/// Nearest-neighbor upsample of x [N,T,H,W,C] by (ft,fh,fw). With causal_t,
/// frame 0 is emitted once and later frames ft times.
Tensor nn_upsample(const Tensor& x, int ft, int fh, int fw, bool causal_t);
/// Average pool over H,W of x [N,H,W,C] by factor f (extents divisible by f).
Tensor avg_pool_hw(const Tensor& x, int f);
/// Rows of `table` selected by ids -> [ids.size(), D].
Tensor embed_rows(const Tensor& table, const std::vector<int64_t>& ids);
/// Pairs of the last axis (x0,x1) -> (-x1,x0).
Tensor rotate_half(const Tensor& a);

// ---- reductions ----
double sum_all(const Tensor& a);
double mean_all(const Tensor& a);
double max_abs(const Tensor& a);
/// Sums `g` down to `target` (inverse of trailing broadcast).
Tensor sum_to_shape(const Tensor& g, const Shape& target);
void add_inplace(Tensor& dst, const Tensor& src);  // same shape

}  // namespace mmw
