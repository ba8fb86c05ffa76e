#pragma once

// Differentiable primitives. Every op validates shapes and throws ShapeError
// naming itself; every op has a hand-written backward. Instantiated for float
// and double (src/nn/ops.cpp).

#include "v2xcalib/nn/var.hpp"

namespace v2xcalib::nn {

// -- elementwise with numpy-style broadcasting -------------------------------
template <typename S> Var<S> add(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> sub(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> mul(const Var<S>& a, const Var<S>& b);
template <typename S> Var<S> div(const Var<S>& a, const Var<S>& b);

template <typename S> Var<S> scale(const Var<S>& a, S s);
template <typename S> Var<S> add_scalar(const Var<S>& a, S s);

// -- unary --------------------------------------------------------------------
template <typename S> Var<S> neg(const Var<S>& a);
template <typename S> Var<S> relu(const Var<S>& a);
template <typename S> Var<S> sigmoid(const Var<S>& a);
template <typename S> Var<S> tanh(const Var<S>& a);
template <typename S> Var<S> exp(const Var<S>& a);
template <typename S> Var<S> log(const Var<S>& a);
template <typename S> Var<S> softplus(const Var<S>& a);
template <typename S> Var<S> sqrt(const Var<S>& a);
template <typename S> Var<S> square(const Var<S>& a);
template <typename S> Var<S> abs(const Var<S>& a);
template <typename S> Var<S> acos(const Var<S>& a);
/// Clamp to [lo, hi]; zero gradient outside.
template <typename S> Var<S> clamp(const Var<S>& a, S lo, S hi);
/// x * sigmoid(x).
template <typename S> Var<S> silu(const Var<S>& a);

// -- reductions ---------------------------------------------------------------
template <typename S> Var<S> sum(const Var<S>& a);
template <typename S> Var<S> mean(const Var<S>& a);
/// Sum over one axis. keepdim leaves an extent-1 axis behind.
template <typename S> Var<S> sum(const Var<S>& a, int axis, bool keepdim = false);
/// Euclidean norm of each row of an [N, K] tensor -> [N]. Gradient is zero
/// for rows with zero norm.
template <typename S> Var<S> row_norm(const Var<S>& a);

// -- shape --------------------------------------------------------------------
template <typename S> Var<S> reshape(const Var<S>& a, Shape shape);
template <typename S> Var<S> permute(const Var<S>& a, const std::vector<int>& perm);
template <typename S> Var<S> transpose(const Var<S>& a);  // 2-D
template <typename S> Var<S> slice(const Var<S>& a, int axis, int start, int length);
template <typename S> Var<S> concat(const std::vector<Var<S>>& parts, int axis);

// -- linear algebra -----------------------------------------------------------
/// [M, K] x [K, N] -> [M, N].
template <typename S> Var<S> matmul(const Var<S>& a, const Var<S>& b);
/// x [.., in] * w [in, out] + b [out] over the last axis.
template <typename S> Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b);

// -- images (NCHW) ------------------------------------------------------------
struct Conv2dOptions {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;

  static Conv2dOptions same(int kernel, int stride = 1) {
    return {stride, stride, kernel / 2, kernel / 2};
  }
};

/// x [N, C, H, W], w [O, C, kh, kw], bias [O] or undefined.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& bias, Conv2dOptions opt = {});
template <typename S> Var<S> avg_pool2d(const Var<S>& x, int kernel, int stride);
template <typename S> Var<S> max_pool2d(const Var<S>& x, int kernel, int stride);
/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename S> Var<S> resize_bilinear(const Var<S>& x, int out_h, int out_w);
/// img [N, C, H, W] sampled at grid [N, Ho, Wo, 2] holding (row, col) pixel
/// coordinates. Coordinates are clamped to the border; integer coordinates
/// return source values exactly. Differentiable w.r.t. both inputs.
template <typename S> Var<S> grid_sample(const Var<S>& img, const Var<S>& grid);

// -- sequence / misc ----------------------------------------------------------
/// Layer norm over the last axis with affine gamma/beta.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, S eps = S(1e-5));
/// h[t] = a[t] * h[t-1] + b[t] along axis 0 (h[-1] = 0), elementwise over the
/// remaining axes. reverse runs t from L-1 down to 0.
template <typename S> Var<S> linear_scan(const Var<S>& a, const Var<S>& b, bool reverse = false);
/// Rotation matrix [3, 3] of a unit quaternion [4] = (w, x, y, z).
template <typename S> Var<S> quat_to_rotmat(const Var<S>& q);

// -- operators ----------------------------------------------------------------
template <typename S> Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S> Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }
template <typename S> Var<S> operator/(const Var<S>& a, const Var<S>& b) { return div(a, b); }
template <typename S> Var<S> operator-(const Var<S>& a) { return neg(a); }
template <typename S> Var<S> operator*(const Var<S>& a, S s) { return scale(a, s); }
template <typename S> Var<S> operator*(S s, const Var<S>& a) { return scale(a, s); }
template <typename S> Var<S> operator+(const Var<S>& a, S s) { return add_scalar(a, s); }
template <typename S> Var<S> operator-(const Var<S>& a, S s) { return add_scalar(a, -s); }

/// Output shape of a broadcast between two shapes; throws naming `op`.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace v2xcalib::nn
