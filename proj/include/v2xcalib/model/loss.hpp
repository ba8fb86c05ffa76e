#pragma once

#include "v2xcalib/geometry.hpp"
#include "v2xcalib/nn/ops.hpp"

#include <stdexcept>
#include <vector>

namespace v2xcalib::model {

using nn::Tensor;
using nn::Var;

struct LossConfig {
  double lambda_r = 1.0;
  double lambda_p = 0.1;  // per metre
  double gamma = 0.8;

  void validate() const {
    if (lambda_r < 0 || lambda_p < 0 || !(lambda_r + lambda_p > 0)) {
      throw std::invalid_argument("loss: weights must be non-negative with a positive sum");
    }
    if (!(gamma > 0 && gamma <= 1)) throw std::invalid_argument("loss: gamma must lie in (0, 1]");
  }
};

inline constexpr double kAcosMargin = 1e-7;

/// Angular distance 2 acos |<q_pred, q_gt>| per row of [N, 4]; returns [N].
/// |dot| is clamped below 1 - 1e-7 so the gradient stays finite at zero error.
template <typename S>
Var<S> rotation_loss(const Var<S>& q_pred, const Tensor<S>& q_gt) {
  if (q_pred.ndim() != 2 || q_pred.dim(1) != 4 || q_pred.shape() != q_gt.shape()) {
    throw nn::ShapeError("rotation_loss: expected matching [N, 4] quaternions, got " + nn::shape_str(q_pred.shape()) +
                         " and " + nn::shape_str(q_gt.shape()));
  }
  const Var<S> dot = nn::sum(q_pred * Var<S>::constant(q_gt), 1);
  return nn::acos(nn::clamp(nn::abs(dot), S(0), S(1 - kAcosMargin))) * S(2);
}

template <typename S>
Tensor<S> quaternion_tensor(const std::vector<UnitQuaterniond>& qs) {
  Tensor<S> t({static_cast<int>(qs.size()), 4});
  for (std::size_t i = 0; i < qs.size(); ++i)
    for (int k = 0; k < 4; ++k) t[4 * i + k] = static_cast<S>(qs[i].wxyz()[k]);
  return t;
}

/// Mean over points of |T_LC^-1 * T_pred^-1 * T_init * P - P| with T_pred the
/// rotation q_pred [1, 4] (no translation).
///
/// With X = T_LC P and (A, b) = T_init T_LC^-1 the residual is
/// R_LC^T ((R_pred^T A - I) X + R_pred^T b); R_LC drops out of the norm. The
/// difference form keeps the exact cancellation at R_pred = A well conditioned.
template <typename S>
Var<S> point_loss(const PointCloud& cloud, const Var<S>& q_pred, const RigidTransformd& T_init,
                  const RigidTransformd& T_LC) {
  if (cloud.rows() == 0) throw std::invalid_argument("point_loss: empty point cloud");
  if (q_pred.size() != 4) throw nn::ShapeError("point_loss: expected one quaternion, got " + nn::shape_str(q_pred.shape()));
  const RigidTransformd rel = T_init * T_LC.inverse();
  const Eigen::Matrix3d A = rel.rotation_matrix();
  const Eigen::Vector3d b = rel.translation();
  const Eigen::Matrix3d R_lc = T_LC.rotation_matrix();
  const Eigen::Vector3d t_lc = T_LC.translation();

  const int n = static_cast<int>(cloud.rows());
  Tensor<S> X({n, 3});
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d x = R_lc * cloud.row(i).transpose().cast<double>() + t_lc;
    for (int k = 0; k < 3; ++k) X[3 * i + k] = static_cast<S>(x[k]);
  }
  Tensor<S> At({3, 3}), I3({3, 3}), bt({1, 3});
  for (int r = 0; r < 3; ++r) {
    bt[r] = static_cast<S>(b[r]);
    for (int c = 0; c < 3; ++c) {
      At[3 * r + c] = static_cast<S>(A(r, c));
      I3[3 * r + c] = r == c ? S(1) : S(0);
    }
  }
  const Var<S> R = nn::quat_to_rotmat(nn::reshape(q_pred, {4}));
  const Var<S> M = nn::matmul(nn::transpose(R), Var<S>::constant(std::move(At))) - Var<S>::constant(std::move(I3));
  const Var<S> residual =
      nn::matmul(Var<S>::constant(std::move(X)), nn::transpose(M)) + nn::matmul(Var<S>::constant(std::move(bt)), R);
  return nn::mean(nn::row_norm(residual));
}

/// Sum over i of gamma^(n - i) * L_i; the last loss has weight 1.
template <typename S>
Var<S> stage1_total(const std::vector<Var<S>>& losses, S gamma) {
  if (losses.empty()) throw std::invalid_argument("stage1_total: no losses");
  const int n = static_cast<int>(losses.size());
  Var<S> total = losses[n - 1];
  S w = S(1);
  for (int i = n - 2; i >= 0; --i) {
    w *= gamma;
    total = total + losses[i] * w;
  }
  return total;
}

}  // namespace v2xcalib::model
