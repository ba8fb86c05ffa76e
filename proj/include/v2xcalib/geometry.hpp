#pragma once

// Rotation, rigid-transform and pinhole projection math.
//
// Value types are templated on the scalar so the same code serves the 32-bit
// network path and 64-bit oracles. Aliases with a `d` / `f` suffix cover the
// common instantiations.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2xcalib {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;

/// Row-major single-channel float image, rows = height.
using ImageF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// N x 3 points in the vehicle-LiDAR frame, meters. Row-major so the buffer
/// matches the on-disk little-endian float layout.
using PointCloud = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

class GeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
constexpr Scalar deg2rad(Scalar deg) {
  return deg * std::numbers::pi_v<Scalar> / Scalar(180);
}

template <typename Scalar>
constexpr Scalar rad2deg(Scalar rad) {
  return rad * Scalar(180) / std::numbers::pi_v<Scalar>;
}

// ---------------------------------------------------------------------------
// UnitQuaternion
// ---------------------------------------------------------------------------

/// Unit quaternion (w, x, y, z). Always normalized; q and -q are the same
/// rotation, compare them with same_rotation().
template <typename Scalar>
class UnitQuaternion {
 public:
  using Quat = Eigen::Quaternion<Scalar>;

  UnitQuaternion() : q_(Quat::Identity()) {}

  UnitQuaternion(Scalar w, Scalar x, Scalar y, Scalar z) : q_(w, x, y, z) {
    const Scalar n = q_.norm();
    if (!std::isfinite(n) || n <= Scalar(0)) {
      throw GeometryError("UnitQuaternion: zero or non-finite norm");
    }
    q_.coeffs() /= n;
  }

  explicit UnitQuaternion(const Quat& q) : UnitQuaternion(q.w(), q.x(), q.y(), q.z()) {}

  static UnitQuaternion identity() { return UnitQuaternion(); }

  /// Adopts stored coefficients as-is (no rescaling) so serialized rotations
  /// read back bit-identical. Rejects anything farther than `tol` from unit norm.
  static UnitQuaternion from_stored(Scalar w, Scalar x, Scalar y, Scalar z, Scalar tol = Scalar(1e-9)) {
    UnitQuaternion r;
    r.q_ = Quat(w, x, y, z);
    const Scalar n = r.q_.norm();
    if (!std::isfinite(n) || std::abs(n - Scalar(1)) > tol) {
      throw GeometryError("UnitQuaternion::from_stored: coefficients are not a unit quaternion");
    }
    return r;
  }

  static UnitQuaternion from_axis_angle(const Vec3<Scalar>& axis, Scalar angle) {
    const Scalar n = axis.norm();
    if (!(n > Scalar(0))) {
      throw GeometryError("UnitQuaternion::from_axis_angle: zero axis");
    }
    return UnitQuaternion(Quat(Eigen::AngleAxis<Scalar>(angle, axis / n)));
  }

  static UnitQuaternion from_matrix(const Mat3<Scalar>& R) { return UnitQuaternion(Quat(R)); }

  Scalar w() const { return q_.w(); }
  Scalar x() const { return q_.x(); }
  Scalar y() const { return q_.y(); }
  Scalar z() const { return q_.z(); }

  Eigen::Matrix<Scalar, 4, 1> wxyz() const { return {q_.w(), q_.x(), q_.y(), q_.z()}; }

  const Quat& eigen() const { return q_; }
  Mat3<Scalar> matrix() const { return q_.toRotationMatrix(); }

  UnitQuaternion inverse() const {
    UnitQuaternion r;
    r.q_ = q_.conjugate();
    return r;
  }

  UnitQuaternion operator*(const UnitQuaternion& o) const {
    // Renormalize to stop drift under long compositions.
    return UnitQuaternion(Quat(q_ * o.q_));
  }

  Vec3<Scalar> rotate(const Vec3<Scalar>& p) const { return q_ * p; }

  /// Representative with w >= 0.
  UnitQuaternion canonical() const {
    UnitQuaternion r = *this;
    if (r.q_.w() < Scalar(0)) r.q_.coeffs() = -r.q_.coeffs();
    return r;
  }

  UnitQuaternion operator-() const {
    UnitQuaternion r = *this;
    r.q_.coeffs() = -r.q_.coeffs();
    return r;
  }

  template <typename T>
  UnitQuaternion<T> cast() const {
    return UnitQuaternion<T>(T(q_.w()), T(q_.x()), T(q_.y()), T(q_.z()));
  }

  bool operator==(const UnitQuaternion& o) const { return q_.coeffs() == o.q_.coeffs(); }

 private:
  Quat q_;
};

using UnitQuaterniond = UnitQuaternion<double>;
using UnitQuaternionf = UnitQuaternion<float>;

/// Rotation angle of a^-1 * b in [0, pi], computed as 2 acos(|<a,b>|).
template <typename Scalar>
Scalar angular_distance(const UnitQuaternion<Scalar>& a, const UnitQuaternion<Scalar>& b) {
  Scalar dot = std::abs(a.w() * b.w() + a.x() * b.x() + a.y() * b.y() + a.z() * b.z());
  if (dot > Scalar(1)) dot = Scalar(1);
  return Scalar(2) * std::acos(dot);
}

template <typename Scalar>
bool same_rotation(const UnitQuaternion<Scalar>& a, const UnitQuaternion<Scalar>& b, Scalar tol) {
  return angular_distance(a, b) <= tol;
}

// ---------------------------------------------------------------------------
// Euler angles: intrinsic Z-Y-X, R = Rz(yaw) * Ry(pitch) * Rx(roll).
// ---------------------------------------------------------------------------

template <typename Scalar>
struct EulerZYX {
  Scalar yaw{0};
  Scalar pitch{0};
  Scalar roll{0};
  /// Set when |pitch| is within the gimbal-lock margin; yaw and roll are then
  /// not separately identifiable and roll is reported as 0.
  bool gimbal_lock{false};
};

template <typename Scalar>
UnitQuaternion<Scalar> from_euler_zyx(Scalar yaw, Scalar pitch, Scalar roll) {
  using AA = Eigen::AngleAxis<Scalar>;
  const Eigen::Quaternion<Scalar> q = AA(yaw, Vec3<Scalar>::UnitZ()) *
                                      AA(pitch, Vec3<Scalar>::UnitY()) *
                                      AA(roll, Vec3<Scalar>::UnitX());
  return UnitQuaternion<Scalar>(q);
}

template <typename Scalar>
EulerZYX<Scalar> to_euler_zyx(const UnitQuaternion<Scalar>& q, Scalar lock_margin = Scalar(1e-6)) {
  const Mat3<Scalar> R = q.matrix();
  EulerZYX<Scalar> e;
  const Scalar s = std::clamp(-R(2, 0), Scalar(-1), Scalar(1));
  e.pitch = std::asin(s);
  if (std::abs(std::abs(e.pitch) - std::numbers::pi_v<Scalar> / 2) < lock_margin) {
    e.gimbal_lock = true;
    e.roll = Scalar(0);
    e.yaw = std::atan2(-R(0, 1), R(1, 1));
    return e;
  }
  e.yaw = std::atan2(R(1, 0), R(0, 0));
  e.roll = std::atan2(R(2, 1), R(2, 2));
  return e;
}

// ---------------------------------------------------------------------------
// RigidTransform
// ---------------------------------------------------------------------------

/// p' = R p + t. Composition a * b applies b first.
template <typename Scalar>
class RigidTransform {
 public:
  RigidTransform() : translation_(Vec3<Scalar>::Zero()) {}
  RigidTransform(const UnitQuaternion<Scalar>& r, const Vec3<Scalar>& t) : rotation_(r), translation_(t) {
    if (!t.allFinite()) throw GeometryError("RigidTransform: non-finite translation");
  }
  explicit RigidTransform(const UnitQuaternion<Scalar>& r) : rotation_(r), translation_(Vec3<Scalar>::Zero()) {}

  static RigidTransform identity() { return RigidTransform(); }

  const UnitQuaternion<Scalar>& rotation() const { return rotation_; }
  const Vec3<Scalar>& translation() const { return translation_; }
  Mat3<Scalar> rotation_matrix() const { return rotation_.matrix(); }

  Mat4<Scalar> matrix() const {
    Mat4<Scalar> m = Mat4<Scalar>::Identity();
    m.template topLeftCorner<3, 3>() = rotation_.matrix();
    m.template topRightCorner<3, 1>() = translation_;
    return m;
  }

  RigidTransform operator*(const RigidTransform& o) const {
    return RigidTransform(rotation_ * o.rotation_, rotation_.rotate(o.translation_) + translation_);
  }

  RigidTransform inverse() const {
    const UnitQuaternion<Scalar> ri = rotation_.inverse();
    return RigidTransform(ri, -ri.rotate(translation_));
  }

  Vec3<Scalar> apply(const Vec3<Scalar>& p) const { return rotation_.rotate(p) + translation_; }

  template <typename T>
  RigidTransform<T> cast() const {
    return RigidTransform<T>(rotation_.template cast<T>(), translation_.template cast<T>());
  }

  bool operator==(const RigidTransform& o) const {
    return rotation_ == o.rotation_ && translation_ == o.translation_;
  }

 private:
  UnitQuaternion<Scalar> rotation_;
  Vec3<Scalar> translation_;
};

using RigidTransformd = RigidTransform<double>;
using RigidTransformf = RigidTransform<float>;

/// Applies T to every row of the cloud.
inline PointCloud transform_cloud(const PointCloud& cloud, const RigidTransformd& T) {
  const Eigen::Matrix3f R = T.rotation_matrix().cast<float>();
  const Eigen::RowVector3f t = T.translation().cast<float>().transpose();
  PointCloud out = (cloud * R.transpose()).rowwise() + t;
  return out;
}

// ---------------------------------------------------------------------------
// Pinhole camera
// ---------------------------------------------------------------------------

template <typename Scalar>
class CameraModel {
 public:
  CameraModel(Scalar fx, Scalar fy, Scalar cx, Scalar cy, int width, int height)
      : fx_(fx), fy_(fy), cx_(cx), cy_(cy), width_(width), height_(height) {
    if (!(fx > 0) || !(fy > 0)) throw GeometryError("CameraModel: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw GeometryError("CameraModel: image size must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height)) {
      throw GeometryError("CameraModel: principal point outside image");
    }
  }

  /// Symmetric camera with the given horizontal field of view.
  static CameraModel from_hfov(Scalar hfov_deg, int width, int height) {
    const Scalar f = Scalar(width) / (Scalar(2) * std::tan(deg2rad(hfov_deg) / Scalar(2)));
    return CameraModel(f, f, Scalar(width) / 2, Scalar(height) / 2, width, height);
  }

  Scalar fx() const { return fx_; }
  Scalar fy() const { return fy_; }
  Scalar cx() const { return cx_; }
  Scalar cy() const { return cy_; }
  int width() const { return width_; }
  int height() const { return height_; }

  Mat3<Scalar> K() const {
    Mat3<Scalar> k;
    k << fx_, 0, cx_, 0, fy_, cy_, 0, 0, 1;
    return k;
  }

  /// Pixel-center convention: pixel (r, c) covers [c - 0.5, c + 0.5) horizontally.
  bool in_bounds(Scalar u, Scalar v) const {
    const auto col = static_cast<long>(std::floor(u + Scalar(0.5)));
    const auto row = static_cast<long>(std::floor(v + Scalar(0.5)));
    return col >= 0 && col < width_ && row >= 0 && row < height_;
  }

  Vec3<Scalar> unproject(Scalar u, Scalar v, Scalar d) const {
    return {(u - cx_) / fx_ * d, (v - cy_) / fy_ * d, d};
  }

  template <typename T>
  CameraModel<T> cast() const {
    return CameraModel<T>(T(fx_), T(fy_), T(cx_), T(cy_), width_, height_);
  }

  bool operator==(const CameraModel&) const = default;

 private:
  Scalar fx_, fy_, cx_, cy_;
  int width_, height_;
};

using CameraModeld = CameraModel<double>;

struct ProjectedPoint {
  double u;
  double v;
  double d;
  std::size_t index;  // row in the source cloud
};

/// Projects LiDAR points (rows of an N x 3 matrix of any scalar) through
/// `extrinsic` (LiDAR -> camera) and K. Points behind the camera or outside
/// the image are dropped.
template <typename Derived>
std::vector<ProjectedPoint> project_points(const Eigen::MatrixBase<Derived>& cloud, const RigidTransformd& extrinsic,
                                           const CameraModeld& cam) {
  static_assert(Derived::ColsAtCompileTime == 3 || Derived::ColsAtCompileTime == Eigen::Dynamic);
  std::vector<ProjectedPoint> out;
  out.reserve(static_cast<std::size_t>(cloud.rows()));
  const Eigen::Matrix3d R = extrinsic.rotation_matrix();
  const Eigen::Vector3d& t = extrinsic.translation();
  for (Eigen::Index i = 0; i < cloud.rows(); ++i) {
    const Eigen::Vector3d p = R * cloud.row(i).transpose().template cast<double>() + t;
    if (!(p.z() > 0.0)) continue;
    const double u = cam.fx() * p.x() / p.z() + cam.cx();
    const double v = cam.fy() * p.y() / p.z() + cam.cy();
    if (!cam.in_bounds(u, v)) continue;
    out.push_back({u, v, p.z(), static_cast<std::size_t>(i)});
  }
  return out;
}

/// Sparse z-buffered depth image, depth / max_range clamped to (0, 1], 0 where
/// nothing projects.
ImageF render_depth_map(const PointCloud& cloud, const RigidTransformd& extrinsic, const CameraModeld& cam,
                        double max_range = 80.0);

/// Rotation-only perturbation with yaw, pitch and roll each uniform in
/// (-range_deg, range_deg).
RigidTransformd sample_rotation_perturbation(double range_deg, std::mt19937_64& rng);
RigidTransformd sample_rotation_perturbation(double range_deg, std::uint64_t seed);

}  // namespace v2xcalib
