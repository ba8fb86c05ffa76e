#include "v2xcalib/geometry.hpp"

namespace v2xcalib {

ImageF render_depth_map(const PointCloud& cloud, const RigidTransformd& extrinsic, const CameraModeld& cam,
                        double max_range) {
  if (!(max_range > 0.0)) throw GeometryError("render_depth_map: max_range must be positive");
  ImageF depth = ImageF::Zero(cam.height(), cam.width());
  for (const ProjectedPoint& p : project_points(cloud, extrinsic, cam)) {
    const auto col = static_cast<Eigen::Index>(std::floor(p.u + 0.5));
    const auto row = static_cast<Eigen::Index>(std::floor(p.v + 0.5));
    const float value = static_cast<float>(std::min(p.d / max_range, 1.0));
    float& cell = depth(row, col);
    if (cell == 0.0f || value < cell) cell = value;
  }
  return depth;
}

RigidTransformd sample_rotation_perturbation(double range_deg, std::mt19937_64& rng) {
  if (!std::isfinite(range_deg) || range_deg < 0.0) {
    throw GeometryError("sample_rotation_perturbation: range must be finite and non-negative");
  }
  if (range_deg == 0.0) return RigidTransformd::identity();
  const double r = deg2rad(range_deg);
  std::uniform_real_distribution<double> dist(-r, r);
  const double yaw = dist(rng);
  const double pitch = dist(rng);
  const double roll = dist(rng);
  return RigidTransformd(from_euler_zyx(yaw, pitch, roll));
}

RigidTransformd sample_rotation_perturbation(double range_deg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_rotation_perturbation(range_deg, rng);
}

}  // namespace v2xcalib
