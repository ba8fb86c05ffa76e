#pragma once

// Synthetic roadside scenes: a ground plane, axis-aligned boxes, a pitched-down
// roadside camera and an ego vehicle driving along the road (world x axis,
// z up). The vehicle carries a spinning LiDAR; the camera is rendered by ray
// casting the same geometry, so both sensors agree by construction.

#include "v2xcalib/geometry.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace v2xcalib {

class SceneError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Box {
  Eigen::Vector3d min;
  Eigen::Vector3d max;
  double albedo = 0.5;
};

struct SceneConfig {
  int num_boxes = 6;
  int frames = 4;
  double camera_height_min = 6.0;
  double camera_height_max = 10.0;
  double camera_lateral_min = 6.0;  // camera offset from the road centre line
  double camera_lateral_max = 10.0;
  double aim_distance_min = 20.0;  // where the optical axis meets the road
  double aim_distance_max = 35.0;
  double trajectory_near = 5.0;  // along-road extent of vehicle positions
  double trajectory_far = 75.0;
  double speed_min = 2.0;  // metres per frame
  double speed_max = 6.0;
  double frame_dt = 0.1;  // seconds
  double lidar_height = 1.8;
  double ground_albedo = 0.35;

  void validate() const;
};

struct LidarConfig {
  int rows = 32;
  int cols = 180;
  double elevation_min_deg = -25.0;
  double elevation_max_deg = 5.0;
  double max_range = 80.0;
  double range_jitter = 0.0;  // std of additive Gaussian range noise, metres

  void validate() const;
};

struct Scene {
  double ground_albedo = 0.35;
  std::vector<Box> boxes;
  RigidTransformd camera_pose;              // camera -> world
  std::vector<RigidTransformd> trajectory;  // LiDAR -> world, one per frame
  std::vector<double> timestamps;
};

Scene generate_scene(const SceneConfig& config, std::uint64_t seed);

/// Camera -> world pose at `position` whose optical axis points at `target`.
/// Camera axes: x right, y down, z forward.
RigidTransformd look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target);

struct RayHit {
  double distance;  // along the unit direction
  double albedo;
  Eigen::Vector3d normal;
};

/// Nearest intersection with the ground or any box within (0, max_range].
std::optional<RayHit> cast_ray(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                               double max_range);

/// Points in the LiDAR frame (x forward, y left, z up). `rng` is only drawn
/// from when range jitter is enabled.
PointCloud simulate_lidar(const Scene& scene, const RigidTransformd& lidar_pose, const LidarConfig& lidar,
                          std::mt19937_64* rng = nullptr);

struct CameraRender {
  ImageF intensity;  // [0, 1], sky = 1
  ImageF depth;      // camera-frame z of the hit, 0 for sky
};

inline constexpr double kShadingRange = 120.0;

CameraRender render_camera(const Scene& scene, const CameraModeld& cam, const RigidTransformd& camera_pose);
ImageF simulate_camera(const Scene& scene, const CameraModeld& cam, const RigidTransformd& camera_pose);

/// Body of the ego vehicle at a LiDAR pose. The LiDAR never sees it; the
/// roadside camera does.
Box ego_box(const RigidTransformd& lidar_pose);

/// Horizontal (x, y) distance between two poses' origins.
double horizontal_distance(const RigidTransformd& a, const RigidTransformd& b);

struct Frame {
  PointCloud points;  // LiDAR frame
  ImageF image;       // grayscale, quantized to multiples of 1/255
  RigidTransformd T_LC;
  RigidTransformd T_init;  // delta * T_LC
  double distance = 0.0;   // horizontal vehicle-camera distance, metres
};

struct FrameSequence {
  std::string name;
  CameraModeld camera{1, 1, 0, 0, 1, 1};
  RigidTransformd delta;  // injected rotation-only miscalibration
  std::vector<Frame> frames;
};

FrameSequence build_sequence(const Scene& scene, const CameraModeld& cam, const LidarConfig& lidar,
                             double perturb_range_deg, std::uint64_t seed);

struct SimConfig {
  SceneConfig scene;
  LidarConfig lidar;
  int image_width = 256;
  int image_height = 128;
  double hfov_deg = 90.0;
  double perturb_range_deg = 10.0;

  CameraModeld camera() const { return CameraModeld::from_hfov(hfov_deg, image_width, image_height); }
  void validate() const;
};

/// Independent RNG stream for sequence `index` under `master_seed`.
std::uint64_t sequence_seed(std::uint64_t master_seed, std::uint64_t index);

FrameSequence generate_sequence(const SimConfig& config, std::uint64_t master_seed, std::uint64_t index);

}  // namespace v2xcalib
