#include "v2xcalib/scenesim.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace v2xcalib {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw SceneError(what);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Slab test. Rays starting inside a box do not hit it.
std::optional<RayHit> intersect_box(const Box& b, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < b.min[a] || o[a] > b.max[a]) return std::nullopt;
      continue;
    }
    double t1 = (b.min[a] - o[a]) / d[a];
    double t2 = (b.max[a] - o[a]) / d[a];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > t_enter) {
      t_enter = t1;
      axis = a;
    }
    t_exit = std::min(t_exit, t2);
  }
  if (axis < 0 || t_enter > t_exit || t_enter <= 0.0) return std::nullopt;
  Eigen::Vector3d n = Eigen::Vector3d::Zero();
  n[axis] = d[axis] > 0 ? -1.0 : 1.0;
  return RayHit{t_enter, b.albedo, n};
}

double face_factor(const Eigen::Vector3d& n) {
  if (std::abs(n.z()) > 0.5) return 1.0;
  if (std::abs(n.x()) > 0.5) return 0.75;
  return 0.55;
}

}  // namespace

void SceneConfig::validate() const {
  require(num_boxes >= 0, "scene: num_boxes must be >= 0");
  require(frames >= 1, "scene: trajectory needs at least one frame");
  require(camera_height_min > 0 && camera_height_min <= camera_height_max, "scene: bad camera height range");
  require(camera_lateral_min >= 0 && camera_lateral_min <= camera_lateral_max, "scene: bad camera lateral range");
  require(aim_distance_min > 0 && aim_distance_min <= aim_distance_max, "scene: bad aim distance range");
  require(trajectory_near >= 0 && trajectory_near < trajectory_far, "scene: bad trajectory extent");
  require(speed_min >= 0 && speed_min <= speed_max, "scene: bad speed range");
  require(frame_dt > 0, "scene: frame_dt must be positive");
  require(lidar_height > 0, "scene: lidar_height must be positive");
  require(ground_albedo >= 0 && ground_albedo <= 1, "scene: ground albedo outside [0, 1]");
}

void LidarConfig::validate() const {
  require(rows >= 1 && cols >= 1, "lidar: ray grid must be non-empty");
  require(elevation_min_deg <= elevation_max_deg, "lidar: bad elevation range");
  require(elevation_min_deg > -90 && elevation_max_deg < 90, "lidar: elevations must lie in (-90, 90)");
  require(max_range > 0, "lidar: max_range must be positive");
  require(range_jitter >= 0, "lidar: range_jitter must be >= 0");
}

void SimConfig::validate() const {
  scene.validate();
  lidar.validate();
  require(image_width > 0 && image_height > 0, "sim: image size must be positive");
  require(hfov_deg > 0 && hfov_deg < 180, "sim: hfov must lie in (0, 180)");
  require(std::isfinite(perturb_range_deg) && perturb_range_deg >= 0, "sim: perturbation range must be >= 0");
}

RigidTransformd look_at(const Eigen::Vector3d& position, const Eigen::Vector3d& target) {
  const Eigen::Vector3d f = (target - position).normalized();
  const Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d right_raw = f.cross(up);
  require(right_raw.norm() > 1e-9, "look_at: viewing direction parallel to up");
  const Eigen::Vector3d right = right_raw.normalized();
  const Eigen::Vector3d down = f.cross(right);
  Eigen::Matrix3d R;
  R.col(0) = right;
  R.col(1) = down;
  R.col(2) = f;
  return RigidTransformd(UnitQuaterniond::from_matrix(R), position);
}

Scene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Scene s;
  s.ground_albedo = config.ground_albedo;

  const double h = uniform(rng, config.camera_height_min, config.camera_height_max);
  const double lateral = uniform(rng, config.camera_lateral_min, config.camera_lateral_max);
  const double aim = uniform(rng, config.aim_distance_min, config.aim_distance_max);
  s.camera_pose = look_at({0.0, -lateral, h}, {aim, 0.0, 0.0});

  const double lane = std::bernoulli_distribution(0.5)(rng) ? 1.75 : -1.75;
  const double near = config.trajectory_near, far = config.trajectory_far;
  const double x0 = uniform(rng, near, far);
  const double speed = uniform(rng, config.speed_min, config.speed_max);
  double dir = x0 > 0.5 * (near + far) ? -1.0 : 1.0;
  double x = x0;
  for (int i = 0; i < config.frames; ++i) {
    const UnitQuaterniond heading =
        dir > 0 ? UnitQuaterniond() : UnitQuaterniond::from_axis_angle(Eigen::Vector3d::UnitZ(), std::numbers::pi);
    s.trajectory.emplace_back(heading, Eigen::Vector3d(x, lane, config.lidar_height));
    s.timestamps.push_back(i * config.frame_dt);
    double next = x + dir * speed;
    if (next < near || next > far) {  // turn around at the ends of the stretch
      dir = -dir;
      next = x + dir * speed;
    }
    x = std::clamp(next, near, far);
  }

  for (int k = 0; k < config.num_boxes; ++k) {
    const double side = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
    Eigen::Vector3d size, centre;
    if (std::bernoulli_distribution(0.5)(rng)) {  // parked car
      size << uniform(rng, 3.8, 4.8), uniform(rng, 1.7, 2.0), uniform(rng, 1.4, 1.8);
      centre << uniform(rng, near, far), side * uniform(rng, 4.5, 6.5), 0.0;
    } else {  // building
      size << uniform(rng, 6.0, 18.0), uniform(rng, 5.0, 12.0), uniform(rng, 4.0, 14.0);
      centre << uniform(rng, near + 5.0, far + 10.0), side * (uniform(rng, 11.0, 18.0) + 0.5 * size.y()), 0.0;
    }
    Box b;
    b.min = centre - 0.5 * Eigen::Vector3d(size.x(), size.y(), 0.0);
    b.max = b.min + size;
    b.min.z() = 0.0;
    b.albedo = uniform(rng, 0.1, 0.9);
    s.boxes.push_back(b);
  }
  return s;
}

std::optional<RayHit> cast_ray(const Scene& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                               double max_range) {
  std::optional<RayHit> best;
  if (dir.z() < 0.0 && origin.z() > 0.0) {
    best = RayHit{-origin.z() / dir.z(), scene.ground_albedo, Eigen::Vector3d::UnitZ()};
  }
  for (const Box& b : scene.boxes) {
    auto hit = intersect_box(b, origin, dir);
    if (hit && (!best || hit->distance < best->distance)) best = hit;
  }
  if (best && best->distance > max_range) return std::nullopt;
  return best;
}

PointCloud simulate_lidar(const Scene& scene, const RigidTransformd& lidar_pose, const LidarConfig& lidar,
                          std::mt19937_64* rng) {
  lidar.validate();
  const Eigen::Matrix3d R = lidar_pose.rotation_matrix();
  const Eigen::Vector3d origin = lidar_pose.translation();
  std::normal_distribution<double> noise(0.0, lidar.range_jitter);
  std::vector<Eigen::Vector3f> pts;
  pts.reserve(static_cast<std::size_t>(lidar.rows) * lidar.cols);
  for (int r = 0; r < lidar.rows; ++r) {
    const double e = deg2rad(lidar.rows == 1 ? lidar.elevation_min_deg
                                             : lidar.elevation_min_deg + (lidar.elevation_max_deg - lidar.elevation_min_deg) *
                                                                             r / (lidar.rows - 1));
    for (int c = 0; c < lidar.cols; ++c) {
      const double a = 2.0 * std::numbers::pi * c / lidar.cols - std::numbers::pi;
      const Eigen::Vector3d d_local(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));
      const auto hit = cast_ray(scene, origin, R * d_local, lidar.max_range);
      if (!hit) continue;
      double range = hit->distance;
      if (lidar.range_jitter > 0.0 && rng) range += noise(*rng);
      pts.push_back((d_local * range).cast<float>());
    }
  }
  PointCloud cloud(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) cloud.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return cloud;
}

CameraRender render_camera(const Scene& scene, const CameraModeld& cam, const RigidTransformd& camera_pose) {
  const Eigen::Matrix3d R = camera_pose.rotation_matrix();
  const Eigen::Vector3d origin = camera_pose.translation();
  CameraRender out{ImageF::Ones(cam.height(), cam.width()), ImageF::Zero(cam.height(), cam.width())};
  for (int r = 0; r < cam.height(); ++r) {
    for (int c = 0; c < cam.width(); ++c) {
      const Eigen::Vector3d d_cam((c - cam.cx()) / cam.fx(), (r - cam.cy()) / cam.fy(), 1.0);
      const double len = d_cam.norm();
      const auto hit = cast_ray(scene, origin, R * (d_cam / len), std::numeric_limits<double>::infinity());
      if (!hit) continue;
      const double atten = 1.0 - 0.6 * std::min(hit->distance / kShadingRange, 1.0);
      out.intensity(r, c) = static_cast<float>(hit->albedo * face_factor(hit->normal) * atten);
      out.depth(r, c) = static_cast<float>(hit->distance / len);
    }
  }
  return out;
}

ImageF simulate_camera(const Scene& scene, const CameraModeld& cam, const RigidTransformd& camera_pose) {
  return render_camera(scene, cam, camera_pose).intensity;
}

Box ego_box(const RigidTransformd& lidar_pose) {
  const Eigen::Vector3d& p = lidar_pose.translation();
  const Eigen::Vector3d fwd = lidar_pose.rotation().rotate(Eigen::Vector3d::UnitX());
  const bool along_x = std::abs(fwd.x()) >= std::abs(fwd.y());
  const double hx = along_x ? 2.25 : 0.95, hy = along_x ? 0.95 : 2.25;
  return Box{{p.x() - hx, p.y() - hy, 0.0}, {p.x() + hx, p.y() + hy, 1.6}, 0.8};
}

double horizontal_distance(const RigidTransformd& a, const RigidTransformd& b) {
  return (a.translation().head<2>() - b.translation().head<2>()).norm();
}

FrameSequence build_sequence(const Scene& scene, const CameraModeld& cam, const LidarConfig& lidar,
                             double perturb_range_deg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FrameSequence seq;
  seq.camera = cam;
  seq.delta = sample_rotation_perturbation(perturb_range_deg, rng);
  const RigidTransformd cam_from_world = scene.camera_pose.inverse();
  for (const RigidTransformd& pose : scene.trajectory) {
    Frame f;
    f.T_LC = cam_from_world * pose;
    f.T_init = seq.delta * f.T_LC;
    f.distance = horizontal_distance(pose, scene.camera_pose);
    f.points = simulate_lidar(scene, pose, lidar, &rng);
    Scene with_ego = scene;
    with_ego.boxes.push_back(ego_box(pose));
    f.image = (simulate_camera(with_ego, cam, scene.camera_pose).array() * 255.0f).round() / 255.0f;
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

std::uint64_t sequence_seed(std::uint64_t master_seed, std::uint64_t index) {
  std::seed_seq ss{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                   static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t out[2];
  ss.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

FrameSequence generate_sequence(const SimConfig& config, std::uint64_t master_seed, std::uint64_t index) {
  config.validate();
  const std::uint64_t seed = sequence_seed(master_seed, index);
  const Scene scene = generate_scene(config.scene, seed);
  FrameSequence seq = build_sequence(scene, config.camera(), config.lidar, config.perturb_range_deg,
                                     sequence_seed(seed, 1));
  char name[32];
  std::snprintf(name, sizeof(name), "seq_%05llu", static_cast<unsigned long long>(index));
  seq.name = name;
  return seq;
}

}  // namespace v2xcalib
