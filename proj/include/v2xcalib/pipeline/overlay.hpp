#pragma once

// Reprojection overlays: LiDAR points drawn over the camera image through a
// given extrinsic, coloured by depth.

#include "v2xcalib/scenesim.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace v2xcalib::pipeline {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}
  std::uint8_t* at(int x, int y) { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
};

/// Near points red, far points blue; depth is clamped to [0, max_depth].
std::array<std::uint8_t, 3> depth_colour(double depth, double max_depth);

/// The grey camera image with every projected point as one coloured pixel,
/// nearer points drawn last.
RgbImage render_overlay(const Frame& frame, const RigidTransformd& extrinsic, const CameraModeld& cam,
                        double max_depth);

void write_png(const std::filesystem::path& path, const RgbImage& image);
/// Luma only.
void write_pgm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace v2xcalib::pipeline
