#include "v2xcalib/pipeline/overlay.hpp"

#include "v2xcalib/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace v2xcalib::pipeline {

std::array<std::uint8_t, 3> depth_colour(double depth, double max_depth) {
  const double t = std::clamp(depth / max_depth, 0.0, 1.0);
  // red -> yellow -> green -> cyan -> blue
  const double h = 4.0 * t;
  double r = 0, g = 0, b = 0;
  if (h < 1) {
    r = 1, g = h;
  } else if (h < 2) {
    r = 2 - h, g = 1;
  } else if (h < 3) {
    g = 1, b = h - 2;
  } else {
    g = 4 - h, b = 1;
  }
  auto byte = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
  return {byte(r), byte(g), byte(b)};
}

RgbImage render_overlay(const Frame& frame, const RigidTransformd& extrinsic, const CameraModeld& cam,
                        double max_depth) {
  if (frame.image.rows() != cam.height() || frame.image.cols() != cam.width()) {
    throw SizeMismatchError("overlay: image size does not match the camera");
  }
  RgbImage out(cam.width(), cam.height());
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto g = static_cast<std::uint8_t>(std::lround(std::clamp(frame.image(y, x), 0.0f, 1.0f) * 255.0f));
      std::uint8_t* p = out.at(x, y);
      p[0] = p[1] = p[2] = g;
    }
  }
  auto pts = project_points(frame.points, extrinsic, cam);
  std::sort(pts.begin(), pts.end(), [](const ProjectedPoint& a, const ProjectedPoint& b) { return a.d > b.d; });
  for (const auto& p : pts) {
    const int x = std::clamp(static_cast<int>(std::lround(p.u)), 0, out.width - 1);
    const int y = std::clamp(static_cast<int>(std::lround(p.v)), 0, out.height - 1);
    const auto c = depth_colour(p.d, max_depth);
    std::copy(c.begin(), c.end(), out.at(x, y));
  }
  return out;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw DatasetError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DatasetError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DatasetError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) png_write_row(png, image.at(0, y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_pgm(const std::filesystem::path& path, const RgbImage& image) {
  ImageF luma(image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.at(x, y);
      luma(y, x) = static_cast<float>((0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0);
    }
  }
  v2xcalib::write_pgm(path, luma);
}

}  // namespace v2xcalib::pipeline
