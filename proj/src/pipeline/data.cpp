#include "v2xcalib/pipeline/data.hpp"

#include <string>

namespace v2xcalib::pipeline {

InputBatch make_batch(const std::vector<const Frame*>& frames, const std::vector<RigidTransformd>& extrinsics,
                      const CameraModeld& cam, double max_depth) {
  if (frames.size() != extrinsics.size()) throw std::invalid_argument("make_batch: one extrinsic per frame");
  if (!(max_depth > 0)) throw std::invalid_argument("make_batch: max_depth must be positive");
  const int n = static_cast<int>(frames.size()), H = cam.height(), W = cam.width();
  InputBatch b{nn::Tensor<float>({n, 1, H, W}), nn::Tensor<float>({n, 1, H, W})};
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int i = 0; i < n; ++i) {
    const Frame& f = *frames[i];
    if (f.image.rows() != H || f.image.cols() != W) {
      throw DatasetError("frame image is " + std::to_string(f.image.cols()) + "x" + std::to_string(f.image.rows()) +
                         ", camera expects " + std::to_string(W) + "x" + std::to_string(H));
    }
    Eigen::Map<ImageF> img(b.image.data() + i * plane, H, W);
    Eigen::Map<ImageF> dep(b.depth.data() + i * plane, H, W);
    img = f.image.array() * 2.0f - 1.0f;
    dep = render_depth_map(f.points, extrinsics[i], cam, max_depth);
  }
  return b;
}

std::vector<int> frames_within(const FrameSequence& seq, double max_distance) {
  std::vector<int> out;
  for (std::size_t i = 0; i < seq.frames.size(); ++i)
    if (seq.frames[i].distance < max_distance) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace v2xcalib::pipeline
