#pragma once

// Network inputs from dataset frames: the camera image mapped to [-1, 1] and
// the LiDAR depth map rendered through a given extrinsic, scaled by the
// LiDAR range.

#include "v2xcalib/dataset.hpp"
#include "v2xcalib/nn/tensor.hpp"
#include "v2xcalib/scenesim.hpp"

#include <vector>

namespace v2xcalib::pipeline {

struct InputBatch {
  nn::Tensor<float> image;  // [N, 1, H, W]
  nn::Tensor<float> depth;  // [N, 1, H, W]
};

/// One frame through extrinsic `T` per batch item. Every frame's image must
/// match the camera size.
InputBatch make_batch(const std::vector<const Frame*>& frames, const std::vector<RigidTransformd>& extrinsics,
                      const CameraModeld& cam, double max_depth);

/// Indices of frames strictly closer than `max_distance` metres, in order.
std::vector<int> frames_within(const FrameSequence& seq, double max_distance);

}  // namespace v2xcalib::pipeline
