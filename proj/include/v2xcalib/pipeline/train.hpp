#pragma once

// Two-stage training. Stage 1 trains everything in front of the temporal
// module on independent frames with the iteration-weighted loss; stage 2
// trains the temporal module on sequences, first with that prefix frozen and
// then jointly.

#include "v2xcalib/pipeline/config.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace v2xcalib::pipeline {

using Net = model::CalibNet<float>;

struct EpochRecord {
  int stage = 1;
  char phase = 'B';  // 'A' = prefix frozen
  int epoch = 0;
  long steps = 0;  // optimizer steps so far
  double loss = 0;
  double rotation = 0;  // rotation term of the final estimate
  double point = 0;     // point term of the final estimate
  double lr = 0;
  double wall_s = 0;
  double train_mean_deg = 0;  // angular error of the final estimate, before the update
  int samples = 0;
};

/// Called after every epoch; returning false ends training there.
using EpochCallback = std::function<bool(const EpochRecord&)>;

struct TrainResult {
  std::vector<EpochRecord> epochs;
  long steps = 0;
};

/// Stage 1 over every frame of `data` below cfg.max_distance.
TrainResult train_stage1(Net& net, const std::vector<FrameSequence>& data, const TrainConfig& cfg,
                         const model::LossConfig& loss, double max_depth, const EpochCallback& on_epoch = {});

/// Stage 2 with one rotation per sequence over up to frames_per_sequence
/// frames below cfg.max_distance; sequences with no such frame are skipped.
TrainResult train_stage2(Net& net, const std::vector<FrameSequence>& data, const TrainConfig& cfg,
                         const model::LossConfig& loss, double max_depth, const EpochCallback& on_epoch = {});

nlohmann::json to_json(const EpochRecord& r);

/// Checkpoint metadata: the model config needed to rebuild the network, the
/// stage that produced it (2 means the temporal head is trained) and the
/// perturbation range it was trained for.
struct ModelMeta {
  int stage = 1;
  double perturb_deg = 10.0;
  double max_depth = 80.0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_model(const std::filesystem::path& path, const Net& net, const ModelMeta& meta);

struct LoadedModel {
  Net net;
  ModelMeta meta;
};

LoadedModel load_model(const std::filesystem::path& path);

}  // namespace v2xcalib::pipeline
