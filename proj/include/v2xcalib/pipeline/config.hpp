#pragma once

// Run configuration: simulation, model, loss, the two training stages,
// chained inference and evaluation. Files are key = value with [section] and
// [section.sub] headers, '#' comments and [a, b] lists.

#include "v2xcalib/model/calibnet.hpp"
#include "v2xcalib/model/loss.hpp"
#include "v2xcalib/scenesim.hpp"

#include "json.hpp"

#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2xcalib::pipeline {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int stage = 1;
  double lr = 3e-5;
  int decay_every = 20;  // epochs
  double decay_factor = 0.5;
  int epochs = 70;
  int max_steps = 0;  // optimizer steps; 0 = no cap
  int batch_size = 4;
  double perturb_deg = 10.0;
  double max_distance = std::numeric_limits<double>::infinity();  // metres, frames at or beyond are dropped
  int freeze_epochs = 0;        // stage 2: epochs with the prefix frozen
  int frames_per_sequence = 4;  // stage 2: T
  bool online_perturbation = true;
  double grad_clip = 10.0;  // 0 disables
  std::uint64_t seed = 1;

  void validate() const;
};

struct CalibrateConfig {
  std::vector<double> ranges_deg{20.0, 5.0};  // coarse to fine
};

struct EvalConfig {
  std::vector<double> thresholds{30.0, 50.0, 80.0};
};

struct PipelineConfig {
  SimConfig sim;
  model::ModelConfig model;
  model::LossConfig loss;
  TrainConfig stage1;
  TrainConfig stage2;
  CalibrateConfig calibrate;
  EvalConfig eval;

  PipelineConfig();
  void validate() const;
};

/// Parses config text over the defaults. Unknown keys and malformed values
/// raise ConfigError naming the key.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const PipelineConfig& c);

}  // namespace v2xcalib::pipeline
