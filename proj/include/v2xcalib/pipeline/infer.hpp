#pragma once

// Chained inference and evaluation. A chain of predictors is applied in
// order; after each stage the depth maps are re-rendered through the
// corrected extrinsic, and the estimate is (T_0 T_1 ... T_k)^-1 T_init.

#include "v2xcalib/pipeline/train.hpp"

#include <memory>
#include <string>
#include <vector>

namespace v2xcalib::pipeline {

class Predictor {
 public:
  virtual ~Predictor() = default;
  /// Rotation D with current[j] ~ D * T_LC for each selected frame j.
  virtual UnitQuaterniond predict(const FrameSequence& seq, const std::vector<int>& frames,
                                  const std::vector<RigidTransformd>& current) const = 0;
  virtual std::string name() const = 0;
};

/// Runs a trained network. With `use_temporal` the temporal head sees up to
/// max_frames of the selected frames; otherwise the stage-1 head reads the
/// last iteration's flow of the last selected frame.
class NetworkPredictor : public Predictor {
 public:
  NetworkPredictor(std::shared_ptr<const Net> net, bool use_temporal, double max_depth, std::string label = "network");
  UnitQuaterniond predict(const FrameSequence& seq, const std::vector<int>& frames,
                          const std::vector<RigidTransformd>& current) const override;
  std::string name() const override { return label_; }

 private:
  std::shared_ptr<const Net> net_;
  bool use_temporal_;
  double max_depth_;
  std::string label_;
};

/// Predicts no rotation.
class IdentityPredictor : public Predictor {
 public:
  UnitQuaterniond predict(const FrameSequence&, const std::vector<int>&,
                          const std::vector<RigidTransformd>&) const override {
    return UnitQuaterniond::identity();
  }
  std::string name() const override { return "identity"; }
};

struct CalibrationResult {
  UnitQuaterniond correction;             // T_0 T_1 ... T_k
  std::vector<UnitQuaterniond> stages;    // T_i per stage
  std::vector<RigidTransformd> estimates;  // corrected extrinsic per selected frame
};

/// Throws NumericError naming the stage if a predictor returns a non-finite
/// or degenerate rotation.
CalibrationResult calibrate(const FrameSequence& seq, const std::vector<int>& frames,
                            const std::vector<const Predictor*>& chain);

struct ErrorStats {
  double mean = 0;
  double std = 0;  // population
};

struct AxisErrors {
  ErrorStats total, roll, pitch, yaw;
};

struct EvalRecord {
  std::string name;
  int frames = 0;
  double error_deg = 0;
  double roll_deg = 0, pitch_deg = 0, yaw_deg = 0;
  double baseline_deg = 0;  // identity prediction
};

struct EvalBlock {
  double threshold = 0;  // metres
  int sequences = 0;     // evaluated
  int skipped = 0;       // no frame below the threshold
  AxisErrors model;
  AxisErrors baseline;
  std::vector<EvalRecord> records;
};

struct EvalReport {
  std::vector<std::string> chain;
  std::vector<EvalBlock> blocks;  // one per threshold, in the order given
};

ErrorStats error_stats(const std::vector<double>& xs);

/// Errors are the angle of R_est R_LC^T and the absolute Euler (Z-Y-X) angles
/// of that rotation, in degrees.
EvalReport evaluate(const std::vector<FrameSequence>& data, const std::vector<const Predictor*>& chain,
                    const std::vector<double>& thresholds);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

}  // namespace v2xcalib::pipeline
