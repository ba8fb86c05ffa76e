#include "v2xcalib/pipeline/infer.hpp"

#include "v2xcalib/pipeline/data.hpp"

#include <cmath>
#include <limits>

namespace v2xcalib::pipeline {

using model::NumericError;
using nlohmann::json;
using nn::Var;

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

UnitQuaterniond checked_quaternion(double w, double x, double y, double z) {
  Eigen::Vector4d v(w, x, y, z);
  if (!v.allFinite() || !(v.norm() > 1e-12)) throw NumericError("degenerate rotation estimate");
  v.normalize();
  return UnitQuaterniond::from_stored(v[0], v[1], v[2], v[3]);
}

RigidTransformd rotation_only(const UnitQuaterniond& q) { return RigidTransformd(q, Eigen::Vector3d::Zero()); }

}  // namespace

NetworkPredictor::NetworkPredictor(std::shared_ptr<const Net> net, bool use_temporal, double max_depth,
                                   std::string label)
    : net_(std::move(net)), use_temporal_(use_temporal), max_depth_(max_depth), label_(std::move(label)) {
  if (!net_) throw std::invalid_argument("NetworkPredictor: null network");
}

UnitQuaterniond NetworkPredictor::predict(const FrameSequence& seq, const std::vector<int>& frames,
                                          const std::vector<RigidTransformd>& current) const {
  if (frames.empty() || frames.size() != current.size()) {
    throw std::invalid_argument("predict: need one current extrinsic per selected frame");
  }
  const auto& mc = net_->config();
  if (seq.camera.width() != mc.image_w || seq.camera.height() != mc.image_h) {
    throw DatasetError(seq.name + ": camera size does not match the network input size");
  }
  std::size_t first = 0, count = frames.size();
  if (!use_temporal_) {
    first = frames.size() - 1;
    count = 1;
  } else if (count > static_cast<std::size_t>(mc.temporal.max_frames)) {
    count = mc.temporal.max_frames;
  }
  std::vector<const Frame*> fs;
  std::vector<RigidTransformd> ext;
  for (std::size_t j = first; j < first + count; ++j) {
    fs.push_back(&seq.frames.at(frames[j]));
    ext.push_back(current[j]);
  }
  const InputBatch in = make_batch(fs, ext, seq.camera, max_depth_);
  nn::NoGradGuard ng;
  const auto ref = net_->refine(Var<float>::constant(in.image), Var<float>::constant(in.depth), mc.iters);
  const Var<float> q = use_temporal_ ? net_->temporal_quaternion(ref.flows) : net_->stage1_quaternion(ref.flows.back());
  const auto& t = q.value();
  return checked_quaternion(t[0], t[1], t[2], t[3]);
}

CalibrationResult calibrate(const FrameSequence& seq, const std::vector<int>& frames,
                            const std::vector<const Predictor*>& chain) {
  CalibrationResult r;
  r.correction = UnitQuaterniond::identity();
  auto corrected = [&](const UnitQuaterniond& c) {
    std::vector<RigidTransformd> out;
    const RigidTransformd inv = rotation_only(c.inverse());
    for (int j : frames) out.push_back(inv * seq.frames.at(j).T_init);
    return out;
  };
  for (std::size_t k = 0; k < chain.size(); ++k) {
    UnitQuaterniond t;
    try {
      t = chain[k]->predict(seq, frames, corrected(r.correction));
      const auto c = t.wxyz();
      t = checked_quaternion(c[0], c[1], c[2], c[3]);
    } catch (const NumericError& e) {
      throw NumericError("calibrate: stage " + std::to_string(k) + " (" + chain[k]->name() + "): " + e.what());
    }
    r.stages.push_back(t);
    r.correction = r.correction * t;
  }
  r.estimates = corrected(r.correction);
  return r;
}

ErrorStats error_stats(const std::vector<double>& xs) {
  if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const Eigen::Map<const Eigen::ArrayXd> a(xs.data(), static_cast<Eigen::Index>(xs.size()));
  const double mean = a.mean();
  return {mean, std::sqrt((a - mean).square().mean())};
}

namespace {

struct AxisSamples {
  std::vector<double> total, roll, pitch, yaw;
  AxisErrors stats() const { return {error_stats(total), error_stats(roll), error_stats(pitch), error_stats(yaw)}; }
  void add(const UnitQuaterniond& err, double* t, double* r, double* p, double* y) {
    const auto e = to_euler_zyx(err);
    total.push_back(angular_distance(err, UnitQuaterniond::identity()) * kRadToDeg);
    roll.push_back(std::abs(e.roll) * kRadToDeg);
    pitch.push_back(std::abs(e.pitch) * kRadToDeg);
    yaw.push_back(std::abs(e.yaw) * kRadToDeg);
    if (t) *t = total.back(), *r = roll.back(), *p = pitch.back(), *y = yaw.back();
  }
};

}  // namespace

EvalReport evaluate(const std::vector<FrameSequence>& data, const std::vector<const Predictor*>& chain,
                    const std::vector<double>& thresholds) {
  EvalReport report;
  for (const Predictor* p : chain) report.chain.push_back(p->name());
  for (double d : thresholds) {
    EvalBlock block;
    block.threshold = d;
    AxisSamples model, base;
    for (const auto& seq : data) {
      const auto frames = frames_within(seq, d);
      if (frames.empty()) {
        ++block.skipped;
        continue;
      }
      const CalibrationResult r = calibrate(seq, frames, chain);
      EvalRecord rec;
      rec.name = seq.name;
      rec.frames = static_cast<int>(frames.size());
      // R_est R_LC^T = C^-1 D for every frame.
      model.add(r.correction.inverse() * seq.delta.rotation(), &rec.error_deg, &rec.roll_deg, &rec.pitch_deg,
                &rec.yaw_deg);
      base.add(seq.delta.rotation(), nullptr, nullptr, nullptr, nullptr);
      rec.baseline_deg = base.total.back();
      block.records.push_back(rec);
      ++block.sequences;
    }
    block.model = model.stats();
    block.baseline = base.stats();
    report.blocks.push_back(std::move(block));
  }
  return report;
}

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

json stats_json(const ErrorStats& s) { return {{"mean", number(s.mean)}, {"std", number(s.std)}}; }
ErrorStats stats_from(const json& j) { return {number(j.at("mean")), number(j.at("std"))}; }

json axes_json(const AxisErrors& a) {
  return {{"total", stats_json(a.total)}, {"roll", stats_json(a.roll)}, {"pitch", stats_json(a.pitch)},
          {"yaw", stats_json(a.yaw)}};
}
AxisErrors axes_from(const json& j) {
  return {stats_from(j.at("total")), stats_from(j.at("roll")), stats_from(j.at("pitch")), stats_from(j.at("yaw"))};
}

}  // namespace

json to_json(const EvalReport& r) {
  json blocks = json::array();
  for (const auto& b : r.blocks) {
    json recs = json::array();
    for (const auto& e : b.records) {
      recs.push_back({{"name", e.name},
                      {"frames", e.frames},
                      {"error_deg", e.error_deg},
                      {"roll_deg", e.roll_deg},
                      {"pitch_deg", e.pitch_deg},
                      {"yaw_deg", e.yaw_deg},
                      {"baseline_deg", e.baseline_deg}});
    }
    blocks.push_back({{"threshold_m", b.threshold},
                      {"sequences", b.sequences},
                      {"skipped", b.skipped},
                      {"empty", b.sequences == 0},
                      {"model", axes_json(b.model)},
                      {"baseline", axes_json(b.baseline)},
                      {"records", std::move(recs)}});
  }
  return {{"units", "degrees"}, {"chain", r.chain}, {"blocks", std::move(blocks)}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.chain = j.at("chain").get<std::vector<std::string>>();
  for (const auto& b : j.at("blocks")) {
    EvalBlock blk;
    blk.threshold = b.at("threshold_m").get<double>();
    blk.sequences = b.at("sequences").get<int>();
    blk.skipped = b.at("skipped").get<int>();
    blk.model = axes_from(b.at("model"));
    blk.baseline = axes_from(b.at("baseline"));
    for (const auto& e : b.at("records")) {
      blk.records.push_back({e.at("name").get<std::string>(), e.at("frames").get<int>(), e.at("error_deg").get<double>(),
                             e.at("roll_deg").get<double>(), e.at("pitch_deg").get<double>(),
                             e.at("yaw_deg").get<double>(), e.at("baseline_deg").get<double>()});
    }
    r.blocks.push_back(std::move(blk));
  }
  return r;
}

}  // namespace v2xcalib::pipeline
