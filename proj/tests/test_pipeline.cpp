#include "doctest.h"

#include "support/tiny_model.hpp"
#include "v2xcalib/pipeline/data.hpp"
#include "v2xcalib/pipeline/infer.hpp"

#include <Eigen/Geometry>
#include <filesystem>
#include <random>

using namespace v2xcalib;
using namespace v2xcalib::pipeline;
using nlohmann::json;
using v2xcalib::testing::tiny_model_config;

namespace {

constexpr double kDeg = M_PI / 180.0;

/// Returns `fraction` of the true residual rotation current * T_LC^-1, read
/// off the first selected frame.
class OracleStub : public Predictor {
 public:
  explicit OracleStub(double fraction) : fraction_(fraction) {}
  UnitQuaterniond predict(const FrameSequence& seq, const std::vector<int>& frames,
                          const std::vector<RigidTransformd>& current) const override {
    const UnitQuaterniond r = (current.front() * seq.frames.at(frames.front()).T_LC.inverse()).rotation();
    const auto w = r.wxyz();
    const Eigen::Quaterniond full(w[0], w[1], w[2], w[3]);
    const Eigen::Quaterniond part = Eigen::Quaterniond::Identity().slerp(fraction_, full);
    return UnitQuaterniond(part.w(), part.x(), part.y(), part.z());
  }
  std::string name() const override { return "oracle"; }

 private:
  double fraction_;
};

class FixedStub : public Predictor {
 public:
  explicit FixedStub(UnitQuaterniond q) : q_(q) {}
  UnitQuaterniond predict(const FrameSequence&, const std::vector<int>&,
                          const std::vector<RigidTransformd>&) const override {
    return q_;
  }
  std::string name() const override { return "fixed"; }

 private:
  UnitQuaterniond q_;
};

class NanStub : public Predictor {
 public:
  UnitQuaterniond predict(const FrameSequence&, const std::vector<int>&,
                          const std::vector<RigidTransformd>&) const override {
    throw model::NumericError("NaN output");
  }
  std::string name() const override { return "nan"; }
};

/// Sequence without sensor data: only extrinsics and distances.
FrameSequence pose_only_sequence(std::uint64_t seed, double range_deg, int frames = 3) {
  std::mt19937_64 rng(seed);
  FrameSequence s;
  s.name = "pose_" + std::to_string(seed);
  s.delta = sample_rotation_perturbation(range_deg, rng);
  std::uniform_real_distribution<double> u(-1, 1), dist(5, 90);
  for (int i = 0; i < frames; ++i) {
    Frame f;
    f.T_LC = RigidTransformd(UnitQuaterniond::from_axis_angle(Eigen::Vector3d(u(rng), u(rng), u(rng)), 3 * u(rng)),
                             Eigen::Vector3d(u(rng), u(rng), u(rng)) * 30.0);
    f.T_init = s.delta * f.T_LC;
    f.distance = dist(rng);
    s.frames.push_back(f);
  }
  return s;
}

SimConfig tiny_sim() {
  SimConfig c;
  c.image_width = 64;
  c.image_height = 32;
  c.lidar.rows = 16;
  c.lidar.cols = 90;
  c.scene.frames = 3;
  return c;
}

bool bitwise_equal(const nn::NamedParams<float>& a, const std::vector<nn::Tensor<float>>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i].second.value() == b[i])) return false;
  return true;
}

std::vector<nn::Tensor<float>> snapshot(const nn::NamedParams<float>& ps) {
  std::vector<nn::Tensor<float>> out;
  for (const auto& [n, v] : ps) out.push_back(v.value());
  return out;
}

}  // namespace

TEST_CASE("config: defaults, parsing, rejection and round trip") {
  const PipelineConfig d;
  CHECK_NOTHROW(d.validate());
  CHECK(d.stage1.lr == 3e-5);
  CHECK(d.stage2.lr == 1e-4);
  CHECK(d.stage1.decay_factor == 0.5);
  CHECK(d.stage1.decay_every == 20);
  CHECK(d.stage2.max_distance == 50.0);
  CHECK(d.calibrate.ranges_deg == std::vector<double>{20.0, 5.0});
  CHECK(d.eval.thresholds == std::vector<double>{30.0, 50.0, 80.0});

  const PipelineConfig c = parse_config(R"(
# comment
[model]
iters = 3
[model.encoder]
widths = [8, 8, 16, 16]
[stage2]
max_distance = 40
online_perturbation = false
[stage1]
max_distance = inf
[eval]
thresholds = [10, 20]
)");
  CHECK(c.model.iters == 3);
  CHECK(c.model.encoder.widths == std::array<int, 4>{8, 8, 16, 16});
  CHECK(c.stage2.max_distance == 40.0);
  CHECK(!c.stage2.online_perturbation);
  CHECK(std::isinf(c.stage1.max_distance));
  CHECK(c.eval.thresholds == std::vector<double>{10, 20});

  CHECK_THROWS_AS(parse_config("[model]\nitres = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\niters = three\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[model]\niters = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[stage1]\nbatch_size = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[sim]\nimage_width = 128\n"), ConfigError);  // differs from the model size
  CHECK_THROWS_AS(parse_config("[loss]\ngamma = 1.5\n"), ConfigError);

  const auto j = to_json(c.model);
  const model::ModelConfig back = model_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(to_json(c)["stage1"]["max_distance"] == "inf");
}

TEST_CASE("shipped config files") {
  const std::filesystem::path dir = V2XCALIB_SOURCE_DIR "/configs";
  CHECK(to_json(load_config(dir / "default.toml")) == to_json(PipelineConfig()));
  const PipelineConfig desk = load_config(dir / "desk.toml");
  CHECK(desk.sim.image_width == desk.model.image_w);
  CHECK(desk.sim.image_height == desk.model.image_h);
}

TEST_CASE("distance filter keeps frames strictly below the threshold") {
  FrameSequence s;
  for (double d : {49.9, 50.1, 50.0, 10.0}) {
    Frame f;
    f.distance = d;
    s.frames.push_back(f);
  }
  CHECK(frames_within(s, 50.0) == std::vector<int>{0, 3});
  CHECK(frames_within(s, 80.0) == std::vector<int>{0, 1, 2, 3});
  CHECK(frames_within(s, 5.0).empty());
}

TEST_CASE("network inputs: image scaling and depth through the given extrinsic") {
  const SimConfig sim = tiny_sim();
  const FrameSequence seq = generate_sequence(sim, 3, 0);
  const Frame& f = seq.frames[0];
  const auto b = make_batch({&f, &f}, {f.T_LC, f.T_init}, seq.camera, 80.0);
  CHECK(b.image.shape() == nn::Shape{2, 1, 32, 64});
  const ImageF d_gt = render_depth_map(f.points, f.T_LC, seq.camera, 80.0);
  const ImageF d_init = render_depth_map(f.points, f.T_init, seq.camera, 80.0);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 64; ++x) {
      CHECK(b.image[y * 64 + x] == f.image(y, x) * 2.0f - 1.0f);
      CHECK(b.depth[y * 64 + x] == d_gt(y, x));
      CHECK(b.depth[32 * 64 + y * 64 + x] == d_init(y, x));
    }
  Frame wrong = f;
  wrong.image = ImageF::Zero(16, 16);
  CHECK_THROWS_AS(make_batch({&wrong}, {f.T_LC}, seq.camera, 80.0), DatasetError);
}

TEST_CASE("chained calibration recovers the true extrinsic under oracle stages") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const FrameSequence s = pose_only_sequence(seed, 20.0);
    const std::vector<int> frames{0, 1, 2};
    auto expect_exact = [&](const CalibrationResult& r) {
      for (std::size_t j = 0; j < frames.size(); ++j) {
        const RigidTransformd& gt = s.frames[frames[j]].T_LC;
        CHECK(angular_distance(r.estimates[j].rotation(), gt.rotation()) < 1e-6);
        CHECK((r.estimates[j].translation() - gt.translation()).norm() < 1e-6);
      }
    };
    const OracleStub full(1.0), half(0.5), third(1.0 / 3.0);
    expect_exact(calibrate(s, frames, {&full}));
    expect_exact(calibrate(s, frames, {&half, &full}));
    expect_exact(calibrate(s, frames, {&third, &half, &full}));

    // The estimate is (T_0 T_1)^-1 T_init whatever the stages return.
    const FixedStub a(sample_rotation_perturbation(5.0, seed + 100).rotation());
    const FixedStub b(sample_rotation_perturbation(5.0, seed + 200).rotation());
    const auto r = calibrate(s, frames, {&a, &b});
    REQUIRE(r.stages.size() == 2);
    const RigidTransformd C(r.stages[0] * r.stages[1], Eigen::Vector3d::Zero());
    for (std::size_t j = 0; j < frames.size(); ++j) {
      const RigidTransformd expect = C.inverse() * s.frames[frames[j]].T_init;
      CHECK((r.estimates[j].matrix() - expect.matrix()).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  const FrameSequence s = pose_only_sequence(1, 10.0);
  const OracleStub half(0.5);
  const NanStub bad;
  try {
    calibrate(s, {0}, {&half, &bad});
    FAIL("expected NumericError");
  } catch (const model::NumericError& e) {
    CHECK(std::string(e.what()).find("stage 1") != std::string::npos);
  }
}

// Same structure, numbers equal within tol.
bool json_close(const json& a, const json& b, double tol) {
  const json fa = a.flatten(), fb = b.flatten();
  if (fa.size() != fb.size()) return false;
  for (auto it = fa.begin(); it != fa.end(); ++it) {
    if (!fb.contains(it.key())) return false;
    const json& y = fb.at(it.key());
    if (it->is_number() && y.is_number()) {
      if (std::abs(it->get<double>() - y.get<double>()) > tol) return false;
    } else if (*it != y) {
      return false;
    }
  }
  return true;
}

TEST_CASE("evaluation: perfect predictor, sign flip, filtering, serialization") {
  std::vector<FrameSequence> data;
  for (std::uint64_t i = 0; i < 40; ++i) data.push_back(pose_only_sequence(i, 20.0, 4));
  const OracleStub perfect(1.0);
  const auto r = evaluate(data, {&perfect}, {30, 50, 80});
  REQUIRE(r.blocks.size() == 3);
  for (const auto& b : r.blocks) {
    CHECK(b.sequences + b.skipped == 40);
    for (const auto* s : {&b.model.total, &b.model.roll, &b.model.pitch, &b.model.yaw}) {
      CHECK(s->mean < 1e-6);
      CHECK(s->std < 1e-6);
    }
  }
  // Filtering only removes sequences as the threshold drops.
  CHECK(r.blocks[0].sequences <= r.blocks[1].sequences);
  CHECK(r.blocks[1].sequences <= r.blocks[2].sequences);

  const FixedStub q(sample_rotation_perturbation(7.0, 5).rotation());
  const FixedStub minus_q(-sample_rotation_perturbation(7.0, 5).rotation());
  const json a = to_json(evaluate(data, {&q}, {30, 80}));
  const json b = to_json(evaluate(data, {&minus_q}, {30, 80}));
  CHECK(json_close(a, b, 1e-9));

  const auto empty = evaluate(data, {&q}, {1.0});
  CHECK(empty.blocks[0].sequences == 0);
  CHECK(empty.blocks[0].skipped == 40);
  const json ej = to_json(empty);
  CHECK(ej["blocks"][0]["empty"] == true);
  CHECK(ej["blocks"][0]["model"]["total"]["mean"].is_null());
  CHECK(to_json(eval_report_from_json(a)) == a);
  CHECK(to_json(eval_report_from_json(ej)) == ej);
}

TEST_CASE("identity baseline matches a Monte-Carlo expectation of the perturbation angle") {
  // Oracle: yaw, pitch, roll uniform in (-20, 20) degrees composed Z-Y-X with
  // Eigen, angle of the product; 1e5 draws.
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-20.0 * kDeg, 20.0 * kDeg);
  std::vector<double> angles;
  for (int k = 0; k < 100000; ++k) {
    const Eigen::Matrix3d R = (Eigen::AngleAxisd(u(rng), Eigen::Vector3d::UnitZ()) *
                               Eigen::AngleAxisd(u(rng), Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(u(rng), Eigen::Vector3d::UnitX()))
                                  .toRotationMatrix();
    angles.push_back(Eigen::AngleAxisd(R).angle() / kDeg);
  }
  const ErrorStats oracle = error_stats(angles);

  std::vector<FrameSequence> data;
  for (std::uint64_t i = 0; i < 20000; ++i) data.push_back(pose_only_sequence(10000 + i, 20.0, 1));
  for (auto& s : data) s.frames[0].distance = 1.0;
  const IdentityPredictor id;
  const auto r = evaluate(data, {&id}, {80.0});
  const auto& b = r.blocks[0];
  INFO("oracle mean " << oracle.mean << " std " << oracle.std << ", report mean " << b.baseline.total.mean);
  // Standard error of a 2e4 mean is ~0.04 deg here.
  CHECK(std::abs(b.baseline.total.mean - oracle.mean) < 0.2);
  CHECK(std::abs(b.baseline.total.std - oracle.std) < 0.2);
  CHECK(b.model.total.mean == doctest::Approx(b.baseline.total.mean).epsilon(1e-12));
}

TEST_CASE("stage 1: first-step loss with an identity head equals its analytic value") {
  SimConfig sim = tiny_sim();
  std::vector<FrameSequence> data{generate_sequence(sim, 5, 0), generate_sequence(sim, 5, 1)};
  Net net(tiny_model_config());
  for (auto& [name, v] : net.prefix_params())
    if (name == "head1.fc2.weight") v.mutable_value().fill(0.0f);
  TrainConfig tc;
  tc.online_perturbation = false;
  tc.epochs = 1;
  tc.batch_size = 6;
  model::LossConfig lc;
  const auto res = train_stage1(net, data, tc, lc, 80.0);
  REQUIRE(res.epochs.size() == 1);

  // Identity prediction: rotation term is the perturbation angle, point term
  // the mean displacement under T_LC^-1 T_init, equal for every iteration.
  double rot = 0, pt = 0;
  int n = 0;
  for (const auto& s : data)
    for (const auto& f : s.frames) {
      rot += 2.0 * std::acos(std::min(std::abs(s.delta.rotation().wxyz()[0]), 1.0 - model::kAcosMargin));
      const Eigen::Matrix4d M = f.T_LC.inverse().matrix() * f.T_init.matrix();
      double acc = 0;
      for (int i = 0; i < f.points.rows(); ++i) {
        const Eigen::Vector4d p(f.points(i, 0), f.points(i, 1), f.points(i, 2), 1.0);
        acc += (M * p - p).norm();
      }
      pt += acc / f.points.rows();
      ++n;
    }
  rot /= n;
  pt /= n;
  const int iters = net.config().iters;
  const double weights = (1.0 - std::pow(lc.gamma, iters)) / (1.0 - lc.gamma);
  const auto& e = res.epochs[0];
  CHECK(e.rotation == doctest::Approx(rot).epsilon(1e-4));
  CHECK(e.point == doctest::Approx(pt).epsilon(1e-4));
  CHECK(e.loss == doctest::Approx((lc.lambda_r * rot + lc.lambda_p * pt) * weights).epsilon(1e-4));
  CHECK(e.steps == 1);
}

TEST_CASE("training is reproducible and aborts on a non-finite loss") {
  SimConfig sim = tiny_sim();
  std::vector<FrameSequence> data{generate_sequence(sim, 6, 0)};
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.lr = 1e-3;
  model::LossConfig lc;
  Net a(tiny_model_config()), b(tiny_model_config());
  const auto ra = train_stage1(a, data, tc, lc, 80.0);
  const auto rb = train_stage1(b, data, tc, lc, 80.0);
  CHECK(ra.epochs.back().loss == rb.epochs.back().loss);
  CHECK(bitwise_equal(a.params(), snapshot(b.params())));

  // The epoch callback can end training early.
  Net d(tiny_model_config());
  int calls = 0;
  const auto rd = train_stage1(d, data, tc, lc, 80.0, [&](const EpochRecord&) { return ++calls < 1; });
  CHECK(calls == 1);
  CHECK(rd.epochs.size() == 1);

  data[0].frames[1].points(0, 0) = std::numeric_limits<float>::quiet_NaN();
  Net c(tiny_model_config());
  tc.batch_size = 1;
  tc.online_perturbation = false;
  try {
    train_stage1(c, data, tc, lc, 80.0);
    FAIL("expected NumericError");
  } catch (const model::NumericError& e) {
    CHECK(std::string(e.what()).find("batch") != std::string::npos);
  }
}

TEST_CASE("stage 2: frozen phase leaves the prefix bitwise unchanged, joint phase moves it") {
  SimConfig sim = tiny_sim();
  std::vector<FrameSequence> data{generate_sequence(sim, 8, 0), generate_sequence(sim, 8, 1)};
  for (auto& s : data)
    for (auto& f : s.frames) f.distance = 10.0;
  Net net(tiny_model_config());
  const auto prefix0 = snapshot(net.prefix_params());
  const auto temporal0 = snapshot(net.temporal_params());
  TrainConfig tc;
  tc.stage = 2;
  tc.lr = 1e-3;
  tc.epochs = 2;
  tc.freeze_epochs = 2;
  tc.batch_size = 2;
  model::LossConfig lc;
  const auto r = train_stage2(net, data, tc, lc, 80.0);
  CHECK(r.epochs.front().phase == 'A');
  CHECK(bitwise_equal(net.prefix_params(), prefix0));
  CHECK(!bitwise_equal(net.temporal_params(), temporal0));

  tc.epochs = 3;
  const auto r2 = train_stage2(net, data, tc, lc, 80.0);
  CHECK(r2.epochs.back().phase == 'B');
  CHECK(!bitwise_equal(net.prefix_params(), prefix0));

  // Sequences whose frames all sit at or beyond the threshold are dropped.
  for (auto& s : data)
    for (auto& f : s.frames) f.distance = 50.1;
  tc.max_distance = 50.0;
  CHECK_THROWS_AS(train_stage2(net, data, tc, lc, 80.0), DatasetError);
}

TEST_CASE("model checkpoints round-trip with their metadata") {
  const auto dir = std::filesystem::temp_directory_path() / "v2xcalib_test_ckpt";
  std::filesystem::create_directories(dir);
  Net net(tiny_model_config());
  ModelMeta meta{2, 5.0, 80.0, {{"ablation", "none"}}};
  save_model(dir / "m.ckpt", net, meta);
  const LoadedModel back = load_model(dir / "m.ckpt");
  CHECK(back.meta.stage == 2);
  CHECK(back.meta.perturb_deg == 5.0);
  CHECK(back.meta.extra["ablation"] == "none");
  CHECK(to_json(back.net.config()) == to_json(net.config()));
  CHECK(bitwise_equal(back.net.params(), snapshot(net.params())));
  std::filesystem::remove_all(dir);
}
