#include "doctest.h"

#include "cli.hpp"
#include "support/tiny_model.hpp"
#include "v2xcalib/dataset.hpp"
#include "v2xcalib/pipeline/infer.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

using namespace v2xcalib;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int n = 0;
    path = fs::temp_directory_path() / ("v2xcalib_cli_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string write_config(const TempDir& d, const std::string& extra = "") {
  const std::string p = d / "tiny.toml";
  std::ofstream(p) << testing::tiny_config_toml() << extra;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::vector<json> read_jsonl(const std::string& path) {
  std::vector<json> out;
  std::ifstream is(path);
  for (std::string line; std::getline(is, line);) out.push_back(json::parse(line));
  return out;
}

// Dataset plus stage-1 and stage-2 checkpoints, shared by the slower tests.
struct Trained {
  TempDir dir;
  std::string config, data, ckpt1, ckpt2;
  Trained() {
    config = write_config(dir);
    data = dir / "data";
    ckpt1 = dir / "m1.ckpt";
    ckpt2 = dir / "m2.ckpt";
    REQUIRE(invoke({"gen", "-c", config, "-o", data, "-n", "10", "-s", "5"}).code == 0);
    REQUIRE(invoke({"train", "-c", config, "-d", data, "--stage", "1", "-o", ckpt1, "--max-steps", "3"}).code == 0);
    REQUIRE(invoke({"train", "-c", config, "-d", data, "--stage", "2", "--init", ckpt1, "-o", ckpt2, "--max-steps",
                 "3"})
                .code == 0);
  }
};

Trained& trained() {
  static Trained t;
  return t;
}

}  // namespace

TEST_CASE("cli: usage errors and help") {
  CHECK(invoke({}).code == cli::kUsage);
  CHECK(invoke({"frobnicate"}).code == cli::kUsage);
  const Run h = invoke({"--help"});
  CHECK(h.code == cli::kOk);
  CHECK(h.out.find("calibrate") != std::string::npos);
  CHECK(invoke({"gen", "-o", "x"}).code == cli::kUsage);  // missing --count
  CHECK(invoke({"gen", "-o", "x", "-n", "0"}).code == cli::kUsage);
}

TEST_CASE("cli: gen writes the dataset, is reproducible and honours --force") {
  TempDir d;
  const std::string cfg = write_config(d);
  const Run r = invoke({"gen", "-c", cfg, "-o", d / "a", "-n", "10", "-s", "9"});
  REQUIRE(r.code == cli::kOk);
  const json summary = json::parse(r.out);
  CHECK(summary["splits"] == json{{"train", 8}, {"val", 1}, {"test", 1}});
  int seq_dirs = 0;
  for (const auto& e : fs::directory_iterator(d.path / "a")) seq_dirs += e.is_directory();
  CHECK(seq_dirs == 10);
  const DatasetIndex idx = read_index(d.path / "a");
  CHECK(idx.sequences.size() == 10);
  CHECK(idx.dirs(Split::Test).size() == 1);

  REQUIRE(invoke({"gen", "-c", cfg, "-o", d / "b", "-n", "10", "-s", "9"}).code == cli::kOk);
  for (const auto& e : fs::recursive_directory_iterator(d.path / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path other = d.path / "b" / fs::relative(e.path(), d.path / "a");
    CHECK_MESSAGE(slurp(e.path()) == slurp(other), e.path().string());
  }

  CHECK(invoke({"gen", "-c", cfg, "-o", d / "a", "-n", "3", "-s", "1"}).code == cli::kData);
  CHECK(read_index(d.path / "a").sequences.size() == 10);
  CHECK(invoke({"gen", "-c", cfg, "-o", d / "a", "-n", "3", "-s", "1", "--force"}).code == cli::kOk);
  CHECK(read_index(d.path / "a").sequences.size() == 3);
  CHECK(!fs::exists(d.path / "a" / "seq_00005"));
}

TEST_CASE("cli: config from flag or environment, validated before data") {
  TempDir d;
  const std::string bad = d / "bad.toml";
  std::ofstream(bad) << "[sim]\nimage_width = 63\n";
  CHECK(invoke({"gen", "-c", bad, "-o", d / "x", "-n", "2"}).code == cli::kUsage);
  CHECK(!fs::exists(d.path / "x"));
  std::ofstream(d / "unknown.toml") << "[sim]\nno_such_key = 1\n";
  CHECK(invoke({"gen", "-c", d / "unknown.toml", "-o", d / "x", "-n", "2"}).code == cli::kUsage);

  const std::string good = write_config(d);
  ::setenv(cli::kConfigEnv, bad.c_str(), 1);
  CHECK(invoke({"gen", "-o", d / "x", "-n", "2"}).code == cli::kUsage);
  ::setenv(cli::kConfigEnv, good.c_str(), 1);
  CHECK(invoke({"gen", "-o", d / "x", "-n", "2"}).code == cli::kOk);
  ::unsetenv(cli::kConfigEnv);
  CHECK(read_sequence(d.path / "x" / "seq_00000").camera.width() == 64);
}

TEST_CASE("cli: train writes a checkpoint and a per-epoch log") {
  TempDir d;
  const std::string cfg = write_config(d);
  REQUIRE(invoke({"gen", "-c", cfg, "-o", d / "data", "-n", "5", "-s", "2"}).code == cli::kOk);

  // Stage 2 without --init is rejected before the data is read.
  CHECK(invoke({"train", "-c", cfg, "-d", d / "data", "--stage", "2", "-o", d / "m.ckpt"}).code == cli::kUsage);
  CHECK(!fs::exists(d.path / "m.ckpt.log.jsonl"));
  CHECK(invoke({"train", "-c", cfg, "-d", d / "data", "--stage", "3", "-o", d / "m.ckpt"}).code == cli::kUsage);

  const Run r = invoke({"train", "-c", cfg, "-d", d / "data", "--stage", "1", "-o", d / "m.ckpt", "--iters", "1",
                     "--ablate", "no-temporal", "--epochs", "2", "--log", d / "log.jsonl"});
  REQUIRE(r.code == cli::kOk);
  const auto log = read_jsonl(d / "log.jsonl");
  REQUIRE(log.size() == 4);
  CHECK(log[0]["event"] == "start");
  CHECK(log[0]["iters"] == 1);
  CHECK(log[0]["ablate"] == "no-temporal");
  CHECK(log[1]["event"] == "epoch");
  CHECK(log[1]["epoch"] == 0);
  CHECK(log[2]["epoch"] == 1);
  CHECK(log[3]["event"] == "done");
  const auto m = pipeline::load_model(d / "m.ckpt");
  CHECK(m.net.config().iters == 1);
  CHECK(m.meta.stage == 1);
  CHECK(m.meta.extra["ablate"] == "no-temporal");

  CHECK(invoke({"train", "-c", cfg, "-d", d / "data", "--stage", "2", "--init", d / "m.ckpt", "-o", d / "m2.ckpt",
             "--ablate", "no-temporal"})
            .code == cli::kUsage);
  CHECK(invoke({"train", "-c", cfg, "-d", d / "data", "--stage", "2", "--init", d / "m.ckpt", "-o", d / "m2.ckpt",
             "--iters", "3"})
            .code == cli::kUsage);
  std::ofstream(d / "junk.ckpt") << "not a checkpoint";
  CHECK(invoke({"train", "-c", cfg, "-d", d / "data", "--stage", "2", "--init", d / "junk.ckpt", "-o", d / "m2.ckpt"})
            .code == cli::kData);
}

TEST_CASE("cli: training with a diverging learning rate exits with the numeric code") {
  TempDir d;
  const std::string cfg = write_config(d);
  REQUIRE(invoke({"gen", "-c", cfg, "-o", d / "data", "-n", "5", "-s", "2"}).code == cli::kOk);
  const std::string hot = d / "hot.toml";
  std::ofstream(hot) << testing::tiny_config_toml() << "[stage1]\nlr = 1e30\ngrad_clip = 0\nepochs = 3\n";
  const Run r = invoke({"train", "-c", hot, "-d", d / "data", "--stage", "1", "-o", d / "m.ckpt"});
  CHECK(r.code == cli::kNumeric);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("cli: calibrate prints the chained estimate") {
  Trained& t = trained();
  const std::string seq = t.data + "/seq_00000";
  const Run r = invoke({"calibrate", "-c", t.config, "--sequence", seq, "--ckpt", t.ckpt1, "--ckpt", t.ckpt2});
  REQUIRE(r.code == cli::kOk);
  const json j = json::parse(r.out);
  CHECK(j["stages_wxyz"].size() == 2);
  CHECK(j["chain"][0]["head"] == "stage1");
  CHECK(j["chain"][1]["head"] == "temporal");

  // estimate = correction^-1 * T_init for every frame.
  const FrameSequence s = read_sequence(seq);
  const auto c = j["correction_wxyz"];
  const UnitQuaterniond corr(c[0].get<double>(), c[1].get<double>(), c[2].get<double>(), c[3].get<double>());
  REQUIRE(j["estimates"].size() == s.frames.size());
  for (const auto& e : j["estimates"]) {
    const auto q = e["extrinsic"]["rotation_wxyz"];
    const UnitQuaterniond est(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>());
    const RigidTransformd expect = RigidTransformd(corr.inverse(), Eigen::Vector3d::Zero()) *
                                   s.frames[e["frame"].get<int>()].T_init;
    CHECK(angular_distance(est, expect.rotation()) < 1e-9);
    const auto tr = e["extrinsic"]["translation"];
    CHECK((Eigen::Vector3d(tr[0], tr[1], tr[2]) - expect.translation()).norm() < 1e-9);
  }

  const Run ab = invoke({"calibrate", "-c", t.config, "--sequence", seq, "--ckpt", t.ckpt2, "--ablate", "no-temporal"});
  REQUIRE(ab.code == cli::kOk);
  CHECK(json::parse(ab.out)["chain"][0]["head"] == "stage1");

  CHECK(invoke({"calibrate", "-c", t.config, "--sequence", seq, "--ckpt", t.dir / "missing.ckpt"}).code == cli::kData);
  CHECK(invoke({"calibrate", "-c", t.config, "--sequence", seq, "--ckpt", t.ckpt1, "--distance", "0.5"}).code ==
        cli::kData);
}

TEST_CASE("cli: calibrate with non-finite weights exits with the numeric code") {
  Trained& t = trained();
  auto m = pipeline::load_model(t.ckpt1);
  for (auto& [name, p] : m.net.params()) {
    if (name.rfind("head1", 0) == 0) p.mutable_value().values().assign(p.value().size(), std::nanf(""));
  }
  const std::string bad = t.dir / "nan.ckpt";
  pipeline::save_model(bad, m.net, m.meta);
  const Run r = invoke({"calibrate", "-c", t.config, "--sequence", t.data + "/seq_00000", "--ckpt", bad});
  CHECK(r.code == cli::kNumeric);
  CHECK(r.err.find("stage 0") != std::string::npos);
}

TEST_CASE("cli: eval report blocks, empty split and schema") {
  Trained& t = trained();
  const Run r = invoke({"eval", "-c", t.config, "-d", t.data, "--split", "train", "--ckpt", t.ckpt2,
                     "--distance-thresholds", "30,50,80", "-o", t.dir / "report.json"});
  REQUIRE(r.code == cli::kOk);
  const json j = json::parse(slurp(t.dir / "report.json"));
  CHECK(j["units"] == "degrees");
  CHECK(j["split"] == "train");
  REQUIRE(j["blocks"].size() == 3);
  const std::vector<double> want{30, 50, 80};
  for (std::size_t i = 0; i < 3; ++i) {
    const json& b = j["blocks"][i];
    CHECK(b["threshold_m"] == want[i]);
    CHECK(b["sequences"].get<int>() + b["skipped"].get<int>() == 8);
    CHECK(b["records"].size() == b["sequences"].get<std::size_t>());
    for (const char* part : {"model", "baseline"})
      for (const char* axis : {"total", "roll", "pitch", "yaw"})
        for (const char* stat : {"mean", "std"}) CHECK(b[part][axis].contains(stat));
  }
  CHECK(pipeline::to_json(pipeline::eval_report_from_json(j))["blocks"] == j["blocks"]);

  // Two sequences put nothing in the test split.
  TempDir d;
  REQUIRE(invoke({"gen", "-c", t.config, "-o", d / "small", "-n", "2"}).code == cli::kOk);
  const Run e = invoke({"eval", "-c", t.config, "-d", d / "small", "--ckpt", t.ckpt1});
  REQUIRE(e.code == cli::kOk);
  const json ej = json::parse(e.out);
  REQUIRE(ej["blocks"].size() == 3);  // configured defaults
  for (const auto& b : ej["blocks"]) {
    CHECK(b["empty"] == true);
    CHECK(b["sequences"] == 0);
    CHECK(b["model"]["total"]["mean"].is_null());
  }
  CHECK(invoke({"eval", "-c", t.config, "-d", t.data, "--ckpt", t.ckpt1, "--distance-thresholds", "30,-1"}).code ==
        cli::kUsage);
}

TEST_CASE("cli: overlay files, ground-truth alignment and misalignment shift") {
  Trained& t = trained();
  TempDir d;
  // One sequence with a 20 degree yaw error.
  FrameSequence s = read_sequence(t.data + "/seq_00001");
  const RigidTransformd yaw(from_euler_zyx(20.0 * M_PI / 180.0, 0.0, 0.0), Eigen::Vector3d::Zero());
  s.delta = yaw;
  for (auto& f : s.frames) f.T_init = yaw * f.T_LC;
  write_sequence(d.path / "seq", s);

  const Run g = invoke({"overlay", "-c", t.config, "--sequence", d / "seq", "--source", "gt", "-o", d / "gt"});
  REQUIRE(g.code == cli::kOk);
  CHECK(json::parse(g.out)["files"].size() == s.frames.size());
  const Run i = invoke({"overlay", "-c", t.config, "--sequence", d / "seq", "--source", "init", "-o", d / "init",
                     "--format", "pgm"});
  REQUIRE(i.code == cli::kOk);
  CHECK(fs::exists(d.path / "init" / "frame_002.pgm"));
  CHECK(invoke({"overlay", "-c", t.config, "--sequence", d / "seq", "--source", "gt", "-o", d / "gt"}).code ==
        cli::kData);
  CHECK(invoke({"overlay", "-c", t.config, "--sequence", d / "seq", "--source", "predicted", "-o", d / "p"}).code ==
        cli::kUsage);
  const Run p = invoke({"overlay", "-c", t.config, "--sequence", d / "seq", "--source", "predicted", "--ckpt", t.ckpt2,
                     "-o", d / "p"});
  CHECK(p.code == cli::kOk);

  // Points drawn with the true extrinsic land on scene surfaces (anything
  // but sky, which renders at full intensity).
  std::size_t near = 0, total = 0;
  double shift = 0;
  std::size_t shared = 0;
  for (const auto& f : s.frames) {
    const auto gt = project_points(f.points, f.T_LC, s.camera);
    const auto init = project_points(f.points, f.T_init, s.camera);
    for (const auto& pt : gt) {
      bool hit = false;
      const int u = static_cast<int>(std::lround(pt.u)), v = static_cast<int>(std::lround(pt.v));
      for (int dy = -2; dy <= 2 && !hit; ++dy)
        for (int dx = -2; dx <= 2 && !hit; ++dx) {
          const int x = u + dx, y = v + dy;
          hit = x >= 0 && y >= 0 && x < s.camera.width() && y < s.camera.height() && f.image(y, x) < 1.0f;
        }
      near += hit;
      ++total;
    }
    std::map<std::size_t, const ProjectedPoint*> by_index;
    for (const auto& pt : init) by_index[pt.index] = &pt;
    for (const auto& pt : gt) {
      const auto it = by_index.find(pt.index);
      if (it == by_index.end()) continue;
      shift += std::hypot(pt.u - it->second->u, pt.v - it->second->v);
      ++shared;
    }
  }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(near) / static_cast<double>(total) >= 0.95);
  REQUIRE(shared > 0);
  CHECK(shift / static_cast<double>(shared) > 1.0);
  CHECK(slurp(d.path / "gt" / "frame_000.png") != slurp(d.path / "p" / "frame_000.png"));
}
