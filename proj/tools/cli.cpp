#include "cli.hpp"

#include "v2xcalib/dataset.hpp"
#include "v2xcalib/pipeline/data.hpp"
#include "v2xcalib/pipeline/infer.hpp"
#include "v2xcalib/nn/checkpoint.hpp"
#include "v2xcalib/pipeline/overlay.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>

namespace v2xcalib::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace v2xcalib::pipeline;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kNoTemporal = "no-temporal";

PipelineConfig resolve_config(const std::string& flag) {
  std::string path = flag;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  PipelineConfig c = path.empty() ? PipelineConfig() : load_config(path);
  c.validate();
  return c;
}

bool dir_has_entries(const fs::path& p) { return fs::exists(p) && !fs::is_empty(p); }

void write_json(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DatasetError("cannot write " + path);
  os << j.dump(2) << '\n';
  if (!os) throw DatasetError("write failed for " + path);
}

json quat_json(const UnitQuaterniond& q) {
  const auto c = q.canonical().wxyz();
  return {c[0], c[1], c[2], c[3]};
}

json transform_json(const RigidTransformd& t) {
  const auto& p = t.translation();
  return {{"rotation_wxyz", quat_json(t.rotation())}, {"translation", {p.x(), p.y(), p.z()}}};
}

double deg(double rad) { return rad * 180.0 / M_PI; }

// A loaded checkpoint and the head it runs with.
struct ChainLink {
  std::shared_ptr<const Net> net;
  std::unique_ptr<Predictor> predictor;
  json info;
};

std::vector<ChainLink> load_chain(const std::vector<std::string>& paths, bool ablate_temporal) {
  std::vector<ChainLink> chain;
  for (const auto& p : paths) {
    LoadedModel m = load_model(p);
    const bool trained_without = m.meta.extra.value("ablate", std::string()) == kNoTemporal;
    const bool temporal = m.meta.stage == 2 && !ablate_temporal && !trained_without;
    ChainLink link;
    link.net = std::make_shared<const Net>(std::move(m.net));
    link.predictor =
        std::make_unique<NetworkPredictor>(link.net, temporal, m.meta.max_depth, fs::path(p).filename().string());
    link.info = {{"checkpoint", p},
                 {"stage", m.meta.stage},
                 {"head", temporal ? "temporal" : "stage1"},
                 {"iters", link.net->config().iters},
                 {"perturb_deg", m.meta.perturb_deg}};
    chain.push_back(std::move(link));
  }
  return chain;
}

std::vector<const Predictor*> predictors(const std::vector<ChainLink>& chain) {
  std::vector<const Predictor*> out;
  for (const auto& l : chain) out.push_back(l.predictor.get());
  return out;
}

json chain_json(const std::vector<ChainLink>& chain) {
  json j = json::array();
  for (const auto& l : chain) j.push_back(l.info);
  return j;
}

void check_sizes(const std::vector<ChainLink>& chain, const PipelineConfig& cfg) {
  for (const auto& l : chain) {
    const auto& mc = l.net->config();
    if (mc.image_w != cfg.sim.image_width || mc.image_h != cfg.sim.image_height) {
      throw UsageError(l.info["checkpoint"].get<std::string>() + ": network input " + std::to_string(mc.image_w) +
                       "x" + std::to_string(mc.image_h) + " does not match the configured image size");
    }
  }
}

// ---- gen

struct GenArgs {
  std::string config, out;
  int count = 0;
  std::uint64_t seed = 0;
  bool force = false;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.config);
  if (dir_has_entries(a.out)) {
    if (!a.force) throw DatasetError(a.out + " exists and is not empty (use --force to overwrite)");
    fs::remove_all(a.out);
  }
  std::vector<FrameSequence> seqs;
  std::vector<Split> splits;
  json counts{{"train", 0}, {"val", 0}, {"test", 0}};
  for (int i = 0; i < a.count; ++i) {
    seqs.push_back(generate_sequence(cfg.sim, a.seed, static_cast<std::uint64_t>(i)));
    splits.push_back(split_for(static_cast<std::size_t>(i), static_cast<std::size_t>(a.count)));
    counts[to_string(splits.back())] = counts[to_string(splits.back())].get<int>() + 1;
  }
  write_dataset(a.out, seqs, splits);
  out << json{{"out", a.out}, {"count", a.count}, {"seed", a.seed}, {"splits", counts}}.dump() << '\n';
  return kOk;
}

// ---- train

struct TrainArgs {
  std::string config, data, out, init, log, ablate, split = "train";
  int stage = 1;
  std::optional<int> iters, epochs, max_steps;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  PipelineConfig cfg = resolve_config(a.config);
  if (a.stage == 2 && a.init.empty()) throw UsageError("stage 2 needs --init <stage-1 checkpoint>");
  if (a.stage == 2 && a.ablate == kNoTemporal) throw UsageError("the no-temporal ablation has no stage 2");
  TrainConfig& tc = a.stage == 1 ? cfg.stage1 : cfg.stage2;
  if (a.epochs) tc.epochs = *a.epochs;
  if (a.max_steps) tc.max_steps = *a.max_steps;
  if (a.iters && a.stage == 1) cfg.model.iters = *a.iters;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }

  std::unique_ptr<Net> net;
  json extra = json::object();
  if (!a.init.empty()) {
    LoadedModel m = load_model(a.init);
    if (a.iters && *a.iters != m.net.config().iters) {
      throw UsageError("--iters " + std::to_string(*a.iters) + " does not match the --init network (" +
                       std::to_string(m.net.config().iters) + ")");
    }
    extra = m.meta.extra;
    net = std::make_unique<Net>(std::move(m.net));
  } else {
    net = std::make_unique<Net>(cfg.model);
  }
  const auto& mc = net->config();
  if (mc.image_w != cfg.sim.image_width || mc.image_h != cfg.sim.image_height) {
    throw UsageError("network input size does not match the configured image size");
  }
  if (!a.ablate.empty()) extra["ablate"] = a.ablate;
  extra["iters"] = mc.iters;

  const auto data = read_split(a.data, parse_split(a.split));
  if (data.empty()) throw DatasetError(a.data + ": split '" + a.split + "' has no sequences");

  const std::string log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw DatasetError("cannot write " + log_path);
  log << json{{"event", "start"},
              {"stage", a.stage},
              {"ablate", a.ablate.empty() ? json(nullptr) : json(a.ablate)},
              {"iters", mc.iters},
              {"init", a.init.empty() ? json(nullptr) : json(a.init)},
              {"sequences", data.size()},
              {"train", to_json(tc)}}
             .dump()
      << '\n';
  const auto on_epoch = [&](const EpochRecord& r) {
    json j = to_json(r);
    j["event"] = "epoch";
    log << j.dump() << '\n' << std::flush;
    return true;
  };
  const double max_depth = cfg.sim.lidar.max_range;
  const TrainResult res = a.stage == 1 ? train_stage1(*net, data, tc, cfg.loss, max_depth, on_epoch)
                                       : train_stage2(*net, data, tc, cfg.loss, max_depth, on_epoch);
  save_model(a.out, *net, {a.stage, tc.perturb_deg, max_depth, extra});
  log << json{{"event", "done"}, {"steps", res.steps}, {"checkpoint", a.out}}.dump() << '\n';
  out << json{{"checkpoint", a.out}, {"log", log_path}, {"steps", res.steps}, {"epochs", res.epochs.size()}}.dump()
      << '\n';
  return kOk;
}

// ---- calibrate

struct CalibrateArgs {
  std::string config, sequence, out, ablate;
  std::vector<std::string> ckpts;
  double distance = std::numeric_limits<double>::infinity();
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.config);
  const auto chain = load_chain(a.ckpts, a.ablate == kNoTemporal);
  check_sizes(chain, cfg);
  const FrameSequence seq = read_sequence(a.sequence);
  const auto frames = frames_within(seq, a.distance);
  if (frames.empty()) throw DatasetError(a.sequence + ": no frame closer than the distance limit");
  const CalibrationResult r = calibrate(seq, frames, predictors(chain));

  json stages = json::array();
  for (const auto& t : r.stages) stages.push_back(quat_json(t));
  json estimates = json::array();
  for (std::size_t j = 0; j < frames.size(); ++j) {
    const Frame& f = seq.frames[frames[j]];
    estimates.push_back({{"frame", frames[j]},
                         {"extrinsic", transform_json(r.estimates[j])},
                         {"error_deg", deg(angular_distance(r.estimates[j].rotation(), f.T_LC.rotation()))},
                         {"init_error_deg", deg(angular_distance(f.T_init.rotation(), f.T_LC.rotation()))}});
  }
  write_json({{"sequence", seq.name},
              {"chain", chain_json(chain)},
              {"frames", frames},
              {"stages_wxyz", stages},
              {"correction_wxyz", quat_json(r.correction)},
              {"estimates", estimates}},
             a.out, out);
  return kOk;
}

// ---- eval

struct EvalArgs {
  std::string config, data, split = "test", out, ablate;
  std::vector<std::string> ckpts;
  std::vector<double> thresholds;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.config);
  const std::vector<double> thresholds = a.thresholds.empty() ? cfg.eval.thresholds : a.thresholds;
  for (double d : thresholds)
    if (!(d > 0)) throw UsageError("distance thresholds must be positive");
  const auto chain = load_chain(a.ckpts, a.ablate == kNoTemporal);
  check_sizes(chain, cfg);
  const auto data = read_split(a.data, parse_split(a.split));
  json j = to_json(evaluate(data, predictors(chain), thresholds));
  j["split"] = a.split;
  j["checkpoints"] = chain_json(chain);
  write_json(j, a.out, out);
  return kOk;
}

// ---- overlay

struct OverlayArgs {
  std::string config, sequence, source = "gt", out, format = "png", ablate;
  std::vector<std::string> ckpts;
  bool force = false;
};

int cmd_overlay(const OverlayArgs& a, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(a.config);
  if (a.source == "predicted" && a.ckpts.empty()) throw UsageError("--source predicted needs at least one --ckpt");
  if (a.source != "predicted" && !a.ckpts.empty()) throw UsageError("--ckpt only applies to --source predicted");
  const auto chain = load_chain(a.ckpts, a.ablate == kNoTemporal);
  check_sizes(chain, cfg);
  const FrameSequence seq = read_sequence(a.sequence);
  if (dir_has_entries(a.out)) {
    if (!a.force) throw DatasetError(a.out + " exists and is not empty (use --force to overwrite)");
    fs::remove_all(a.out);
  }
  fs::create_directories(a.out);

  std::vector<RigidTransformd> ext;
  if (a.source == "predicted") {
    std::vector<int> all(seq.frames.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    ext = calibrate(seq, all, predictors(chain)).estimates;
  } else {
    for (const auto& f : seq.frames) ext.push_back(a.source == "gt" ? f.T_LC : f.T_init);
  }
  json files = json::array();
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const RgbImage img = render_overlay(seq.frames[i], ext[i], seq.camera, cfg.sim.lidar.max_range);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.%s", i, a.format.c_str());
    const fs::path p = fs::path(a.out) / name;
    if (a.format == "png") {
      write_png(p, img);
    } else {
      write_pgm(p, img);
    }
    files.push_back(p.string());
  }
  out << json{{"sequence", seq.name}, {"source", a.source}, {"files", files}}.dump() << '\n';
  return kOk;
}

void add_config(CLI::App* sc, std::string& target) {
  sc->add_option("-c,--config", target, std::string("Config file (default: $") + kConfigEnv + " or built-ins)")
      ->check(CLI::ExistingFile);
}

void add_ablate(CLI::App* sc, std::string& target) {
  sc->add_option("--ablate", target, "Ablation: no-temporal uses the per-frame head")
      ->check(CLI::IsMember({kNoTemporal}));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Roadside camera rotation calibration from vehicle LiDAR"};
  app.name("v2xcalib");
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_config(g, gen.config);
  g->add_option("-o,--out", gen.out, "Output directory")->required();
  g->add_option("-n,--count", gen.count, "Number of sequences")->required()->check(CLI::PositiveNumber);
  g->add_option("-s,--seed", gen.seed, "Master seed");
  g->add_flag("-f,--force", gen.force, "Replace a non-empty output directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train stage 1 or stage 2");
  add_config(t, tr.config);
  t->add_option("-d,--data", tr.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  t->add_option("--stage", tr.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  t->add_option("-o,--out", tr.out, "Checkpoint to write")->required();
  t->add_option("--init", tr.init, "Starting checkpoint (required for stage 2)");
  t->add_option("--log", tr.log, "Per-epoch JSON lines (default <out>.log.jsonl)");
  t->add_option("--split", tr.split, "Dataset split")->check(CLI::IsMember({"train", "val", "test"}));
  t->add_option("--iters", tr.iters, "Refinement iterations (stage 1)")->check(CLI::PositiveNumber);
  t->add_option("--epochs", tr.epochs, "Override the configured epoch count")->check(CLI::NonNegativeNumber);
  t->add_option("--max-steps", tr.max_steps, "Stop after this many optimizer steps")
      ->check(CLI::NonNegativeNumber);
  add_ablate(t, tr.ablate);

  CalibrateArgs ca;
  auto* c = app.add_subcommand("calibrate", "Estimate the extrinsic of one sequence with a chain of checkpoints");
  add_config(c, ca.config);
  c->add_option("--sequence", ca.sequence, "Sequence directory")->required()->check(CLI::ExistingDirectory);
  c->add_option("--ckpt", ca.ckpts, "Checkpoint; repeat to chain, coarse first")->required();
  c->add_option("--distance", ca.distance, "Use frames closer than this, metres")->check(CLI::PositiveNumber);
  c->add_option("-o,--out", ca.out, "JSON output (default stdout)");
  add_ablate(c, ca.ablate);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint chain on a dataset split");
  add_config(e, ev.config);
  e->add_option("-d,--data", ev.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", ev.split, "Dataset split")->check(CLI::IsMember({"train", "val", "test"}));
  e->add_option("--ckpt", ev.ckpts, "Checkpoint; repeat to chain, coarse first")->required();
  e->add_option("--distance-thresholds", ev.thresholds, "Comma-separated, metres")->delimiter(',');
  e->add_option("-o,--out", ev.out, "JSON report (default stdout)");
  add_ablate(e, ev.ablate);

  OverlayArgs ov;
  auto* o = app.add_subcommand("overlay", "Draw LiDAR points over the camera images");
  add_config(o, ov.config);
  o->add_option("--sequence", ov.sequence, "Sequence directory")->required()->check(CLI::ExistingDirectory);
  o->add_option("--source", ov.source, "gt, init or predicted")->check(CLI::IsMember({"gt", "init", "predicted"}));
  o->add_option("--ckpt", ov.ckpts, "Checkpoint chain for --source predicted");
  o->add_option("-o,--out", ov.out, "Output directory")->required();
  o->add_option("--format", ov.format, "png or pgm")->check(CLI::IsMember({"png", "pgm"}));
  o->add_flag("-f,--force", ov.force, "Replace a non-empty output directory");
  add_ablate(o, ov.ablate);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) return cmd_gen(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (c->parsed()) return cmd_calibrate(ca, out);
    if (e->parsed()) return cmd_eval(ev, out);
    return cmd_overlay(ov, out);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsage;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kUsage;
  } catch (const model::NumericError& ex) {
    err << "numeric error: " << ex.what() << '\n';
    return kNumeric;
  } catch (const DatasetError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kData;
  } catch (const nn::CheckpointError& ex) {
    err << "checkpoint error: " << ex.what() << '\n';
    return kData;
  } catch (const fs::filesystem_error& ex) {
    err << "file error: " << ex.what() << '\n';
    return kData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kData;
  }
}

}  // namespace v2xcalib::cli
