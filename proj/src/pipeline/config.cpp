#include "v2xcalib/pipeline/config.hpp"

#include "CLI11.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace v2xcalib::pipeline {

using nlohmann::json;

void TrainConfig::validate() const {
  auto need = [this](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("stage" + std::to_string(stage) + ": " + what);
  };
  need(stage == 1 || stage == 2, "stage must be 1 or 2");
  need(lr > 0, "lr must be positive");
  need(decay_every >= 1 && decay_factor > 0 && decay_factor <= 1, "decay schedule out of range");
  need(epochs >= 0 && max_steps >= 0, "epochs and max_steps must be non-negative");
  need(batch_size >= 1, "batch_size must be >= 1");
  need(perturb_deg >= 0 && perturb_deg <= 180, "perturb_deg must lie in [0, 180]");
  need(max_distance > 0, "max_distance must be positive");
  need(freeze_epochs >= 0, "freeze_epochs must be non-negative");
  need(frames_per_sequence >= 1, "frames_per_sequence must be >= 1");
  need(grad_clip >= 0, "grad_clip must be non-negative");
}

PipelineConfig::PipelineConfig() {
  stage2.stage = 2;
  stage2.lr = 1e-4;
  stage2.max_distance = 50.0;
  stage2.freeze_epochs = 10;
  stage2.batch_size = 1;
}

void PipelineConfig::validate() const {
  try {
    sim.validate();
    model.validate();
    loss.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  stage1.validate();
  stage2.validate();
  if (stage1.stage != 1 || stage2.stage != 2) throw ConfigError("stage sections carry fixed stage numbers");
  if (sim.image_height != model.image_h || sim.image_width != model.image_w) {
    throw ConfigError("sim image size must equal model image size");
  }
  if (calibrate.ranges_deg.empty()) throw ConfigError("calibrate.ranges_deg must not be empty");
  if (eval.thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
  for (double d : eval.thresholds)
    if (!(d > 0)) throw ConfigError("eval.thresholds must be positive");
}

namespace {

double to_double(const std::string& key, const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
  return v;
}

long long to_int(const std::string& key, const std::string& s) {
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError(key + ": not an integer: '" + s + "'");
  return v;
}

bool to_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": not a boolean: '" + s + "'");
}

const std::string& single(const std::string& key, const std::vector<std::string>& in) {
  if (in.size() != 1) throw ConfigError(key + ": expected one value, got " + std::to_string(in.size()));
  return in.front();
}

json number(double v) { return std::isfinite(v) ? json(v) : json("inf"); }

struct Field {
  std::function<void(PipelineConfig&, const std::vector<std::string>&)> set;
  std::function<json(PipelineConfig)> get;  // reads through the same accessor as set
};

using Registry = std::vector<std::pair<std::string, Field>>;

void add(Registry& r, const std::string& key, std::function<double&(PipelineConfig&)> ref) {
  r.emplace_back(key, Field{[key, ref](PipelineConfig& c, const auto& in) { ref(c) = to_double(key, single(key, in)); },
                            [ref](PipelineConfig c) { return number(ref(c)); }});
}

void add(Registry& r, const std::string& key, std::function<int&(PipelineConfig&)> ref) {
  r.emplace_back(key, Field{[key, ref](PipelineConfig& c, const auto& in) {
                              ref(c) = static_cast<int>(to_int(key, single(key, in)));
                            },
                            [ref](PipelineConfig c) { return json(ref(c)); }});
}

void add(Registry& r, const std::string& key, std::function<std::uint64_t&(PipelineConfig&)> ref) {
  r.emplace_back(key, Field{[key, ref](PipelineConfig& c, const auto& in) {
                              const long long v = to_int(key, single(key, in));
                              if (v < 0) throw ConfigError(key + ": must be non-negative");
                              ref(c) = static_cast<std::uint64_t>(v);
                            },
                            [ref](PipelineConfig c) { return json(ref(c)); }});
}

void add(Registry& r, const std::string& key, std::function<bool&(PipelineConfig&)> ref) {
  r.emplace_back(key, Field{[key, ref](PipelineConfig& c, const auto& in) { ref(c) = to_bool(key, single(key, in)); },
                            [ref](PipelineConfig c) { return json(ref(c)); }});
}

void add(Registry& r, const std::string& key, std::function<std::vector<double>&(PipelineConfig&)> ref) {
  r.emplace_back(key, Field{[key, ref](PipelineConfig& c, const auto& in) {
                              std::vector<double> v;
                              for (const auto& s : in) v.push_back(to_double(key, s));
                              ref(c) = std::move(v);
                            },
                            [ref](PipelineConfig c) {
                              json a = json::array();
                              for (double v : ref(c)) a.push_back(number(v));
                              return a;
                            }});
}

void add_widths(Registry& r) {
  const std::string key = "model.encoder.widths";
  r.emplace_back(key, Field{[key](PipelineConfig& c, const auto& in) {
                              if (in.size() != 4) throw ConfigError(key + ": expected 4 values");
                              for (int i = 0; i < 4; ++i) c.model.encoder.widths[i] = static_cast<int>(to_int(key, in[i]));
                            },
                            [](PipelineConfig c) { return json(c.model.encoder.widths); }});
}

void add_train(Registry& r, const std::string& s, TrainConfig PipelineConfig::*t) {
  using C = PipelineConfig;
  add(r, s + ".lr", std::function<double&(C&)>([t](C& c) -> double& { return (c.*t).lr; }));
  add(r, s + ".decay_every", std::function<int&(C&)>([t](C& c) -> int& { return (c.*t).decay_every; }));
  add(r, s + ".decay_factor", std::function<double&(C&)>([t](C& c) -> double& { return (c.*t).decay_factor; }));
  add(r, s + ".epochs", std::function<int&(C&)>([t](C& c) -> int& { return (c.*t).epochs; }));
  add(r, s + ".max_steps", std::function<int&(C&)>([t](C& c) -> int& { return (c.*t).max_steps; }));
  add(r, s + ".batch_size", std::function<int&(C&)>([t](C& c) -> int& { return (c.*t).batch_size; }));
  add(r, s + ".perturb_deg", std::function<double&(C&)>([t](C& c) -> double& { return (c.*t).perturb_deg; }));
  add(r, s + ".max_distance", std::function<double&(C&)>([t](C& c) -> double& { return (c.*t).max_distance; }));
  add(r, s + ".freeze_epochs", std::function<int&(C&)>([t](C& c) -> int& { return (c.*t).freeze_epochs; }));
  add(r, s + ".frames_per_sequence",
      std::function<int&(C&)>([t](C& c) -> int& { return (c.*t).frames_per_sequence; }));
  add(r, s + ".online_perturbation",
      std::function<bool&(C&)>([t](C& c) -> bool& { return (c.*t).online_perturbation; }));
  add(r, s + ".grad_clip", std::function<double&(C&)>([t](C& c) -> double& { return (c.*t).grad_clip; }));
  add(r, s + ".seed", std::function<std::uint64_t&(C&)>([t](C& c) -> std::uint64_t& { return (c.*t).seed; }));
}

#define V2X_FIELD(T, key, expr) \
  add(r, key, std::function<T&(PipelineConfig&)>([](PipelineConfig& c) -> T& { return c.expr; }))

const Registry& registry() {
  static const Registry reg = [] {
    Registry r;
    V2X_FIELD(int, "sim.image_width", sim.image_width);
    V2X_FIELD(int, "sim.image_height", sim.image_height);
    V2X_FIELD(double, "sim.hfov_deg", sim.hfov_deg);
    V2X_FIELD(double, "sim.perturb_range_deg", sim.perturb_range_deg);
    V2X_FIELD(int, "sim.scene.num_boxes", sim.scene.num_boxes);
    V2X_FIELD(int, "sim.scene.frames", sim.scene.frames);
    V2X_FIELD(double, "sim.scene.camera_height_min", sim.scene.camera_height_min);
    V2X_FIELD(double, "sim.scene.camera_height_max", sim.scene.camera_height_max);
    V2X_FIELD(double, "sim.scene.camera_lateral_min", sim.scene.camera_lateral_min);
    V2X_FIELD(double, "sim.scene.camera_lateral_max", sim.scene.camera_lateral_max);
    V2X_FIELD(double, "sim.scene.aim_distance_min", sim.scene.aim_distance_min);
    V2X_FIELD(double, "sim.scene.aim_distance_max", sim.scene.aim_distance_max);
    V2X_FIELD(double, "sim.scene.trajectory_near", sim.scene.trajectory_near);
    V2X_FIELD(double, "sim.scene.trajectory_far", sim.scene.trajectory_far);
    V2X_FIELD(double, "sim.scene.speed_min", sim.scene.speed_min);
    V2X_FIELD(double, "sim.scene.speed_max", sim.scene.speed_max);
    V2X_FIELD(double, "sim.scene.frame_dt", sim.scene.frame_dt);
    V2X_FIELD(double, "sim.scene.lidar_height", sim.scene.lidar_height);
    V2X_FIELD(double, "sim.scene.ground_albedo", sim.scene.ground_albedo);
    V2X_FIELD(int, "sim.lidar.rows", sim.lidar.rows);
    V2X_FIELD(int, "sim.lidar.cols", sim.lidar.cols);
    V2X_FIELD(double, "sim.lidar.elevation_min_deg", sim.lidar.elevation_min_deg);
    V2X_FIELD(double, "sim.lidar.elevation_max_deg", sim.lidar.elevation_max_deg);
    V2X_FIELD(double, "sim.lidar.max_range", sim.lidar.max_range);
    V2X_FIELD(double, "sim.lidar.range_jitter", sim.lidar.range_jitter);

    V2X_FIELD(int, "model.image_h", model.image_h);
    V2X_FIELD(int, "model.image_w", model.image_w);
    V2X_FIELD(int, "model.in_channels", model.in_channels);
    V2X_FIELD(int, "model.feat_dim", model.feat_dim);
    V2X_FIELD(int, "model.iters", model.iters);
    V2X_FIELD(int, "model.stage1_hidden", model.stage1_hidden);
    V2X_FIELD(std::uint64_t, "model.init_seed", model.init_seed);
    add_widths(r);
    V2X_FIELD(int, "model.encoder.blocks_per_stage", model.encoder.blocks_per_stage);
    V2X_FIELD(int, "model.encoder.fpn_width", model.encoder.fpn_width);
    V2X_FIELD(int, "model.refine.levels", model.refine.levels);
    V2X_FIELD(int, "model.refine.radius", model.refine.radius);
    V2X_FIELD(int, "model.refine.hidden", model.refine.hidden);
    V2X_FIELD(int, "model.refine.context", model.refine.context);
    V2X_FIELD(int, "model.refine.corr_feat", model.refine.corr_feat);
    V2X_FIELD(int, "model.refine.flow_feat1", model.refine.flow_feat1);
    V2X_FIELD(int, "model.refine.flow_feat2", model.refine.flow_feat2);
    V2X_FIELD(int, "model.refine.motion", model.refine.motion);
    V2X_FIELD(int, "model.refine.flow_hidden", model.refine.flow_hidden);
    V2X_FIELD(int, "model.temporal.patch_h", model.temporal.patch_h);
    V2X_FIELD(int, "model.temporal.patch_w", model.temporal.patch_w);
    V2X_FIELD(int, "model.temporal.d_model", model.temporal.d_model);
    V2X_FIELD(int, "model.temporal.blocks", model.temporal.blocks);
    V2X_FIELD(int, "model.temporal.d_state", model.temporal.d_state);
    V2X_FIELD(int, "model.temporal.expand", model.temporal.expand);
    V2X_FIELD(int, "model.temporal.mlp_ratio", model.temporal.mlp_ratio);
    V2X_FIELD(int, "model.temporal.max_frames", model.temporal.max_frames);
    V2X_FIELD(int, "model.temporal.head_hidden", model.temporal.head_hidden);

    V2X_FIELD(double, "loss.lambda_r", loss.lambda_r);
    V2X_FIELD(double, "loss.lambda_p", loss.lambda_p);
    V2X_FIELD(double, "loss.gamma", loss.gamma);

    add_train(r, "stage1", &PipelineConfig::stage1);
    add_train(r, "stage2", &PipelineConfig::stage2);

    V2X_FIELD(std::vector<double>, "calibrate.ranges_deg", calibrate.ranges_deg);
    V2X_FIELD(std::vector<double>, "eval.thresholds", eval.thresholds);
    return r;
  }();
  return reg;
}

#undef V2X_FIELD

const Field* find(const std::string& key) {
  for (const auto& [k, f] : registry())
    if (k == key) return &f;
  return nullptr;
}

json build(const PipelineConfig& c, const std::string& prefix) {
  json j = json::object();
  for (const auto& [key, f] : registry()) {
    if (key.rfind(prefix, 0) != 0) continue;
    std::string path = key.substr(prefix.size());
    for (auto& ch : path)
      if (ch == '.') ch = '/';
    j[json::json_pointer("/" + path)] = f.get(c);
  }
  return j;
}

void apply(PipelineConfig& c, const json& j, const std::string& prefix) {
  for (const auto& [key, f] : registry()) {
    if (key.rfind(prefix, 0) != 0) continue;
    std::string path = key.substr(prefix.size());
    for (auto& ch : path)
      if (ch == '.') ch = '/';
    const json::json_pointer ptr("/" + path);
    if (!j.contains(ptr)) throw ConfigError("missing key " + key);
    const json& v = j.at(ptr);
    std::vector<std::string> in;
    auto text = [](const json& x) {
      if (x.is_string()) return x.get<std::string>();
      if (x.is_boolean()) return std::string(x.get<bool>() ? "true" : "false");
      return x.dump();
    };
    if (v.is_array())
      for (const auto& x : v) in.push_back(text(x));
    else
      in.push_back(text(v));
    f.set(c, in);
  }
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig c;
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string key = item.fullname();
    const Field* f = find(key);
    if (!f) throw ConfigError("unknown config key " + key);
    f->set(c, item.inputs);
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json to_json(const model::ModelConfig& m) {
  PipelineConfig c;
  c.model = m;
  return build(c, "model.");
}

model::ModelConfig model_config_from_json(const json& j) {
  PipelineConfig c;
  apply(c, j, "model.");
  try {
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c.model;
}

json to_json(const TrainConfig& t) {
  PipelineConfig c;
  c.stage1 = t;
  json j = build(c, "stage1.");
  j["stage"] = t.stage;
  return j;
}

json to_json(const PipelineConfig& c) { return build(c, ""); }

}  // namespace v2xcalib::pipeline
