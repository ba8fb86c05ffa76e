#include "v2xcalib/pipeline/train.hpp"

#include "v2xcalib/nn/checkpoint.hpp"
#include "v2xcalib/nn/optim.hpp"
#include "v2xcalib/pipeline/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <random>

namespace v2xcalib::pipeline {

using model::NumericError;
using nlohmann::json;
using nn::Tensor;
using nn::Var;

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

struct Target {
  const Frame* frame = nullptr;
  RigidTransformd T_init;
};

struct LossParts {
  Var<float> total;
  double rotation = 0;
  double point = 0;
};

// lambda_r * mean rotation loss + lambda_p * mean point loss. q is [N, 4] with
// one row per entry of `gt`; every target in group n is scored against row n.
LossParts estimate_loss(const Var<float>& q, const std::vector<UnitQuaterniond>& gt,
                        const std::vector<std::vector<Target>>& groups, const model::LossConfig& cfg) {
  const Var<float> rot = nn::mean(model::rotation_loss(q, model::quaternion_tensor<float>(gt)));
  Var<float> point;
  int count = 0;
  for (std::size_t n = 0; n < groups.size(); ++n) {
    const Var<float> qn = nn::slice(q, 0, static_cast<int>(n), 1);
    for (const Target& t : groups[n]) {
      const Var<float> l = model::point_loss(t.frame->points, qn, t.T_init, t.frame->T_LC);
      point = count++ == 0 ? l : point + l;
    }
  }
  point = point * (1.0f / static_cast<float>(count));
  return {rot * static_cast<float>(cfg.lambda_r) + point * static_cast<float>(cfg.lambda_p), rot.item(), point.item()};
}

std::vector<UnitQuaterniond> to_quaternions(const Tensor<float>& q) {
  std::vector<UnitQuaterniond> out;
  for (int n = 0; n < q.dim(0); ++n) {
    Eigen::Vector4d v(q[4 * n], q[4 * n + 1], q[4 * n + 2], q[4 * n + 3]);
    if (!v.allFinite() || v.norm() == 0.0) throw NumericError("non-finite rotation estimate");
    v.normalize();
    out.push_back(UnitQuaterniond::from_stored(v[0], v[1], v[2], v[3]));
  }
  return out;
}

void check_finite(double loss, int stage, int epoch, long batch) {
  if (!std::isfinite(loss)) {
    throw NumericError("stage " + std::to_string(stage) + ": non-finite loss at epoch " + std::to_string(epoch) +
                       ", batch " + std::to_string(batch));
  }
}

const CameraModeld& shared_camera(const std::vector<FrameSequence>& data) {
  if (data.empty()) throw DatasetError("training set is empty");
  for (const auto& s : data)
    if (!(s.camera == data.front().camera)) throw DatasetError("training sequences use different cameras");
  return data.front().camera;
}

std::vector<Var<float>> values(const nn::NamedParams<float>& ps) {
  std::vector<Var<float>> out;
  for (const auto& [name, v] : ps) out.push_back(v);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

TrainResult train_stage1(Net& net, const std::vector<FrameSequence>& data, const TrainConfig& cfg,
                         const model::LossConfig& loss, double max_depth, const EpochCallback& on_epoch) {
  cfg.validate();
  loss.validate();
  const CameraModeld& cam = shared_camera(data);
  std::vector<std::pair<const FrameSequence*, int>> items;
  for (const auto& s : data)
    for (int i : frames_within(s, cfg.max_distance)) items.emplace_back(&s, i);
  if (items.empty()) throw DatasetError("stage 1: no frames below the distance threshold");

  std::mt19937_64 rng(cfg.seed);
  nn::Adam opt(values(net.prefix_params()));
  const nn::StepDecay sched{cfg.lr, cfg.decay_factor, cfg.decay_every};
  const int iters = net.config().iters;
  TrainResult result;
  long batch_id = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = sched.at(epoch);
    std::shuffle(items.begin(), items.end(), rng);
    EpochRecord rec{1, 'B', epoch, 0, 0, 0, 0, lr, 0, 0, 0};
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
      const std::size_t stop = std::min(items.size(), start + cfg.batch_size);
      std::vector<const Frame*> frames;
      std::vector<RigidTransformd> inits;
      std::vector<UnitQuaterniond> gt;
      std::vector<std::vector<Target>> groups;
      for (std::size_t k = start; k < stop; ++k) {
        const auto& [seq, idx] = items[k];
        const Frame& f = seq->frames[idx];
        const RigidTransformd delta =
            cfg.online_perturbation ? sample_rotation_perturbation(cfg.perturb_deg, rng) : seq->delta;
        const RigidTransformd T_init = cfg.online_perturbation ? delta * f.T_LC : f.T_init;
        frames.push_back(&f);
        inits.push_back(T_init);
        gt.push_back(delta.rotation());
        groups.push_back({Target{&f, T_init}});
      }
      const InputBatch in = make_batch(frames, inits, cam, max_depth);
      const auto ref = net.refine(Var<float>::constant(in.image), Var<float>::constant(in.depth), iters);
      std::vector<Var<float>> per_iter;
      LossParts last;
      for (const auto& flow : ref.flows) {
        last = estimate_loss(net.stage1_quaternion(flow), gt, groups, loss);
        per_iter.push_back(last.total);
      }
      const Var<float> total = model::stage1_total(per_iter, static_cast<float>(loss.gamma));
      check_finite(total.item(), 1, epoch, batch_id);
      const auto q = to_quaternions(net.stage1_quaternion(Var<float>::constant(ref.flows.back().value())).value());
      for (std::size_t n = 0; n < gt.size(); ++n) rec.train_mean_deg += angular_distance(q[n], gt[n]) * kRadToDeg;
      const double w = static_cast<double>(gt.size());
      rec.loss += total.item() * w;
      rec.rotation += last.rotation * w;
      rec.point += last.point * w;
      rec.samples += static_cast<int>(gt.size());

      opt.zero_grad();
      total.backward();
      opt.clip_grad_norm(cfg.grad_clip);
      opt.step(lr);
      ++result.steps;
      ++batch_id;
    }
    if (rec.samples > 0) {
      rec.loss /= rec.samples;
      rec.rotation /= rec.samples;
      rec.point /= rec.samples;
      rec.train_mean_deg /= rec.samples;
    }
    rec.steps = result.steps;
    rec.wall_s = seconds_since(t0);
    result.epochs.push_back(rec);
    if (on_epoch && !on_epoch(rec)) break;
  }
  return result;
}

TrainResult train_stage2(Net& net, const std::vector<FrameSequence>& data, const TrainConfig& cfg,
                         const model::LossConfig& loss, double max_depth, const EpochCallback& on_epoch) {
  cfg.validate();
  loss.validate();
  const CameraModeld& cam = shared_camera(data);
  std::vector<std::pair<const FrameSequence*, std::vector<int>>> items;
  for (const auto& s : data) {
    auto idx = frames_within(s, cfg.max_distance);
    if (!idx.empty()) items.emplace_back(&s, std::move(idx));
  }
  if (items.empty()) throw DatasetError("stage 2: no sequence has a frame below the distance threshold");
  const int T = std::min(cfg.frames_per_sequence, net.config().temporal.max_frames);

  std::mt19937_64 rng(cfg.seed);
  const nn::StepDecay sched{cfg.lr, cfg.decay_factor, cfg.decay_every};
  nn::Adam frozen_opt(values(net.temporal_params()));
  nn::Adam joint_opt(values(net.params()));
  const int iters = net.config().iters;
  TrainResult result;
  long batch_id = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
    const auto t0 = std::chrono::steady_clock::now();
    const bool frozen = epoch < cfg.freeze_epochs;
    nn::Adam& opt = frozen ? frozen_opt : joint_opt;
    const double lr = sched.at(epoch);
    std::shuffle(items.begin(), items.end(), rng);
    EpochRecord rec{2, frozen ? 'A' : 'B', epoch, 0, 0, 0, 0, lr, 0, 0, 0};
    for (std::size_t start = 0; start < items.size(); start += cfg.batch_size) {
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) break;
      const std::size_t stop = std::min(items.size(), start + cfg.batch_size);
      const float scale = 1.0f / static_cast<float>(stop - start);
      opt.zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        const auto& [seq, avail] = items[k];
        std::size_t first = 0;
        const std::size_t count = std::min<std::size_t>(avail.size(), T);
        if (cfg.online_perturbation && avail.size() > count) {
          first = std::uniform_int_distribution<std::size_t>(0, avail.size() - count)(rng);
        }
        const RigidTransformd delta =
            cfg.online_perturbation ? sample_rotation_perturbation(cfg.perturb_deg, rng) : seq->delta;
        std::vector<const Frame*> frames;
        std::vector<RigidTransformd> inits;
        std::vector<Target> group;
        for (std::size_t j = first; j < first + count; ++j) {
          const Frame& f = seq->frames[avail[j]];
          const RigidTransformd T_init = cfg.online_perturbation ? delta * f.T_LC : f.T_init;
          frames.push_back(&f);
          inits.push_back(T_init);
          group.push_back(Target{&f, T_init});
        }
        const InputBatch in = make_batch(frames, inits, cam, max_depth);
        std::vector<Var<float>> flows;
        {
          std::optional<nn::NoGradGuard> guard;
          if (frozen) guard.emplace();
          flows = net.refine(Var<float>::constant(in.image), Var<float>::constant(in.depth), iters).flows;
        }
        const Var<float> q = net.temporal_quaternion(flows);
        const std::vector<UnitQuaterniond> gt{delta.rotation()};
        const LossParts parts = estimate_loss(q, gt, {group}, loss);
        check_finite(parts.total.item(), 2, epoch, batch_id);
        rec.train_mean_deg += angular_distance(to_quaternions(q.value())[0], gt[0]) * kRadToDeg;
        rec.loss += parts.total.item();
        rec.rotation += parts.rotation;
        rec.point += parts.point;
        ++rec.samples;
        (parts.total * scale).backward();
      }
      opt.clip_grad_norm(cfg.grad_clip);
      opt.step(lr);
      ++result.steps;
      ++batch_id;
    }
    if (rec.samples > 0) {
      rec.loss /= rec.samples;
      rec.rotation /= rec.samples;
      rec.point /= rec.samples;
      rec.train_mean_deg /= rec.samples;
    }
    rec.steps = result.steps;
    rec.wall_s = seconds_since(t0);
    result.epochs.push_back(rec);
    if (on_epoch && !on_epoch(rec)) break;
  }
  return result;
}

json to_json(const EpochRecord& r) {
  return json{{"stage", r.stage},     {"phase", std::string(1, r.phase)}, {"epoch", r.epoch},
              {"steps", r.steps},     {"loss", r.loss},                   {"rotation_loss", r.rotation},
              {"point_loss", r.point}, {"lr", r.lr},                      {"wall_s", r.wall_s},
              {"train_mean_deg", r.train_mean_deg}, {"samples", r.samples}};
}

void save_model(const std::filesystem::path& path, const Net& net, const ModelMeta& meta) {
  const json j{{"format", "v2xcalib-model"},
               {"stage", meta.stage},
               {"perturb_deg", meta.perturb_deg},
               {"max_depth", meta.max_depth},
               {"model", to_json(net.config())},
               {"extra", meta.extra}};
  nn::save_checkpoint(path, net.params(), j.dump());
}

LoadedModel load_model(const std::filesystem::path& path) {
  const nn::Checkpoint ckpt = nn::read_checkpoint(path);
  json j;
  try {
    j = json::parse(ckpt.metadata);
  } catch (const json::exception& e) {
    throw nn::CheckpointError(path.string() + ": metadata is not JSON: " + e.what());
  }
  if (j.value("format", "") != "v2xcalib-model") throw nn::CheckpointError(path.string() + ": not a model checkpoint");
  LoadedModel out;
  try {
    out.meta.stage = j.at("stage").get<int>();
    out.meta.perturb_deg = j.at("perturb_deg").get<double>();
    out.meta.max_depth = j.at("max_depth").get<double>();
    out.meta.extra = j.value("extra", json::object());
    out.net = Net(model_config_from_json(j.at("model")));
  } catch (const json::exception& e) {
    throw nn::CheckpointError(path.string() + ": bad metadata: " + e.what());
  }
  auto params = out.net.params();
  nn::load_params(ckpt, params);
  return out;
}

}  // namespace v2xcalib::pipeline
