#include "vitlr/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iostream>

#include "vitlr/checkpoint.hpp"
#include "vitlr/rng.hpp"

namespace vitlr {

void TrainConfig::validate() const {
  check_arg(steps >= 1, "steps must be >= 1");
  check_arg(batch_size >= 1, "batch_size must be >= 1");
  check_arg(lr > 0.0, "lr must be > 0");
  check_arg(beta1 > 0.0 && beta1 < 1.0, "beta1 must be in (0, 1)");
  check_arg(beta2 > 0.0 && beta2 < 1.0, "beta2 must be in (0, 1)");
  check_arg(eps > 0.0, "eps must be > 0");
  check_arg(log_interval >= 1, "log_interval must be >= 1");
  check_arg(checkpoint_interval >= 0, "checkpoint_interval must be >= 0");
  loss.validate();
}

const std::vector<std::string>& TrainConfig::known_keys() {
  static const std::vector<std::string> keys = {
      "steps",      "batch_size",         "lr",          "beta1",
      "beta2",      "eps",                "seed",        "data",
      "model_config", "out",              "log_interval", "checkpoint_interval",
      "loss_lambda", "focal_alpha",       "focal_gamma", "match_class_weight",
      "match_box_weight",
  };
  return keys;
}

TrainConfig TrainConfig::from_kv(const KeyValueFile& kv) {
  kv.require_known(known_keys());
  TrainConfig c;
  c.steps = kv.get_int("steps", c.steps);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.lr = kv.get_double("lr", c.lr);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.eps = kv.get_double("eps", c.eps);
  c.seed = kv.get_uint64("seed", c.seed);
  c.data = kv.get_string("data", c.data);
  c.model_config = kv.get_string("model_config", c.model_config);
  c.out = kv.get_string("out", c.out);
  c.log_interval = kv.get_int("log_interval", c.log_interval);
  c.checkpoint_interval = kv.get_int("checkpoint_interval", c.checkpoint_interval);
  c.loss.ciou_weight = kv.get_double("loss_lambda", c.loss.ciou_weight);
  c.loss.focal_alpha = kv.get_double("focal_alpha", c.loss.focal_alpha);
  c.loss.focal_gamma = kv.get_double("focal_gamma", c.loss.focal_gamma);
  c.loss.match_class_weight = kv.get_double("match_class_weight", c.loss.match_class_weight);
  c.loss.match_box_weight = kv.get_double("match_box_weight", c.loss.match_box_weight);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  return from_kv(KeyValueFile::parse_file(path));
}

void adam_step(ParamStore& params, const GradMap& grads, OptimState& state, double lr,
               double beta1, double beta2, double eps) {
  // Trainable parameter names, in store order.
  std::vector<std::string> names;
  for (const std::string& name : params.names()) {
    if (params.trainable(name)) names.push_back(name);
  }
  for (const std::string& name : names) {
    check_arg(grads.count(name) > 0, "adam_step: missing gradient for '" + name + "'");
  }
  for (const auto& [name, g] : grads) {
    check_arg(params.contains(name) && params.trainable(name),
              "adam_step: gradient for unknown parameter '" + name + "'");
  }
  if (state.step == 0 && state.m.empty()) {
    for (const std::string& name : names) {
      state.m.emplace(name, Tensor(params.at(name).shape()));
      state.v.emplace(name, Tensor(params.at(name).shape()));
    }
  }
  for (const std::string& name : names) {
    check_arg(state.m.count(name) > 0 && state.v.count(name) > 0,
              "adam_step: missing optimizer state for '" + name + "'");
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (const std::string& name : names) {
    Tensor& theta = params.at(name);
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    check_arg(g.same_shape(theta),
              "adam_step: gradient shape mismatch for '" + name + "'");
    for (int64_t i = 0; i < theta.numel(); ++i) {
      const double gi = g[i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
      const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      theta[i] -= static_cast<float>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
    }
  }
}

Tensor frame_to_tensor(const ImageU8& img) {
  Tensor t({3, img.height, img.width});
  const size_t plane = static_cast<size_t>(img.height) * img.width;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const uint8_t* p = img.px(x, y);
      const size_t i = static_cast<size_t>(y) * img.width + x;
      t.data()[i] = p[0] / 255.0f;
      t.data()[plane + i] = p[1] / 255.0f;
      t.data()[2 * plane + i] = p[2] / 255.0f;
    }
  }
  return t;
}

namespace {

std::vector<GroundTruth> gts_of_frame(const FrameAnnotation& ann) {
  std::vector<GroundTruth> gts;
  for (const LightAnnotation& l : ann.lights) gts.push_back({l.box, l.state});
  return gts;
}

void merge_grads(GradMap& into, const GradMap& from) {
  if (into.empty()) {
    into = from;
    return;
  }
  for (auto& [name, g] : into) {
    const Tensor& other = from.at(name);
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += other[i];
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const ModelConfig model_cfg = ModelConfig::from_file(cfg.model_config);
  const DatasetIndex index = load_index(std::filesystem::path(cfg.data) / "index.json");
  if (index.train.empty()) throw std::runtime_error("dataset has no training clips: " + cfg.data);
  for (const IndexEntry& e : index.train) {
    check_arg(e.n_frames >= model_cfg.frames,
              "clip " + e.dir + " has " + std::to_string(e.n_frames) + " frames, model needs " +
                  std::to_string(model_cfg.frames));
  }

  std::filesystem::create_directories(cfg.out);
  const std::filesystem::path loss_path = std::filesystem::path(cfg.out) / "loss.csv";
  std::ofstream log(loss_path);
  if (!log) throw std::runtime_error("cannot write loss log: " + loss_path.string());
  log << "step,focal,ciou,total\n";

  ViTLRModel model = ViTLRModel::create(model_cfg, cfg.seed);
  model.set_training(true);
  OptimState optim;
  SplitMix64 rng(SplitMix64::mix(cfg.seed, 0x7EA1A1ull));

  std::vector<int> order(index.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();  // forces an initial shuffle

  const auto next_clip = [&]() -> const IndexEntry& {
    if (cursor >= order.size()) {
      for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
      }
      cursor = 0;
    }
    return index.train[order[cursor++]];
  };

  TrainResult result;
  result.loss_log = loss_path;
  const std::filesystem::path ckpt_path = std::filesystem::path(cfg.out) / "model.ckpt";

  for (int step = 1; step <= cfg.steps; ++step) {
    GradMap grads;
    double focal_sum = 0.0, ciou_sum = 0.0, total_sum = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const IndexEntry& entry = next_clip();
      const ClipData clip = load_clip(std::filesystem::path(cfg.data) / entry.dir);
      const int nf = static_cast<int>(clip.frames.size());
      const int current = model_cfg.frames - 1 + (nf > model_cfg.frames
                              ? rng.uniform_int(0, nf - model_cfg.frames)
                              : 0);
      std::vector<Tensor> window;
      for (int f = current - model_cfg.frames + 1; f <= current; ++f) {
        window.push_back(frame_to_tensor(clip.frames[f]));
      }

      Tape tape(true);
      const TracedPrediction traced = model.forward_traced(tape, window);
      if (!tape.value(traced.boxes_px).all_finite() ||
          !tape.value(traced.scores).all_finite()) {
        throw std::runtime_error("non-finite prediction at step " + std::to_string(step) +
                                 " (training aborted)");
      }
      const TracedLoss loss = total_loss_traced(
          tape, traced, gts_of_frame(clip.annotation.frames[current]), cfg.loss);
      Var objective = loss.total;
      if (cfg.batch_size > 1) {
        objective = tape.scale(objective, 1.0f / static_cast<float>(cfg.batch_size));
      }
      merge_grads(grads, tape.backward(objective));
      focal_sum += loss.values.focal;
      ciou_sum += loss.values.ciou;
      total_sum += loss.values.total;
    }
    const double focal = focal_sum / cfg.batch_size;
    const double ciou = ciou_sum / cfg.batch_size;
    const double total = total_sum / cfg.batch_size;
    if (!std::isfinite(total)) {
      throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                               " (training aborted)");
    }

    adam_step(model.params(), grads, optim, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);

    log << step << "," << focal << "," << ciou << "," << total << "\n";
    result.rows.push_back({step, focal, ciou, total});
    if (step % cfg.log_interval == 0 || step == cfg.steps) {
      std::cout << "step " << step << "  focal " << focal << "  ciou " << ciou << "  total "
                << total << std::endl;
    }
    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
      save_checkpoint(model.params(),
                      std::filesystem::path(cfg.out) / ("model_step" + std::to_string(step) +
                                                        ".ckpt"));
    }
  }

  save_checkpoint(model.params(), ckpt_path);
  result.checkpoint = ckpt_path;
  return result;
}

}  // namespace vitlr
