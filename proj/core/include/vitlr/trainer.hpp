#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vitlr/config_file.hpp"
#include "vitlr/data_synth.hpp"
#include "vitlr/loss.hpp"
#include "vitlr/model.hpp"

namespace vitlr {

struct TrainConfig {
  int steps = 1000;
  int batch_size = 1;  // clips per step
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 1;
  std::string data;          // dataset directory (expects index.json)
  std::string model_config;  // model config path
  std::string out;           // checkpoints + loss log
  int log_interval = 50;
  int checkpoint_interval = 0;  // extra checkpoint every k steps; 0 = final only
  LossConfig loss;

  void validate() const;
  static TrainConfig from_kv(const KeyValueFile& kv);
  static TrainConfig from_file(const std::filesystem::path& path);
  static const std::vector<std::string>& known_keys();
};

// Adam moments, keyed like the parameters they mirror.
struct OptimState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  int64_t step = 0;
};

// Standard Adam with bias correction; increments the step counter once per
// call. Moments are created on first use; afterwards the key sets of params,
// grads and state must coincide.
void adam_step(ParamStore& params, const GradMap& grads, OptimState& state, double lr,
               double beta1, double beta2, double eps);

struct LossRow {
  int step;
  double focal, ciou, total;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::vector<LossRow> rows;
};

// Single-threaded training loop over seeded-shuffled clips; the loss targets
// the current (last) frame of a window of model.frames consecutive frames.
// Writes "step,focal,ciou,total" per step and a checkpoint at the end (plus
// every checkpoint_interval steps). Aborts on non-finite loss, naming the
// step. Deterministic for a fixed TrainConfig on a fixed machine.
TrainResult train(const TrainConfig& cfg);

// Converts an 8-bit frame to a [channels, height, width] tensor in [0, 1].
Tensor frame_to_tensor(const ImageU8& img);

}  // namespace vitlr
