#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vitlr/config_file.hpp"
#include "vitlr/prediction.hpp"
#include "vitlr/tape.hpp"
#include "vitlr/tensor.hpp"

namespace vitlr {

// Network hyperparameters. Parameter shapes are fully determined by this
// struct: constructing twice from the same config yields identical shapes.
struct ModelConfig {
  int frames = 3;    // consecutive input frames, current frame last
  int height = 128;  // input pixels
  int width = 256;
  int channels = 3;
  int queries = 16;  // object query slots (max lights per frame)
  int states = 4;    // real traffic-light states; background is appended
  int proj_kernel = 3;

  int stage1_width = 32;  // backbone stage widths; each stage strides 2
  int stage2_width = 64;
  int stage3_width = 96;

  int encoder_depth = 2;
  int decoder_depth = 2;
  int encoder_hidden = 96;  // hidden width of the encoder block MLP

  int query_rows = 4;  // query grid, rows * cols == queries
  int query_cols = 4;
  int query_width = 64;  // channel width of query features

  void validate() const;

  int feat_h() const { return height / 8; }
  int feat_w() const { return width / 8; }
  int fused_width() const { return frames * stage3_width; }
  int stream_width() const { return stage3_width / 2; }

  static ModelConfig from_kv(const KeyValueFile& kv);
  static ModelConfig from_file(const std::filesystem::path& path);
  static const std::vector<std::string>& known_keys();
};

// Named parameter collection with insertion order preserved (checkpoint and
// iteration order). Buffers (batchnorm running stats) are non-trainable.
class ParamStore {
 public:
  void add(std::string name, Tensor t, bool trainable = true);
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool trainable(const std::string& name) const { return !non_trainable_.count(name); }
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> tensors_;
  std::unordered_set<std::string> non_trainable_;
};

enum class OpKind {
  Conv2d,
  DepthwiseConv2d,
  BatchNorm,
  LayerNorm,
  Dense,
  Flatten,
  Reshape,
  AvgPool,
  Upsample,
  Concat,
  Relu,
  Sigmoid,
  Softmax,
  Add,
};

const char* op_kind_name(OpKind kind);

// One structural operator instance of the network. Shared application across
// frames counts once (the parameters are shared).
struct OpInstance {
  std::string name;
  OpKind kind;
  int kernel = 0;  // conv/dwconv only
  int in_ch = 0;
  int out_ch = 0;
  int stride = 1;
  int padding = 0;
  bool zero_init = false;  // final conv of a residual branch
};

// The full operator inventory implied by a config, in construction order.
std::vector<OpInstance> enumerate_ops(const ModelConfig& cfg);

enum class LintCategory { UnsupportedOp, KernelPreference };

struct LintItem {
  OpInstance op;
  LintCategory category;
  std::string note;
};

// Operator-compatibility report against the embedded-runtime allowlist
// {Dense, Flatten, Reshape, BatchNormalization, Conv2D(+depthwise)}.
// Everything else is at most a warning, never an error.
struct LintReport {
  std::vector<OpInstance> ops;
  std::vector<LintItem> warnings;

  int unsupported_op_count() const;
  int kernel_preference_count() const;
  std::string to_string() const;
};

LintReport lint_graph(const ModelConfig& cfg);

// Per-frame backbone output: decoupled regression / classification streams
// sharing spatial extents.
struct FeatureSet {
  Tensor regression;
  Tensor classification;
};

class ViTLRModel {
 public:
  // Fresh parameters: conv/dense weights uniform in +-1/sqrt(fan_in),
  // biases zero, batchnorm gamma=1 beta=0, and the final conv of every
  // residual branch zeroed so encoder/decoder start as the identity.
  static ViTLRModel create(const ModelConfig& cfg, uint64_t seed);

  // Adopts existing parameters (e.g. a loaded checkpoint); every expected
  // name must be present with the expected shape.
  static ViTLRModel from_params(const ModelConfig& cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }

  // Full forward pass for one clip of exactly cfg.frames frames, each
  // [channels, height, width], ordered oldest -> current.
  Prediction model_forward(const std::vector<Tensor>& clip_frames);

  // Spec-level stage entry points (each runs on a private non-recording
  // tape; shapes as documented in the README).
  FeatureSet backbone_forward(const Tensor& frame);
  Tensor conv_projection(const Tensor& features);  // -> tokens [N, C, Hf*Wf]
  Tensor encoder_forward(const Tensor& fused_map);
  Tensor decoder_forward(const Tensor& encoded, const Tensor& queries);
  Prediction heads_forward(const Tensor& query_grid);

  // Traced forward for training; gradients reach every parameter through
  // tape.backward(). Mutates batchnorm running stats in training mode.
  TracedPrediction forward_traced(Tape& tape, const std::vector<Tensor>& clip_frames);

  LintReport lint() const { return lint_graph(cfg_); }

 private:
  ViTLRModel(ModelConfig cfg, ParamStore params)
      : cfg_(std::move(cfg)), params_(std::move(params)) {}

  // Per-tape parameter handles, created lazily.
  struct Binding {
    std::unordered_map<std::string, Var> vars;
  };
  Var param(Tape& tape, Binding& bind, const std::string& name);

  Var trace_backbone_streams(Tape& tape, Binding& bind, Var frames);  // concat of R and C
  Var trace_projection(Tape& tape, Binding& bind, Var maps);          // tokens [N, C, L]
  Var trace_encoder(Tape& tape, Binding& bind, Var fused);
  Var trace_decoder(Tape& tape, Binding& bind, Var encoded, Var queries);
  TracedPrediction trace_heads(Tape& tape, Binding& bind, Var query_grid);
  Var trace_convnext_block(Tape& tape, Binding& bind, Var x, const std::string& prefix,
                           int kernel, int hidden);

  ModelConfig cfg_;
  ParamStore params_;
  bool training_ = false;
};

}  // namespace vitlr
