#include "vitlr/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vitlr/rng.hpp"

namespace vitlr {

namespace {

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;
constexpr float kLnEps = 1e-5f;

}  // namespace

// ---- config -----------------------------------------------------------

void ModelConfig::validate() const {
  check_arg(frames >= 1, "frames must be >= 1");
  check_arg(queries >= 1, "queries must be >= 1");
  check_arg(states >= 2, "states must be >= 2");
  check_arg(channels >= 1, "channels must be >= 1");
  check_arg(proj_kernel == 3 || proj_kernel == 7, "proj_kernel must be 3 or 7");
  check_arg(height >= 8 && height % 8 == 0, "height must be a positive multiple of 8");
  check_arg(width >= 8 && width % 8 == 0, "width must be a positive multiple of 8");
  check_arg(stage1_width >= 1 && stage2_width >= 1 && stage3_width >= 2,
            "backbone widths must be positive");
  check_arg(stage3_width % 2 == 0, "stage3_width must be even (regression/classification split)");
  check_arg(encoder_depth >= 0, "encoder_depth must be >= 0");
  check_arg(decoder_depth >= 1, "decoder_depth must be >= 1");
  check_arg(encoder_hidden >= 1, "encoder_hidden must be >= 1");
  check_arg(query_rows >= 1 && query_cols >= 1 && query_rows * query_cols == queries,
            "query grid " + std::to_string(query_rows) + "x" + std::to_string(query_cols) +
                " must factor queries = " + std::to_string(queries));
  check_arg(query_width >= 1, "query_width must be >= 1");
  check_arg(feat_h() % query_rows == 0,
            "feature height " + std::to_string(feat_h()) + " must be divisible by query_rows " +
                std::to_string(query_rows));
  check_arg(feat_w() % query_cols == 0,
            "feature width " + std::to_string(feat_w()) + " must be divisible by query_cols " +
                std::to_string(query_cols));
}

const std::vector<std::string>& ModelConfig::known_keys() {
  static const std::vector<std::string> keys = {
      "frames",        "height",        "width",         "channels",
      "queries",       "states",        "proj_kernel",   "stage1_width",
      "stage2_width",  "stage3_width",  "encoder_depth", "decoder_depth",
      "encoder_hidden", "query_rows",   "query_cols",    "query_width",
  };
  return keys;
}

ModelConfig ModelConfig::from_kv(const KeyValueFile& kv) {
  kv.require_known(known_keys());
  ModelConfig c;
  c.frames = kv.get_int("frames", c.frames);
  c.height = kv.get_int("height", c.height);
  c.width = kv.get_int("width", c.width);
  c.channels = kv.get_int("channels", c.channels);
  c.queries = kv.get_int("queries", c.queries);
  c.states = kv.get_int("states", c.states);
  c.proj_kernel = kv.get_int("proj_kernel", c.proj_kernel);
  c.stage1_width = kv.get_int("stage1_width", c.stage1_width);
  c.stage2_width = kv.get_int("stage2_width", c.stage2_width);
  c.stage3_width = kv.get_int("stage3_width", c.stage3_width);
  c.encoder_depth = kv.get_int("encoder_depth", c.encoder_depth);
  c.decoder_depth = kv.get_int("decoder_depth", c.decoder_depth);
  c.encoder_hidden = kv.get_int("encoder_hidden", c.encoder_hidden);
  c.query_rows = kv.get_int("query_rows", c.query_rows);
  c.query_cols = kv.get_int("query_cols", c.query_cols);
  c.query_width = kv.get_int("query_width", c.query_width);
  c.validate();
  return c;
}

ModelConfig ModelConfig::from_file(const std::filesystem::path& path) {
  return from_kv(KeyValueFile::parse_file(path));
}

// ---- parameter store ----------------------------------------------------

void ParamStore::add(std::string name, Tensor t, bool trainable) {
  check_arg(!contains(name), "duplicate parameter name '" + name + "'");
  order_.push_back(name);
  if (!trainable) non_trainable_.insert(name);
  tensors_.emplace(std::move(name), std::move(t));
}

Tensor& ParamStore::at(const std::string& name) {
  const auto it = tensors_.find(name);
  check_arg(it != tensors_.end(), "unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  check_arg(it != tensors_.end(), "unknown parameter '" + name + "'");
  return it->second;
}

// ---- operator inventory -------------------------------------------------

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::Conv2d: return "Conv2D";
    case OpKind::DepthwiseConv2d: return "DepthwiseConv2D";
    case OpKind::BatchNorm: return "BatchNormalization";
    case OpKind::LayerNorm: return "LayerNorm";
    case OpKind::Dense: return "Dense";
    case OpKind::Flatten: return "Flatten";
    case OpKind::Reshape: return "Reshape";
    case OpKind::AvgPool: return "AveragePool";
    case OpKind::Upsample: return "Upsample";
    case OpKind::Concat: return "Concat";
    case OpKind::Relu: return "ReLU";
    case OpKind::Sigmoid: return "Sigmoid";
    case OpKind::Softmax: return "Softmax";
    case OpKind::Add: return "Add";
  }
  return "?";
}

namespace {

void append_convnext_block(std::vector<OpInstance>& ops, const std::string& prefix, int kernel,
                           int channels, int hidden) {
  ops.push_back({prefix + ".dw", OpKind::DepthwiseConv2d, kernel, channels, channels, 1,
                 (kernel - 1) / 2});
  ops.push_back({prefix + ".ln", OpKind::LayerNorm, 0, channels, channels});
  ops.push_back({prefix + ".pw1", OpKind::Conv2d, 1, channels, hidden});
  ops.push_back({prefix + ".relu", OpKind::Relu});
  ops.push_back({prefix + ".pw2", OpKind::Conv2d, 1, hidden, channels, 1, 0, true});
  ops.push_back({prefix + ".add", OpKind::Add});
}

}  // namespace

std::vector<OpInstance> enumerate_ops(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<OpInstance> ops;
  const int widths[4] = {cfg.channels, cfg.stage1_width, cfg.stage2_width, cfg.stage3_width};
  for (int s = 1; s <= 3; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s);
    ops.push_back({prefix + ".conv", OpKind::Conv2d, 3, widths[s - 1], widths[s], 2, 1});
    ops.push_back({prefix + ".bn", OpKind::BatchNorm, 0, widths[s], widths[s]});
    ops.push_back({prefix + ".relu", OpKind::Relu});
  }
  ops.push_back({"backbone.split_reg", OpKind::Conv2d, 1, cfg.stage3_width, cfg.stream_width()});
  ops.push_back({"backbone.split_cls", OpKind::Conv2d, 1, cfg.stage3_width, cfg.stream_width()});
  ops.push_back({"backbone.streams", OpKind::Concat, 0, cfg.stage3_width, cfg.stage3_width});

  const int pk = cfg.proj_kernel;
  ops.push_back({"proj.dw", OpKind::DepthwiseConv2d, pk, cfg.stage3_width, cfg.stage3_width, 1,
                 (pk - 1) / 2});
  ops.push_back({"proj.bn", OpKind::BatchNorm, 0, cfg.stage3_width, cfg.stage3_width});
  ops.push_back({"proj.pw", OpKind::Conv2d, 1, cfg.stage3_width, cfg.stage3_width});
  ops.push_back({"proj.flatten", OpKind::Flatten});

  ops.push_back({"fuse.reshape", OpKind::Reshape, 0, cfg.stage3_width, cfg.fused_width()});

  for (int i = 0; i < cfg.encoder_depth; ++i) {
    append_convnext_block(ops, "encoder.block" + std::to_string(i), 7, cfg.fused_width(),
                          cfg.encoder_hidden);
  }

  for (int i = 0; i < cfg.decoder_depth; ++i) {
    const std::string prefix = "decoder.layer" + std::to_string(i);
    append_convnext_block(ops, prefix + ".sim", 3, cfg.query_width, 2 * cfg.query_width);
    ops.push_back({prefix + ".cim.enc_proj", OpKind::Conv2d, 1, cfg.fused_width(),
                   cfg.query_width});
    ops.push_back({prefix + ".cim.upsample", OpKind::Upsample});
    ops.push_back({prefix + ".cim.mix_add", OpKind::Add});
    ops.push_back({prefix + ".cim.dw", OpKind::DepthwiseConv2d, 3, cfg.query_width,
                   cfg.query_width, 1, 1, true});
    ops.push_back({prefix + ".cim.pool", OpKind::AvgPool});
    ops.push_back({prefix + ".cim.add", OpKind::Add});
    ops.push_back({prefix + ".ffn.pw1", OpKind::Conv2d, 1, cfg.query_width, 2 * cfg.query_width});
    ops.push_back({prefix + ".ffn.relu", OpKind::Relu});
    ops.push_back({prefix + ".ffn.pw2", OpKind::Conv2d, 1, 2 * cfg.query_width, cfg.query_width,
                   1, 0, true});
    ops.push_back({prefix + ".ffn.add", OpKind::Add});
  }

  ops.push_back({"head.readout", OpKind::Reshape, 0, cfg.query_width, cfg.query_width});
  ops.push_back({"head.box", OpKind::Dense, 0, cfg.query_width, 4});
  ops.push_back({"head.box_sigmoid", OpKind::Sigmoid});
  ops.push_back({"head.cls", OpKind::Dense, 0, cfg.query_width, cfg.states + 1});
  ops.push_back({"head.cls_softmax", OpKind::Softmax});
  return ops;
}

// ---- lint ---------------------------------------------------------------

int LintReport::unsupported_op_count() const {
  return static_cast<int>(std::count_if(warnings.begin(), warnings.end(), [](const LintItem& i) {
    return i.category == LintCategory::UnsupportedOp;
  }));
}

int LintReport::kernel_preference_count() const {
  return static_cast<int>(std::count_if(warnings.begin(), warnings.end(), [](const LintItem& i) {
    return i.category == LintCategory::KernelPreference;
  }));
}

std::string LintReport::to_string() const {
  std::ostringstream os;
  os << "operator inventory: " << ops.size() << " instances\n";
  for (const OpInstance& op : ops) {
    os << "  " << op.name << "  " << op_kind_name(op.kind);
    if (op.kernel > 0) os << " k" << op.kernel << "x" << op.kernel;
    os << "\n";
  }
  os << "warnings: " << warnings.size() << " (unsupported " << unsupported_op_count()
     << ", kernel preference " << kernel_preference_count() << ")\n";
  for (const LintItem& item : warnings) {
    os << "  [" << (item.category == LintCategory::UnsupportedOp ? "unsupported-op"
                                                                 : "kernel-preference")
       << "] " << item.op.name << ": " << item.note << "\n";
  }
  return os.str();
}

LintReport lint_graph(const ModelConfig& cfg) {
  LintReport report;
  report.ops = enumerate_ops(cfg);
  for (const OpInstance& op : report.ops) {
    if (op.kind == OpKind::LayerNorm) {
      report.warnings.push_back(
          {op, LintCategory::UnsupportedOp,
           "LayerNorm is outside the supported operator set {Dense, Flatten, Reshape, "
           "BatchNormalization, Conv2D}"});
    }
    if ((op.kind == OpKind::Conv2d || op.kind == OpKind::DepthwiseConv2d) && op.kernel != 1 &&
        op.kernel != 3) {
      report.warnings.push_back({op, LintCategory::KernelPreference,
                                 "kernel " + std::to_string(op.kernel) + "x" +
                                     std::to_string(op.kernel) +
                                     " violates the 3x3 preference (extra NPU cost)"});
    }
  }
  return report;
}

// ---- parameter construction ----------------------------------------------

namespace {

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  bool trainable = true;
  enum class Init { Uniform, Zero, One } init = Init::Uniform;
  int fan_in = 0;
};

std::vector<ParamSpec> expected_params(const ModelConfig& cfg) {
  std::vector<ParamSpec> specs;
  for (const OpInstance& op : enumerate_ops(cfg)) {
    switch (op.kind) {
      case OpKind::Conv2d:
        specs.push_back({op.name + ".weight",
                         {op.out_ch, op.in_ch, op.kernel, op.kernel},
                         true,
                         op.zero_init ? ParamSpec::Init::Zero : ParamSpec::Init::Uniform,
                         op.in_ch * op.kernel * op.kernel});
        specs.push_back({op.name + ".bias", {op.out_ch}, true, ParamSpec::Init::Zero, 0});
        break;
      case OpKind::DepthwiseConv2d:
        specs.push_back({op.name + ".weight",
                         {op.out_ch, 1, op.kernel, op.kernel},
                         true,
                         op.zero_init ? ParamSpec::Init::Zero : ParamSpec::Init::Uniform,
                         op.kernel * op.kernel});
        specs.push_back({op.name + ".bias", {op.out_ch}, true, ParamSpec::Init::Zero, 0});
        break;
      case OpKind::BatchNorm:
        specs.push_back({op.name + ".gamma", {op.out_ch}, true, ParamSpec::Init::One, 0});
        specs.push_back({op.name + ".beta", {op.out_ch}, true, ParamSpec::Init::Zero, 0});
        specs.push_back(
            {op.name + ".running_mean", {op.out_ch}, false, ParamSpec::Init::Zero, 0});
        specs.push_back({op.name + ".running_var", {op.out_ch}, false, ParamSpec::Init::One, 0});
        break;
      case OpKind::LayerNorm:
        specs.push_back({op.name + ".gamma", {op.out_ch}, true, ParamSpec::Init::One, 0});
        specs.push_back({op.name + ".beta", {op.out_ch}, true, ParamSpec::Init::Zero, 0});
        break;
      case OpKind::Dense:
        specs.push_back({op.name + ".weight",
                         {op.out_ch, op.in_ch},
                         true,
                         ParamSpec::Init::Uniform,
                         op.in_ch});
        specs.push_back({op.name + ".bias", {op.out_ch}, true, ParamSpec::Init::Zero, 0});
        break;
      default:
        break;
    }
  }
  specs.push_back({"decoder.queries",
                   {1, cfg.query_width, cfg.query_rows, cfg.query_cols},
                   true,
                   ParamSpec::Init::Uniform,
                   1});  // fan_in 1 -> uniform(-1, 1)
  return specs;
}

}  // namespace

ViTLRModel ViTLRModel::create(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamStore store;
  SplitMix64 rng(seed);
  for (const ParamSpec& spec : expected_params(cfg)) {
    Tensor t(spec.shape);
    switch (spec.init) {
      case ParamSpec::Init::Zero:
        break;
      case ParamSpec::Init::One:
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = 1.0f;
        break;
      case ParamSpec::Init::Uniform: {
        const float bound = 1.0f / std::sqrt(static_cast<float>(std::max(1, spec.fan_in)));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_float(-bound, bound);
        break;
      }
    }
    store.add(spec.name, std::move(t), spec.trainable);
  }
  return ViTLRModel(cfg, std::move(store));
}

ViTLRModel ViTLRModel::from_params(const ModelConfig& cfg, ParamStore params) {
  cfg.validate();
  const auto specs = expected_params(cfg);
  check_arg(params.size() == specs.size(),
            "parameter count " + std::to_string(params.size()) + " does not match config (" +
                std::to_string(specs.size()) + " expected)");
  for (const ParamSpec& spec : specs) {
    check_arg(params.contains(spec.name), "missing parameter '" + spec.name + "'");
    const Tensor& t = params.at(spec.name);
    check_arg(t.shape() == spec.shape,
              "parameter '" + spec.name + "' has shape " + t.shape_str() + ", expected " +
                  shape_to_string(spec.shape));
  }
  return ViTLRModel(cfg, std::move(params));
}

// ---- forward ------------------------------------------------------------

Var ViTLRModel::param(Tape& tape, Binding& bind, const std::string& name) {
  const auto it = bind.vars.find(name);
  if (it != bind.vars.end()) return it->second;
  const Var v = tape.leaf(params_.at(name), name);
  bind.vars.emplace(name, v);
  return v;
}

Var ViTLRModel::trace_convnext_block(Tape& tape, Binding& bind, Var x, const std::string& prefix,
                                     int kernel, int hidden) {
  (void)hidden;  // hidden width is baked into the parameter shapes
  Var t = tape.dwconv2d(x, param(tape, bind, prefix + ".dw.weight"),
                        param(tape, bind, prefix + ".dw.bias"), 1, (kernel - 1) / 2);
  t = tape.layernorm(t, param(tape, bind, prefix + ".ln.gamma"),
                     param(tape, bind, prefix + ".ln.beta"), kLnEps);
  t = tape.conv2d(t, param(tape, bind, prefix + ".pw1.weight"),
                  param(tape, bind, prefix + ".pw1.bias"), 1, 0);
  t = tape.relu(t);
  t = tape.conv2d(t, param(tape, bind, prefix + ".pw2.weight"),
                  param(tape, bind, prefix + ".pw2.bias"), 1, 0);
  return tape.add(x, t);
}

Var ViTLRModel::trace_backbone_streams(Tape& tape, Binding& bind, Var frames) {
  Var x = frames;
  for (int s = 1; s <= 3; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s);
    x = tape.conv2d(x, param(tape, bind, prefix + ".conv.weight"),
                    param(tape, bind, prefix + ".conv.bias"), 2, 1);
    x = tape.batchnorm2d(x, param(tape, bind, prefix + ".bn.gamma"),
                         param(tape, bind, prefix + ".bn.beta"),
                         params_.at(prefix + ".bn.running_mean"),
                         params_.at(prefix + ".bn.running_var"), kBnEps, training_, kBnMomentum);
    x = tape.relu(x);
  }
  const Var reg = tape.conv2d(x, param(tape, bind, "backbone.split_reg.weight"),
                              param(tape, bind, "backbone.split_reg.bias"), 1, 0);
  const Var cls = tape.conv2d(x, param(tape, bind, "backbone.split_cls.weight"),
                              param(tape, bind, "backbone.split_cls.bias"), 1, 0);
  return tape.concat_channels({reg, cls});
}

Var ViTLRModel::trace_projection(Tape& tape, Binding& bind, Var maps) {
  Var t = tape.dwconv2d(maps, param(tape, bind, "proj.dw.weight"),
                        param(tape, bind, "proj.dw.bias"), 1, (cfg_.proj_kernel - 1) / 2);
  t = tape.batchnorm2d(t, param(tape, bind, "proj.bn.gamma"), param(tape, bind, "proj.bn.beta"),
                       params_.at("proj.bn.running_mean"), params_.at("proj.bn.running_var"),
                       kBnEps, training_, kBnMomentum);
  t = tape.conv2d(t, param(tape, bind, "proj.pw.weight"), param(tape, bind, "proj.pw.bias"), 1,
                  0);
  const Tensor& v = tape.value(t);
  return tape.reshape(t, {v.extent(0), v.extent(1), v.extent(2) * v.extent(3)});
}

Var ViTLRModel::trace_encoder(Tape& tape, Binding& bind, Var fused) {
  Var x = fused;
  for (int i = 0; i < cfg_.encoder_depth; ++i) {
    x = trace_convnext_block(tape, bind, x, "encoder.block" + std::to_string(i), 7,
                             cfg_.encoder_hidden);
  }
  return x;
}

Var ViTLRModel::trace_decoder(Tape& tape, Binding& bind, Var encoded, Var queries) {
  const Tensor& enc = tape.value(encoded);
  const int fh = enc.extent(2), fw = enc.extent(3);
  check_arg(fh % cfg_.query_rows == 0 && fw % cfg_.query_cols == 0,
            "encoded map " + enc.shape_str() + " is not divisible by the query grid");
  Var q = queries;
  for (int i = 0; i < cfg_.decoder_depth; ++i) {
    const std::string prefix = "decoder.layer" + std::to_string(i);
    q = trace_convnext_block(tape, bind, q, prefix + ".sim", 3, 2 * cfg_.query_width);
    const Var enc_p = tape.conv2d(encoded, param(tape, bind, prefix + ".cim.enc_proj.weight"),
                                  param(tape, bind, prefix + ".cim.enc_proj.bias"), 1, 0);
    const Var up = tape.upsample_nearest(q, fh / cfg_.query_rows, fw / cfg_.query_cols);
    Var mixed = tape.add(up, enc_p);
    mixed = tape.dwconv2d(mixed, param(tape, bind, prefix + ".cim.dw.weight"),
                          param(tape, bind, prefix + ".cim.dw.bias"), 1, 1);
    const Var pooled = tape.adaptive_avg_pool2d(mixed, cfg_.query_rows, cfg_.query_cols);
    q = tape.add(q, pooled);
    Var h = tape.conv2d(q, param(tape, bind, prefix + ".ffn.pw1.weight"),
                        param(tape, bind, prefix + ".ffn.pw1.bias"), 1, 0);
    h = tape.relu(h);
    h = tape.conv2d(h, param(tape, bind, prefix + ".ffn.pw2.weight"),
                    param(tape, bind, prefix + ".ffn.pw2.bias"), 1, 0);
    q = tape.add(q, h);
  }
  return q;
}

TracedPrediction ViTLRModel::trace_heads(Tape& tape, Binding& bind, Var query_grid) {
  const Var rows = tape.grid_to_rows(query_grid);
  Var raw = tape.dense(rows, param(tape, bind, "head.box.weight"),
                       param(tape, bind, "head.box.bias"));
  raw = tape.sigmoid(raw);
  const float w = static_cast<float>(cfg_.width), h = static_cast<float>(cfg_.height);
  const Var boxes = tape.scale_columns(raw, {w, h, w, h});
  Var logits = tape.dense(rows, param(tape, bind, "head.cls.weight"),
                          param(tape, bind, "head.cls.bias"));
  const Var scores = tape.softmax_channels(logits);
  return TracedPrediction{boxes, scores};
}

namespace {

Tensor stack_frames(const ModelConfig& cfg, const std::vector<Tensor>& frames) {
  check_arg(static_cast<int>(frames.size()) == cfg.frames,
            "expected " + std::to_string(cfg.frames) + " frames, got " +
                std::to_string(frames.size()));
  Tensor stacked({cfg.frames, cfg.channels, cfg.height, cfg.width});
  const int64_t per_frame = static_cast<int64_t>(cfg.channels) * cfg.height * cfg.width;
  for (int f = 0; f < cfg.frames; ++f) {
    const Tensor& t = frames[f];
    check_arg(t.rank() == 3 && t.extent(0) == cfg.channels && t.extent(1) == cfg.height &&
                  t.extent(2) == cfg.width,
              "frame " + std::to_string(f) + " has shape " + t.shape_str() + ", expected [" +
                  std::to_string(cfg.channels) + "," + std::to_string(cfg.height) + "," +
                  std::to_string(cfg.width) + "]");
    std::copy(t.data(), t.data() + per_frame, stacked.data() + f * per_frame);
  }
  return stacked;
}

}  // namespace

TracedPrediction ViTLRModel::forward_traced(Tape& tape, const std::vector<Tensor>& clip_frames) {
  Binding bind;
  const Var frames = tape.leaf(stack_frames(cfg_, clip_frames));
  const Var streams = trace_backbone_streams(tape, bind, frames);
  const Var tokens = trace_projection(tape, bind, streams);
  // [n, C, L] row-major is bitwise the frame-ordered channel concatenation.
  const Var fused = tape.reshape(tokens, {1, cfg_.fused_width(), cfg_.feat_h(), cfg_.feat_w()});
  const Var encoded = trace_encoder(tape, bind, fused);
  const Var queries = param(tape, bind, "decoder.queries");
  const Var query_grid = trace_decoder(tape, bind, encoded, queries);
  return trace_heads(tape, bind, query_grid);
}

Prediction ViTLRModel::model_forward(const std::vector<Tensor>& clip_frames) {
  Tape tape(false);
  const TracedPrediction traced = forward_traced(tape, clip_frames);
  return prediction_from_traced(tape, traced);
}

FeatureSet ViTLRModel::backbone_forward(const Tensor& frame) {
  Tensor batched = frame;
  if (frame.rank() == 3) {
    batched = ops::reshape(frame, {1, frame.extent(0), frame.extent(1), frame.extent(2)});
  }
  check_arg(batched.rank() == 4 && batched.extent(1) == cfg_.channels &&
                batched.extent(2) == cfg_.height && batched.extent(3) == cfg_.width,
            "backbone input " + frame.shape_str() + " does not match config extents [" +
                std::to_string(cfg_.channels) + "," + std::to_string(cfg_.height) + "," +
                std::to_string(cfg_.width) + "]");
  Tape tape(false);
  Binding bind;
  const Var streams = trace_backbone_streams(tape, bind, tape.leaf(std::move(batched)));
  const Tensor& both = tape.value(streams);
  const auto halves = ops::concat_channels_backward(  // split is the concat inverse
      both, {cfg_.stream_width(), cfg_.stream_width()});
  return FeatureSet{halves[0], halves[1]};
}

Tensor ViTLRModel::conv_projection(const Tensor& features) {
  check_arg(features.rank() == 4 && features.extent(1) == cfg_.stage3_width,
            "conv_projection input " + features.shape_str() + " must have " +
                std::to_string(cfg_.stage3_width) + " channels");
  Tape tape(false);
  Binding bind;
  return tape.value(trace_projection(tape, bind, tape.leaf(features)));
}

Tensor ViTLRModel::encoder_forward(const Tensor& fused_map) {
  Tape tape(false);
  Binding bind;
  return tape.value(trace_encoder(tape, bind, tape.leaf(fused_map)));
}

Tensor ViTLRModel::decoder_forward(const Tensor& encoded, const Tensor& queries) {
  Tape tape(false);
  Binding bind;
  return tape.value(
      trace_decoder(tape, bind, tape.leaf(encoded), tape.leaf(queries)));
}

Prediction ViTLRModel::heads_forward(const Tensor& query_grid) {
  check_arg(query_grid.rank() == 4 && query_grid.extent(0) == 1 &&
                query_grid.extent(1) == cfg_.query_width &&
                query_grid.extent(2) == cfg_.query_rows &&
                query_grid.extent(3) == cfg_.query_cols,
            "heads input " + query_grid.shape_str() + " does not match the query grid");
  Tape tape(false);
  Binding bind;
  const TracedPrediction traced = trace_heads(tape, bind, tape.leaf(query_grid));
  return prediction_from_traced(tape, traced);
}

}  // namespace vitlr
