#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vitlr/ops.hpp"
#include "vitlr/tensor.hpp"

namespace vitlr {

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

using GradMap = std::map<std::string, Tensor>;

// Record-and-replay reverse-mode differentiation. Operations append nodes in
// execution order; backward() replays them in exact reverse order, summing
// gradient contributions (a value used k times receives k additive terms).
//
// A tape is single-owner: one forward/backward sequence at a time. With
// recording off it still evaluates forwards (inference path) but stores no
// gradient closures.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  size_t size() const { return nodes_.size(); }

  // Named leaves are parameters: backward() reports a gradient for every
  // name, zero when the forward pass never reached it.
  Var leaf(Tensor value, std::string name = "");
  const Tensor& value(Var v) const;

  Var conv2d(Var x, Var w, Var b, int stride, int padding);
  Var dwconv2d(Var x, Var w, Var b, int stride, int padding);
  Var batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                  float eps, bool train, float momentum);
  Var layernorm(Var x, Var gamma, Var beta, float eps);
  Var relu(Var x);
  Var sigmoid(Var x);
  Var softmax_channels(Var x);
  Var dense(Var x, Var w, Var b);
  Var reshape(Var x, std::vector<int> shape);
  Var flatten(Var x);
  Var adaptive_avg_pool2d(Var x, int out_h, int out_w);
  Var concat_channels(const std::vector<Var>& xs);
  Var upsample_nearest(Var x, int factor_h, int factor_w);
  Var grid_to_rows(Var x);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var divide(Var a, Var b);
  Var minimum(Var a, Var b);
  Var maximum(Var a, Var b);
  Var atan_pointwise(Var x);
  Var log_clamped(Var x, float floor);
  Var pow_scalar(Var x, float e);
  Var scale(Var x, float c);
  Var add_scalar(Var x, float c);
  Var rsub_scalar(Var x, float c);
  Var scale_columns(Var x, std::vector<float> coeffs);
  Var select_per_row(Var x, std::vector<int> cols);
  Var gather_rows(Var x, std::vector<int> rows);
  Var select_column(Var x, int col);
  Var sum_all(Var x);

  // d loss / d θ for every named leaf. Rejects non-scalar losses.
  GradMap backward(Var loss);

  // Gradient of an arbitrary tape value after backward(); zeros if unreached.
  Tensor grad_of(Var v) const;

 private:
  struct Node {
    Tensor value;
    std::string name;
    std::function<void(Tape&, const Tensor&)> grad_fn;
  };

  Var push(Tensor value);
  void set_grad_fn(Var v, std::function<void(Tape&, const Tensor&)> fn);
  void accumulate(Var v, Tensor g);
  const Tensor* grad_in(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool recording_;
};

}  // namespace vitlr
