#include "vitlr/tape.hpp"

#include <cmath>
#include <utility>

namespace vitlr {

Var Tape::push(Tensor value) {
  nodes_.push_back(Node{std::move(value), std::string(), nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::set_grad_fn(Var v, std::function<void(Tape&, const Tensor&)> fn) {
  if (recording_) nodes_[v.id].grad_fn = std::move(fn);
}

void Tape::accumulate(Var v, Tensor g) {
  Tensor& slot = grads_[v.id];
  if (slot.empty()) {
    slot = std::move(g);
    return;
  }
  for (int64_t i = 0; i < slot.numel(); ++i) slot[i] += g[i];
}

const Tensor* Tape::grad_in(Var v) const {
  return grads_[v.id].empty() ? nullptr : &grads_[v.id];
}

Var Tape::leaf(Tensor value, std::string name) {
  Var v = push(std::move(value));
  nodes_[v.id].name = std::move(name);
  return v;
}

const Tensor& Tape::value(Var v) const {
  check_arg(v.valid() && v.id < static_cast<int>(nodes_.size()), "invalid tape handle");
  return nodes_[v.id].value;
}

Var Tape::conv2d(Var x, Var w, Var b, int stride, int padding) {
  Var out = push(ops::conv2d(value(x), value(w), value(b), stride, padding));
  set_grad_fn(out, [x, w, b, stride, padding](Tape& t, const Tensor& g) {
    auto grads = ops::conv2d_backward(g, t.value(x), t.value(w), stride, padding);
    t.accumulate(x, std::move(grads.dx));
    t.accumulate(w, std::move(grads.dw));
    t.accumulate(b, std::move(grads.db));
  });
  return out;
}

Var Tape::dwconv2d(Var x, Var w, Var b, int stride, int padding) {
  Var out = push(ops::dwconv2d(value(x), value(w), value(b), stride, padding));
  set_grad_fn(out, [x, w, b, stride, padding](Tape& t, const Tensor& g) {
    auto grads = ops::dwconv2d_backward(g, t.value(x), t.value(w), stride, padding);
    t.accumulate(x, std::move(grads.dx));
    t.accumulate(w, std::move(grads.dw));
    t.accumulate(b, std::move(grads.db));
  });
  return out;
}

Var Tape::batchnorm2d(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
                      float eps, bool train, float momentum) {
  auto result =
      ops::batchnorm2d(value(x), value(gamma), value(beta), running_mean, running_var, eps,
                       train, momentum);
  Var out = push(std::move(result.y));
  set_grad_fn(out, [x, gamma, beta, mean = std::move(result.mean), var = std::move(result.var),
                    eps, train](Tape& t, const Tensor& g) {
    auto grads = ops::batchnorm2d_backward(g, t.value(x), t.value(gamma), mean, var, eps, train);
    t.accumulate(x, std::move(grads.dx));
    t.accumulate(gamma, std::move(grads.dgamma));
    t.accumulate(beta, std::move(grads.dbeta));
  });
  return out;
}

Var Tape::layernorm(Var x, Var gamma, Var beta, float eps) {
  Var out = push(ops::layernorm(value(x), value(gamma), value(beta), eps));
  set_grad_fn(out, [x, gamma, beta, eps](Tape& t, const Tensor& g) {
    auto grads = ops::layernorm_backward(g, t.value(x), t.value(gamma), eps);
    t.accumulate(x, std::move(grads.dx));
    t.accumulate(gamma, std::move(grads.dgamma));
    t.accumulate(beta, std::move(grads.dbeta));
  });
  return out;
}

Var Tape::relu(Var x) {
  Var out = push(ops::relu(value(x)));
  set_grad_fn(out, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::relu_backward(g, t.value(x)));
  });
  return out;
}

Var Tape::sigmoid(Var x) {
  Var out = push(ops::sigmoid(value(x)));
  set_grad_fn(out, [x, out](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::sigmoid_backward(g, t.value(out)));
  });
  return out;
}

Var Tape::softmax_channels(Var x) {
  Var out = push(ops::softmax_channels(value(x)));
  set_grad_fn(out, [x, out](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::softmax_channels_backward(g, t.value(out)));
  });
  return out;
}

Var Tape::dense(Var x, Var w, Var b) {
  Var out = push(ops::dense(value(x), value(w), value(b)));
  set_grad_fn(out, [x, w, b](Tape& t, const Tensor& g) {
    auto grads = ops::dense_backward(g, t.value(x), t.value(w));
    t.accumulate(x, std::move(grads.dx));
    t.accumulate(w, std::move(grads.dw));
    t.accumulate(b, std::move(grads.db));
  });
  return out;
}

Var Tape::reshape(Var x, std::vector<int> shape) {
  Var out = push(ops::reshape(value(x), std::move(shape)));
  set_grad_fn(out, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::reshape(g, t.value(x).shape()));
  });
  return out;
}

Var Tape::flatten(Var x) {
  Var out = push(ops::flatten(value(x)));
  set_grad_fn(out, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::reshape(g, t.value(x).shape()));
  });
  return out;
}

Var Tape::adaptive_avg_pool2d(Var x, int out_h, int out_w) {
  const int in_h = value(x).extent(2), in_w = value(x).extent(3);
  Var out = push(ops::adaptive_avg_pool2d(value(x), out_h, out_w));
  set_grad_fn(out, [x, in_h, in_w](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::adaptive_avg_pool2d_backward(g, in_h, in_w));
  });
  return out;
}

Var Tape::concat_channels(const std::vector<Var>& xs) {
  std::vector<Tensor> values;
  std::vector<int> splits;
  values.reserve(xs.size());
  for (Var v : xs) {
    values.push_back(value(v));
    splits.push_back(value(v).extent(1));
  }
  Var out = push(ops::concat_channels(values));
  set_grad_fn(out, [inputs = xs, splits](Tape& t, const Tensor& g) {
    auto grads = ops::concat_channels_backward(g, splits);
    for (size_t i = 0; i < inputs.size(); ++i) t.accumulate(inputs[i], std::move(grads[i]));
  });
  return out;
}

Var Tape::upsample_nearest(Var x, int factor_h, int factor_w) {
  Var out = push(ops::upsample_nearest(value(x), factor_h, factor_w));
  set_grad_fn(out, [x, factor_h, factor_w](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::upsample_nearest_backward(g, factor_h, factor_w));
  });
  return out;
}

Var Tape::grid_to_rows(Var x) {
  const int c = value(x).extent(1), h = value(x).extent(2), w = value(x).extent(3);
  Var out = push(ops::grid_to_rows(value(x)));
  set_grad_fn(out, [x, c, h, w](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::grid_to_rows_backward(g, c, h, w));
  });
  return out;
}

Var Tape::add(Var a, Var b) {
  Var out = push(ops::add(value(a), value(b)));
  set_grad_fn(out, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
  return out;
}

Var Tape::sub(Var a, Var b) {
  Var out = push(ops::sub(value(a), value(b)));
  set_grad_fn(out, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, ops::scale(g, -1.0f));
  });
  return out;
}

Var Tape::mul(Var a, Var b) {
  Var out = push(ops::mul(value(a), value(b)));
  set_grad_fn(out, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, ops::mul(g, t.value(b)));
    t.accumulate(b, ops::mul(g, t.value(a)));
  });
  return out;
}

Var Tape::divide(Var a, Var b) {
  Var out = push(ops::divide(value(a), value(b)));
  set_grad_fn(out, [a, b, out](Tape& t, const Tensor& g) {
    const Tensor& bv = t.value(b);
    t.accumulate(a, ops::divide(g, bv));
    // d(a/b)/db = -(a/b)/b
    t.accumulate(b, ops::scale(ops::divide(ops::mul(g, t.value(out)), bv), -1.0f));
  });
  return out;
}

namespace {

// Gradient router shared by minimum/maximum: the winning side receives the
// gradient; ties go to the first argument.
Tensor pick_mask(const Tensor& g, const Tensor& a, const Tensor& b, bool a_wins_on_tie,
                 bool is_min) {
  Tensor out(g.shape());
  for (int64_t i = 0; i < g.numel(); ++i) {
    const bool a_selected = is_min ? (a_wins_on_tie ? a[i] <= b[i] : a[i] < b[i])
                                   : (a_wins_on_tie ? a[i] >= b[i] : a[i] > b[i]);
    out[i] = a_selected ? g[i] : 0.0f;
  }
  return out;
}

}  // namespace

Var Tape::minimum(Var a, Var b) {
  Var out = push(ops::minimum(value(a), value(b)));
  set_grad_fn(out, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, pick_mask(g, t.value(a), t.value(b), true, true));
    t.accumulate(b, pick_mask(g, t.value(b), t.value(a), false, true));
  });
  return out;
}

Var Tape::maximum(Var a, Var b) {
  Var out = push(ops::maximum(value(a), value(b)));
  set_grad_fn(out, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, pick_mask(g, t.value(a), t.value(b), true, false));
    t.accumulate(b, pick_mask(g, t.value(b), t.value(a), false, false));
  });
  return out;
}

Var Tape::atan_pointwise(Var x) {
  Var out = push(ops::atan_pointwise(value(x)));
  set_grad_fn(out, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor dx(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) dx[i] = g[i] / (1.0f + xv[i] * xv[i]);
    t.accumulate(x, std::move(dx));
  });
  return out;
}

Var Tape::log_clamped(Var x, float floor) {
  Var out = push(ops::log_clamped(value(x), floor));
  set_grad_fn(out, [x, floor](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor dx(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) dx[i] = xv[i] > floor ? g[i] / xv[i] : 0.0f;
    t.accumulate(x, std::move(dx));
  });
  return out;
}

Var Tape::pow_scalar(Var x, float e) {
  Var out = push(ops::pow_scalar(value(x), e));
  set_grad_fn(out, [x, e](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor dx(xv.shape());
    if (e != 0.0f) {
      for (int64_t i = 0; i < xv.numel(); ++i) {
        // x == 0 with e < 1 would blow up; the subgradient 0 is used instead.
        dx[i] = (xv[i] == 0.0f && e < 1.0f) ? 0.0f
                                            : g[i] * e * std::pow(xv[i], e - 1.0f);
      }
    }
    t.accumulate(x, std::move(dx));
  });
  return out;
}

Var Tape::scale(Var x, float c) {
  Var out = push(ops::scale(value(x), c));
  set_grad_fn(out, [x, c](Tape& t, const Tensor& g) { t.accumulate(x, ops::scale(g, c)); });
  return out;
}

Var Tape::add_scalar(Var x, float c) {
  Var out = push(ops::add_scalar(value(x), c));
  set_grad_fn(out, [x](Tape& t, const Tensor& g) { t.accumulate(x, g); });
  return out;
}

Var Tape::rsub_scalar(Var x, float c) {
  Var out = push(ops::rsub_scalar(value(x), c));
  set_grad_fn(out, [x](Tape& t, const Tensor& g) { t.accumulate(x, ops::scale(g, -1.0f)); });
  return out;
}

Var Tape::scale_columns(Var x, std::vector<float> coeffs) {
  Var out = push(ops::scale_columns(value(x), coeffs));
  set_grad_fn(out, [x, coeffs = std::move(coeffs)](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::scale_columns(g, coeffs));
  });
  return out;
}

Var Tape::select_per_row(Var x, std::vector<int> cols) {
  Var out = push(ops::select_per_row(value(x), cols));
  set_grad_fn(out, [x, cols = std::move(cols)](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::select_per_row_backward(g, t.value(x), cols));
  });
  return out;
}

Var Tape::gather_rows(Var x, std::vector<int> rows) {
  Var out = push(ops::gather_rows(value(x), rows));
  set_grad_fn(out, [x, rows = std::move(rows)](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::gather_rows_backward(g, t.value(x), rows));
  });
  return out;
}

Var Tape::select_column(Var x, int col) {
  Var out = push(ops::select_column(value(x), col));
  set_grad_fn(out, [x, col](Tape& t, const Tensor& g) {
    t.accumulate(x, ops::select_column_backward(g, t.value(x), col));
  });
  return out;
}

Var Tape::sum_all(Var x) {
  Var out = push(ops::sum_all(value(x)));
  set_grad_fn(out, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, Tensor::full(t.value(x).shape(), g[0]));
  });
  return out;
}

GradMap Tape::backward(Var loss) {
  check_arg(recording_, "backward requires a recording tape");
  check_arg(loss.valid() && loss.id < static_cast<int>(nodes_.size()),
            "backward: loss is not a tape value");
  check_arg(nodes_[loss.id].value.numel() == 1,
            "backward: loss must be scalar, got " + nodes_[loss.id].value.shape_str());

  grads_.assign(nodes_.size(), Tensor());
  grads_[loss.id] = Tensor::scalar(1.0f);
  for (int id = loss.id; id >= 0; --id) {
    if (grads_[id].empty() || !nodes_[id].grad_fn) continue;
    nodes_[id].grad_fn(*this, grads_[id]);
  }

  GradMap out;
  for (size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].name.empty()) continue;
    if (grads_[id].empty()) {
      out.emplace(nodes_[id].name, Tensor(nodes_[id].value.shape()));
    } else {
      out.emplace(nodes_[id].name, grads_[id]);
    }
  }
  return out;
}

Tensor Tape::grad_of(Var v) const {
  check_arg(v.valid() && v.id < static_cast<int>(nodes_.size()), "invalid tape handle");
  if (static_cast<size_t>(v.id) < grads_.size() && !grads_[v.id].empty()) return grads_[v.id];
  return Tensor(nodes_[v.id].value.shape());
}

}  // namespace vitlr
