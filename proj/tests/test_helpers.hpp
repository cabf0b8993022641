#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vitlr/rng.hpp"
#include "vitlr/tape.hpp"
#include "vitlr/tensor.hpp"

namespace vitlr::testing {

inline Tensor random_tensor(std::vector<int> shape, SplitMix64& rng, float lo = -1.0f,
                            float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_float(lo, hi);
  return t;
}

// Independent naive convolution oracle: direct quadruple loop over the
// output and kernel with explicit bounds checks. Deliberately unrelated to
// the production kernel.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                           int padding) {
  const int n = x.extent(0), cin = x.extent(1), h = x.extent(2), ww = x.extent(3);
  const int cout = w.extent(0), k = w.extent(2);
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (ww + 2 * padding - k) / stride + 1;
  Tensor y({n, cout, oh, ow});
  for (int ni = 0; ni < n; ++ni) {
    for (int co = 0; co < cout; ++co) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          double acc = b[co];
          for (int ci = 0; ci < cin; ++ci) {
            for (int u = 0; u < k; ++u) {
              for (int v = 0; v < k; ++v) {
                const int yy = i * stride - padding + u;
                const int xx = j * stride - padding + v;
                if (yy < 0 || yy >= h || xx < 0 || xx >= ww) continue;
                acc += static_cast<double>(x(ni, ci, yy, xx)) * w(co, ci, u, v);
              }
            }
          }
          y(ni, co, i, j) = static_cast<float>(acc);
        }
      }
    }
  }
  return y;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// Central finite-difference gradient check (h = 1e-3). Builds the graph via
// `fn`, projects the output onto a random cotangent, and compares the tape
// gradient of every input against numeric differences. Returns the
// L2-normalized error max'ed over inputs.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double fd_check(const GraphFn& fn, const std::vector<Tensor>& inputs, uint64_t seed,
                       double h = 1e-3) {
  SplitMix64 rng(seed);

  const auto eval = [&](const std::vector<Tensor>& ins) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const Tensor& t : ins) vars.push_back(tape.leaf(t));
    const Var out = fn(tape, vars);
    return tape.value(out);
  };

  // Analytic gradients against a fixed random cotangent.
  Tape tape(true);
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  const Var out = fn(tape, vars);
  Tensor cot(tape.value(out).shape());
  for (int64_t i = 0; i < cot.numel(); ++i) cot[i] = rng.uniform_float(-1.0f, 1.0f);
  const Var loss = tape.sum_all(tape.mul(out, tape.leaf(cot)));
  (void)tape.backward(loss);

  const auto project = [&](const Tensor& y) {
    double acc = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) acc += static_cast<double>(y[i]) * cot[i];
    return acc;
  };

  double worst = 0.0;
  for (size_t input = 0; input < inputs.size(); ++input) {
    const Tensor analytic = tape.grad_of(vars[input]);
    Tensor numeric(analytic.shape());
    for (int64_t j = 0; j < inputs[input].numel(); ++j) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[input][j] = static_cast<float>(inputs[input][j] + h);
      minus[input][j] = static_cast<float>(inputs[input][j] - h);
      // Effective step after float32 rounding of the perturbed operand.
      const double step = static_cast<double>(plus[input][j]) - minus[input][j];
      numeric[j] = static_cast<float>((project(eval(plus)) - project(eval(minus))) / step);
    }
    double na = 0.0, nn = 0.0, nd = 0.0;
    for (int64_t j = 0; j < analytic.numel(); ++j) {
      na += static_cast<double>(analytic[j]) * analytic[j];
      nn += static_cast<double>(numeric[j]) * numeric[j];
      const double d = static_cast<double>(analytic[j]) - numeric[j];
      nd += d * d;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    worst = std::max(worst, std::sqrt(nd) / denom);
  }
  return worst;
}

}  // namespace vitlr::testing
