#include "vitlr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace vitlr::ops {

namespace {

void check_rank(const Tensor& t, int rank, const char* what) {
  check_arg(t.rank() == rank, std::string(what) + " must have rank " + std::to_string(rank) +
                                  ", got " + t.shape_str());
}

struct ConvDims {
  int n, cin, h, w, cout, k, oh, ow;
};

// Shared shape validation for conv2d/dwconv2d. For depthwise, cout == cin and
// the weight is [C,1,k,k].
ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding,
                   bool depthwise) {
  check_rank(x, 4, "conv input");
  check_rank(w, 4, "conv weight");
  check_rank(b, 1, "conv bias");
  check_arg(stride >= 1, "conv stride must be >= 1, got " + std::to_string(stride));
  check_arg(padding >= 0, "conv padding must be >= 0, got " + std::to_string(padding));
  ConvDims d;
  d.n = x.extent(0);
  d.cin = x.extent(1);
  d.h = x.extent(2);
  d.w = x.extent(3);
  d.k = w.extent(2);
  check_arg(w.extent(3) == d.k, "conv kernel must be square, got " + w.shape_str());
  check_arg(d.k % 2 == 1, "conv kernel size must be odd, got " + std::to_string(d.k));
  if (depthwise) {
    check_arg(w.extent(1) == 1, "depthwise weight must be [C,1,k,k], got " + w.shape_str());
    check_arg(w.extent(0) == d.cin, "depthwise weight channels " + std::to_string(w.extent(0)) +
                                        " do not match input channels " + std::to_string(d.cin));
    d.cout = d.cin;
  } else {
    check_arg(w.extent(1) == d.cin, "conv weight input channels " + std::to_string(w.extent(1)) +
                                        " do not match input channels " + std::to_string(d.cin));
    d.cout = w.extent(0);
  }
  check_arg(b.extent(0) == d.cout, "conv bias extent " + std::to_string(b.extent(0)) +
                                       " does not match output channels " +
                                       std::to_string(d.cout));
  // Floor semantics: H' = floor((H + 2*pad - k) / stride) + 1. Rejected only
  // when the kernel exceeds the padded input (no valid output extent).
  const int num_h = d.h + 2 * padding - d.k;
  const int num_w = d.w + 2 * padding - d.k;
  check_arg(num_h >= 0, "conv output height empty: kernel " + std::to_string(d.k) +
                            " exceeds padded input height " +
                            std::to_string(d.h + 2 * padding));
  check_arg(num_w >= 0, "conv output width empty: kernel " + std::to_string(d.k) +
                            " exceeds padded input width " + std::to_string(d.w + 2 * padding));
  d.oh = num_h / stride + 1;
  d.ow = num_w / stride + 1;
  return d;
}

inline int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int div_floor(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Accumulates one (kh, kw) tap of a conv plane: out[oh, ow] += wv * x[ih, iw]
// with ih = oh*s - p + kh, iw = ow*s - p + kw, clipped to the valid range.
inline void conv_tap_forward(float* out, const float* x, float wv, int h, int w, int oh_count,
                             int ow_count, int stride, int padding, int kh, int kw) {
  const int oh_lo = std::max(0, div_ceil(padding - kh, stride));
  const int oh_hi = std::min(oh_count - 1, div_floor(h - 1 + padding - kh, stride));
  const int ow_lo = std::max(0, div_ceil(padding - kw, stride));
  const int ow_hi = std::min(ow_count - 1, div_floor(w - 1 + padding - kw, stride));
  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
    const float* xrow = x + static_cast<size_t>(oh * stride - padding + kh) * w + (kw - padding);
    float* orow = out + static_cast<size_t>(oh) * ow_count;
    for (int ow = ow_lo; ow <= ow_hi; ++ow) {
      orow[ow] += wv * xrow[static_cast<size_t>(ow) * stride];
    }
  }
}

// Dot product of one tap with the upstream gradient (for dw).
inline float conv_tap_dot(const float* gout, const float* x, int h, int w, int oh_count,
                          int ow_count, int stride, int padding, int kh, int kw) {
  const int oh_lo = std::max(0, div_ceil(padding - kh, stride));
  const int oh_hi = std::min(oh_count - 1, div_floor(h - 1 + padding - kh, stride));
  const int ow_lo = std::max(0, div_ceil(padding - kw, stride));
  const int ow_hi = std::min(ow_count - 1, div_floor(w - 1 + padding - kw, stride));
  float acc = 0.0f;
  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
    const float* xrow = x + static_cast<size_t>(oh * stride - padding + kh) * w + (kw - padding);
    const float* grow = gout + static_cast<size_t>(oh) * ow_count;
    for (int ow = ow_lo; ow <= ow_hi; ++ow) {
      acc += grow[ow] * xrow[static_cast<size_t>(ow) * stride];
    }
  }
  return acc;
}

// Scatter of one tap into dx: dx[ih, iw] += wv * gout[oh, ow].
inline void conv_tap_scatter(float* dx, const float* gout, float wv, int h, int w, int oh_count,
                             int ow_count, int stride, int padding, int kh, int kw) {
  const int oh_lo = std::max(0, div_ceil(padding - kh, stride));
  const int oh_hi = std::min(oh_count - 1, div_floor(h - 1 + padding - kh, stride));
  const int ow_lo = std::max(0, div_ceil(padding - kw, stride));
  const int ow_hi = std::min(ow_count - 1, div_floor(w - 1 + padding - kw, stride));
  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
    float* xrow = dx + static_cast<size_t>(oh * stride - padding + kh) * w + (kw - padding);
    const float* grow = gout + static_cast<size_t>(oh) * ow_count;
    for (int ow = ow_lo; ow <= ow_hi; ++ow) {
      xrow[static_cast<size_t>(ow) * stride] += wv * grow[ow];
    }
  }
}

Tensor unary_map(const Tensor& x, float (*f)(float)) {
  Tensor y = x;
  for (auto& v : y.raw()) v = f(v);
  return y;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check_arg(a.same_shape(b), std::string(op) + " shape mismatch: " + a.shape_str() + " vs " +
                                 b.shape_str());
}

}  // namespace

// ---- convolutions -----------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  const ConvDims d = conv_dims(x, w, b, stride, padding, false);
  Tensor y({d.n, d.cout, d.oh, d.ow});
  const size_t in_plane = static_cast<size_t>(d.h) * d.w;
  const size_t out_plane = static_cast<size_t>(d.oh) * d.ow;
  for (int n = 0; n < d.n; ++n) {
    const float* xn = x.data() + static_cast<size_t>(n) * d.cin * in_plane;
    float* yn = y.data() + static_cast<size_t>(n) * d.cout * out_plane;
    for (int co = 0; co < d.cout; ++co) {
      float* out = yn + co * out_plane;
      const float bias = b[co];
      for (size_t i = 0; i < out_plane; ++i) out[i] = bias;
      for (int ci = 0; ci < d.cin; ++ci) {
        const float* xc = xn + ci * in_plane;
        const float* wk = w.data() + (static_cast<size_t>(co) * d.cin + ci) * d.k * d.k;
        for (int kh = 0; kh < d.k; ++kh) {
          for (int kw = 0; kw < d.k; ++kw) {
            conv_tap_forward(out, xc, wk[kh * d.k + kw], d.h, d.w, d.oh, d.ow, stride, padding,
                             kh, kw);
          }
        }
      }
    }
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& gout, const Tensor& x, const Tensor& w, int stride,
                            int padding) {
  Tensor bias_probe({w.extent(0)});
  const ConvDims d = conv_dims(x, w, bias_probe, stride, padding, false);
  check_arg(gout.shape() == std::vector<int>({d.n, d.cout, d.oh, d.ow}),
            "conv2d_backward gradient shape " + gout.shape_str() + " does not match output");
  Conv2dGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({d.cout})};
  const size_t in_plane = static_cast<size_t>(d.h) * d.w;
  const size_t out_plane = static_cast<size_t>(d.oh) * d.ow;
  for (int n = 0; n < d.n; ++n) {
    const float* xn = x.data() + static_cast<size_t>(n) * d.cin * in_plane;
    const float* gn = gout.data() + static_cast<size_t>(n) * d.cout * out_plane;
    float* dxn = g.dx.data() + static_cast<size_t>(n) * d.cin * in_plane;
    for (int co = 0; co < d.cout; ++co) {
      const float* gplane = gn + co * out_plane;
      double db = 0.0;
      for (size_t i = 0; i < out_plane; ++i) db += gplane[i];
      g.db[co] += static_cast<float>(db);
      for (int ci = 0; ci < d.cin; ++ci) {
        const float* xc = xn + ci * in_plane;
        float* dxc = dxn + ci * in_plane;
        const size_t wbase = (static_cast<size_t>(co) * d.cin + ci) * d.k * d.k;
        for (int kh = 0; kh < d.k; ++kh) {
          for (int kw = 0; kw < d.k; ++kw) {
            g.dw[wbase + kh * d.k + kw] += conv_tap_dot(gplane, xc, d.h, d.w, d.oh, d.ow, stride,
                                                        padding, kh, kw);
            conv_tap_scatter(dxc, gplane, w[wbase + kh * d.k + kw], d.h, d.w, d.oh, d.ow, stride,
                             padding, kh, kw);
          }
        }
      }
    }
  }
  return g;
}

Tensor dwconv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding) {
  const ConvDims d = conv_dims(x, w, b, stride, padding, true);
  Tensor y({d.n, d.cout, d.oh, d.ow});
  const size_t in_plane = static_cast<size_t>(d.h) * d.w;
  const size_t out_plane = static_cast<size_t>(d.oh) * d.ow;
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cout; ++c) {
      const float* xc = x.data() + (static_cast<size_t>(n) * d.cin + c) * in_plane;
      float* out = y.data() + (static_cast<size_t>(n) * d.cout + c) * out_plane;
      const float bias = b[c];
      for (size_t i = 0; i < out_plane; ++i) out[i] = bias;
      const float* wk = w.data() + static_cast<size_t>(c) * d.k * d.k;
      for (int kh = 0; kh < d.k; ++kh) {
        for (int kw = 0; kw < d.k; ++kw) {
          conv_tap_forward(out, xc, wk[kh * d.k + kw], d.h, d.w, d.oh, d.ow, stride, padding, kh,
                           kw);
        }
      }
    }
  }
  return y;
}

Conv2dGrads dwconv2d_backward(const Tensor& gout, const Tensor& x, const Tensor& w, int stride,
                              int padding) {
  Tensor bias_probe({w.extent(0)});
  const ConvDims d = conv_dims(x, w, bias_probe, stride, padding, true);
  check_arg(gout.shape() == std::vector<int>({d.n, d.cout, d.oh, d.ow}),
            "dwconv2d_backward gradient shape " + gout.shape_str() + " does not match output");
  Conv2dGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({d.cout})};
  const size_t in_plane = static_cast<size_t>(d.h) * d.w;
  const size_t out_plane = static_cast<size_t>(d.oh) * d.ow;
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.cout; ++c) {
      const float* xc = x.data() + (static_cast<size_t>(n) * d.cin + c) * in_plane;
      float* dxc = g.dx.data() + (static_cast<size_t>(n) * d.cin + c) * in_plane;
      const float* gplane = gout.data() + (static_cast<size_t>(n) * d.cout + c) * out_plane;
      double db = 0.0;
      for (size_t i = 0; i < out_plane; ++i) db += gplane[i];
      g.db[c] += static_cast<float>(db);
      const size_t wbase = static_cast<size_t>(c) * d.k * d.k;
      for (int kh = 0; kh < d.k; ++kh) {
        for (int kw = 0; kw < d.k; ++kw) {
          g.dw[wbase + kh * d.k + kw] += conv_tap_dot(gplane, xc, d.h, d.w, d.oh, d.ow, stride,
                                                      padding, kh, kw);
          conv_tap_scatter(dxc, gplane, w[wbase + kh * d.k + kw], d.h, d.w, d.oh, d.ow, stride,
                           padding, kh, kw);
        }
      }
    }
  }
  return g;
}

// ---- normalization ----------------------------------------------------

BatchNormResult batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            Tensor& running_mean, Tensor& running_var, float eps, bool train,
                            float momentum) {
  check_rank(x, 4, "batchnorm input");
  const int c = x.extent(1);
  check_arg(gamma.rank() == 1 && gamma.extent(0) == c,
            "batchnorm gamma extent does not match channels " + std::to_string(c));
  check_arg(beta.rank() == 1 && beta.extent(0) == c,
            "batchnorm beta extent does not match channels " + std::to_string(c));
  check_arg(running_mean.rank() == 1 && running_mean.extent(0) == c &&
                running_var.rank() == 1 && running_var.extent(0) == c,
            "batchnorm running stats extent does not match channels " + std::to_string(c));
  check_arg(eps > 0.0f, "batchnorm eps must be > 0");

  const int n = x.extent(0), h = x.extent(2), w = x.extent(3);
  const size_t plane = static_cast<size_t>(h) * w;
  const double count = static_cast<double>(n) * h * w;

  BatchNormResult r{Tensor(x.shape()), Tensor({c}), Tensor({c})};
  if (train) {
    for (int ch = 0; ch < c; ++ch) {
      double sum = 0.0, sq = 0.0;
      for (int b0 = 0; b0 < n; ++b0) {
        const float* p = x.data() + (static_cast<size_t>(b0) * c + ch) * plane;
        for (size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sq += static_cast<double>(p[i]) * p[i];
        }
      }
      const double mean = sum / count;
      const double var = std::max(0.0, sq / count - mean * mean);
      r.mean[ch] = static_cast<float>(mean);
      r.var[ch] = static_cast<float>(var);
      running_mean[ch] = (1.0f - momentum) * running_mean[ch] + momentum * r.mean[ch];
      running_var[ch] = (1.0f - momentum) * running_var[ch] + momentum * r.var[ch];
    }
  } else {
    r.mean = running_mean;
    r.var = running_var;
  }
  for (int ch = 0; ch < c; ++ch) {
    const float inv = 1.0f / std::sqrt(r.var[ch] + eps);
    const float g = gamma[ch], b1 = beta[ch], m = r.mean[ch];
    for (int b0 = 0; b0 < n; ++b0) {
      const float* p = x.data() + (static_cast<size_t>(b0) * c + ch) * plane;
      float* q = r.y.data() + (static_cast<size_t>(b0) * c + ch) * plane;
      for (size_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * inv * g + b1;
    }
  }
  return r;
}

NormGrads batchnorm2d_backward(const Tensor& gout, const Tensor& x, const Tensor& gamma,
                               const Tensor& mean, const Tensor& var, float eps, bool train) {
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  const size_t plane = static_cast<size_t>(h) * w;
  const double count = static_cast<double>(n) * h * w;
  NormGrads g{Tensor(x.shape()), Tensor({c}), Tensor({c})};
  for (int ch = 0; ch < c; ++ch) {
    const float inv = 1.0f / std::sqrt(var[ch] + eps);
    const float m = mean[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b0 = 0; b0 < n; ++b0) {
      const float* gp = gout.data() + (static_cast<size_t>(b0) * c + ch) * plane;
      const float* xp = x.data() + (static_cast<size_t>(b0) * c + ch) * plane;
      for (size_t i = 0; i < plane; ++i) {
        sum_dy += gp[i];
        sum_dy_xhat += static_cast<double>(gp[i]) * (xp[i] - m) * inv;
      }
    }
    g.dbeta[ch] = static_cast<float>(sum_dy);
    g.dgamma[ch] = static_cast<float>(sum_dy_xhat);
    const float gch = gamma[ch];
    const float mean_dy = static_cast<float>(sum_dy / count);
    const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
    for (int b0 = 0; b0 < n; ++b0) {
      const float* gp = gout.data() + (static_cast<size_t>(b0) * c + ch) * plane;
      const float* xp = x.data() + (static_cast<size_t>(b0) * c + ch) * plane;
      float* dp = g.dx.data() + (static_cast<size_t>(b0) * c + ch) * plane;
      if (train) {
        for (size_t i = 0; i < plane; ++i) {
          const float xhat = (xp[i] - m) * inv;
          dp[i] = gch * inv * (gp[i] - mean_dy - xhat * mean_dy_xhat);
        }
      } else {
        // Running stats are constants in eval mode.
        for (size_t i = 0; i < plane; ++i) dp[i] = gch * inv * gp[i];
      }
    }
  }
  return g;
}

namespace {

// Views a rank-2 or rank-4 tensor as [rows, C, cols] with the channel axis in
// the middle: rank 2 -> [N, C, 1], rank 4 -> [N, C, H*W].
struct ChannelView {
  int rows, channels, cols;
};

ChannelView channel_view(const Tensor& x, const char* op) {
  check_arg(x.rank() == 2 || x.rank() == 4,
            std::string(op) + " expects rank 2 or 4, got " + x.shape_str());
  if (x.rank() == 2) return {x.extent(0), x.extent(1), 1};
  return {x.extent(0), x.extent(1), x.extent(2) * x.extent(3)};
}

}  // namespace

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const ChannelView v = channel_view(x, "layernorm");
  check_arg(gamma.rank() == 1 && gamma.extent(0) == v.channels,
            "layernorm gamma extent does not match channels " + std::to_string(v.channels));
  check_arg(beta.rank() == 1 && beta.extent(0) == v.channels,
            "layernorm beta extent does not match channels " + std::to_string(v.channels));
  check_arg(eps > 0.0f, "layernorm eps must be > 0");
  Tensor y(x.shape());
  const float* xp = x.data();
  float* yp = y.data();
  for (int n = 0; n < v.rows; ++n) {
    for (int s = 0; s < v.cols; ++s) {
      const size_t base = (static_cast<size_t>(n) * v.channels) * v.cols + s;
      double sum = 0.0, sq = 0.0;
      for (int c = 0; c < v.channels; ++c) {
        const float xv = xp[base + static_cast<size_t>(c) * v.cols];
        sum += xv;
        sq += static_cast<double>(xv) * xv;
      }
      const double mean = sum / v.channels;
      const double var = std::max(0.0, sq / v.channels - mean * mean);
      const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
      for (int c = 0; c < v.channels; ++c) {
        const size_t i = base + static_cast<size_t>(c) * v.cols;
        yp[i] = (xp[i] - static_cast<float>(mean)) * inv * gamma[c] + beta[c];
      }
    }
  }
  return y;
}

NormGrads layernorm_backward(const Tensor& gout, const Tensor& x, const Tensor& gamma,
                             float eps) {
  const ChannelView v = channel_view(x, "layernorm");
  NormGrads g{Tensor(x.shape()), Tensor({v.channels}), Tensor({v.channels})};
  const float* xp = x.data();
  const float* gp = gout.data();
  float* dp = g.dx.data();
  for (int n = 0; n < v.rows; ++n) {
    for (int s = 0; s < v.cols; ++s) {
      const size_t base = (static_cast<size_t>(n) * v.channels) * v.cols + s;
      double sum = 0.0, sq = 0.0;
      for (int c = 0; c < v.channels; ++c) {
        const float xv = xp[base + static_cast<size_t>(c) * v.cols];
        sum += xv;
        sq += static_cast<double>(xv) * xv;
      }
      const double mean = sum / v.channels;
      const double var = std::max(0.0, sq / v.channels - mean * mean);
      const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
      double sum_g = 0.0, sum_g_xhat = 0.0;
      for (int c = 0; c < v.channels; ++c) {
        const size_t i = base + static_cast<size_t>(c) * v.cols;
        const float xhat = (xp[i] - static_cast<float>(mean)) * inv;
        const float gl = gamma[c] * gp[i];
        sum_g += gl;
        sum_g_xhat += static_cast<double>(gl) * xhat;
        g.dgamma[c] += gp[i] * xhat;
        g.dbeta[c] += gp[i];
      }
      const float mg = static_cast<float>(sum_g / v.channels);
      const float mgx = static_cast<float>(sum_g_xhat / v.channels);
      for (int c = 0; c < v.channels; ++c) {
        const size_t i = base + static_cast<size_t>(c) * v.cols;
        const float xhat = (xp[i] - static_cast<float>(mean)) * inv;
        dp[i] = inv * (gamma[c] * gp[i] - mg - xhat * mgx);
      }
    }
  }
  return g;
}

// ---- activations ------------------------------------------------------

Tensor relu(const Tensor& x) {
  return unary_map(x, [](float v) { return v > 0.0f ? v : 0.0f; });
}

Tensor relu_backward(const Tensor& gout, const Tensor& x) {
  check_same_shape(gout, x, "relu_backward");
  Tensor dx(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0f ? gout[i] : 0.0f;
  return dx;
}

Tensor sigmoid(const Tensor& x) {
  return unary_map(x, [](float v) {
    if (v >= 0.0f) return 1.0f / (1.0f + std::exp(-v));
    const float e = std::exp(v);
    return e / (1.0f + e);
  });
}

Tensor sigmoid_backward(const Tensor& gout, const Tensor& y) {
  check_same_shape(gout, y, "sigmoid_backward");
  Tensor dx(y.shape());
  for (int64_t i = 0; i < y.numel(); ++i) dx[i] = gout[i] * y[i] * (1.0f - y[i]);
  return dx;
}

Tensor softmax_channels(const Tensor& x) {
  const ChannelView v = channel_view(x, "softmax");
  Tensor y(x.shape());
  const float* xp = x.data();
  float* yp = y.data();
  for (int n = 0; n < v.rows; ++n) {
    for (int s = 0; s < v.cols; ++s) {
      const size_t base = (static_cast<size_t>(n) * v.channels) * v.cols + s;
      float mx = xp[base];
      for (int c = 1; c < v.channels; ++c) {
        mx = std::max(mx, xp[base + static_cast<size_t>(c) * v.cols]);
      }
      double denom = 0.0;
      for (int c = 0; c < v.channels; ++c) {
        const size_t i = base + static_cast<size_t>(c) * v.cols;
        const float e = std::exp(xp[i] - mx);
        yp[i] = e;
        denom += e;
      }
      const float inv = static_cast<float>(1.0 / denom);
      for (int c = 0; c < v.channels; ++c) yp[base + static_cast<size_t>(c) * v.cols] *= inv;
    }
  }
  return y;
}

Tensor softmax_channels_backward(const Tensor& gout, const Tensor& y) {
  const ChannelView v = channel_view(y, "softmax");
  check_same_shape(gout, y, "softmax_backward");
  Tensor dx(y.shape());
  const float* yp = y.data();
  const float* gp = gout.data();
  float* dp = dx.data();
  for (int n = 0; n < v.rows; ++n) {
    for (int s = 0; s < v.cols; ++s) {
      const size_t base = (static_cast<size_t>(n) * v.channels) * v.cols + s;
      double dot = 0.0;
      for (int c = 0; c < v.channels; ++c) {
        const size_t i = base + static_cast<size_t>(c) * v.cols;
        dot += static_cast<double>(gp[i]) * yp[i];
      }
      for (int c = 0; c < v.channels; ++c) {
        const size_t i = base + static_cast<size_t>(c) * v.cols;
        dp[i] = yp[i] * (gp[i] - static_cast<float>(dot));
      }
    }
  }
  return dx;
}

// ---- dense / shape ----------------------------------------------------

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank(x, 2, "dense input");
  check_rank(w, 2, "dense weight");
  check_rank(b, 1, "dense bias");
  const int n = x.extent(0), din = x.extent(1), dout = w.extent(0);
  check_arg(w.extent(1) == din, "dense weight input extent " + std::to_string(w.extent(1)) +
                                    " does not match input features " + std::to_string(din));
  check_arg(b.extent(0) == dout, "dense bias extent does not match output features");
  Tensor y({n, dout});
  for (int i = 0; i < n; ++i) {
    const float* xr = x.data() + static_cast<size_t>(i) * din;
    for (int o = 0; o < dout; ++o) {
      const float* wr = w.data() + static_cast<size_t>(o) * din;
      float acc = b[o];
      for (int j = 0; j < din; ++j) acc += xr[j] * wr[j];
      y(i, o) = acc;
    }
  }
  return y;
}

DenseGrads dense_backward(const Tensor& gout, const Tensor& x, const Tensor& w) {
  const int n = x.extent(0), din = x.extent(1), dout = w.extent(0);
  check_arg(gout.rank() == 2 && gout.extent(0) == n && gout.extent(1) == dout,
            "dense_backward gradient shape " + gout.shape_str() + " does not match output");
  DenseGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({dout})};
  for (int i = 0; i < n; ++i) {
    const float* xr = x.data() + static_cast<size_t>(i) * din;
    const float* gr = gout.data() + static_cast<size_t>(i) * dout;
    float* dxr = g.dx.data() + static_cast<size_t>(i) * din;
    for (int o = 0; o < dout; ++o) {
      const float gv = gr[o];
      g.db[o] += gv;
      const float* wr = w.data() + static_cast<size_t>(o) * din;
      float* dwr = g.dw.data() + static_cast<size_t>(o) * din;
      for (int j = 0; j < din; ++j) {
        dxr[j] += gv * wr[j];
        dwr[j] += gv * xr[j];
      }
    }
  }
  return g;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  int64_t n = 1;
  for (int e : shape) n *= e;
  check_arg(n == x.numel(), "reshape element count mismatch: " + x.shape_str() + " -> " +
                                shape_to_string(shape));
  return Tensor(std::move(shape), x.raw());
}

Tensor flatten(const Tensor& x) {
  check_arg(x.rank() >= 2, "flatten expects rank >= 2, got " + x.shape_str());
  const int n = x.extent(0);
  return reshape(x, {n, static_cast<int>(x.numel() / n)});
}

Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w) {
  check_rank(x, 4, "adaptive_avg_pool2d input");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  check_arg(out_h >= 1 && out_w >= 1, "adaptive_avg_pool2d output extents must be >= 1");
  check_arg(h % out_h == 0, "adaptive_avg_pool2d output height " + std::to_string(out_h) +
                                " does not divide input height " + std::to_string(h));
  check_arg(w % out_w == 0, "adaptive_avg_pool2d output width " + std::to_string(out_w) +
                                " does not divide input width " + std::to_string(w));
  const int wh = h / out_h, ww = w / out_w;
  const float inv = 1.0f / (wh * ww);
  Tensor y({n, c, out_h, out_w});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* xp = x.data() + (static_cast<size_t>(b) * c + ch) * h * w;
      float* yp = y.data() + (static_cast<size_t>(b) * c + ch) * out_h * out_w;
      for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
          float acc = 0.0f;
          for (int i = 0; i < wh; ++i) {
            const float* row = xp + static_cast<size_t>(oh * wh + i) * w + ow * ww;
            for (int j = 0; j < ww; ++j) acc += row[j];
          }
          yp[static_cast<size_t>(oh) * out_w + ow] = acc * inv;
        }
      }
    }
  }
  return y;
}

Tensor adaptive_avg_pool2d_backward(const Tensor& gout, int in_h, int in_w) {
  const int n = gout.extent(0), c = gout.extent(1), oh = gout.extent(2), ow = gout.extent(3);
  const int wh = in_h / oh, ww = in_w / ow;
  const float inv = 1.0f / (wh * ww);
  Tensor dx({n, c, in_h, in_w});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* gp = gout.data() + (static_cast<size_t>(b) * c + ch) * oh * ow;
      float* dp = dx.data() + (static_cast<size_t>(b) * c + ch) * in_h * in_w;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const float gv = gp[static_cast<size_t>(i) * ow + j] * inv;
          for (int u = 0; u < wh; ++u) {
            float* row = dp + static_cast<size_t>(i * wh + u) * in_w + j * ww;
            for (int v = 0; v < ww; ++v) row[v] += gv;
          }
        }
      }
    }
  }
  return dx;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  check_arg(!xs.empty(), "concat_channels needs at least one input");
  const Tensor& first = xs.front();
  check_rank(first, 4, "concat_channels input");
  int total_c = 0;
  for (const Tensor& t : xs) {
    check_rank(t, 4, "concat_channels input");
    check_arg(t.extent(0) == first.extent(0) && t.extent(2) == first.extent(2) &&
                  t.extent(3) == first.extent(3),
              "concat_channels extents mismatch: " + t.shape_str() + " vs " + first.shape_str());
    total_c += t.extent(1);
  }
  const int n = first.extent(0), h = first.extent(2), w = first.extent(3);
  const size_t plane = static_cast<size_t>(h) * w;
  Tensor y({n, total_c, h, w});
  for (int b = 0; b < n; ++b) {
    size_t offset = 0;
    for (const Tensor& t : xs) {
      const size_t bytes = static_cast<size_t>(t.extent(1)) * plane;
      const float* src = t.data() + static_cast<size_t>(b) * bytes;
      float* dst = y.data() + static_cast<size_t>(b) * total_c * plane + offset;
      std::copy(src, src + bytes, dst);
      offset += bytes;
    }
  }
  return y;
}

std::vector<Tensor> concat_channels_backward(const Tensor& gout,
                                             const std::vector<int>& channel_splits) {
  const int n = gout.extent(0), h = gout.extent(2), w = gout.extent(3);
  const size_t plane = static_cast<size_t>(h) * w;
  const int total_c = gout.extent(1);
  std::vector<Tensor> grads;
  grads.reserve(channel_splits.size());
  for (int c : channel_splits) grads.emplace_back(std::vector<int>{n, c, h, w});
  for (int b = 0; b < n; ++b) {
    size_t offset = 0;
    for (size_t k = 0; k < channel_splits.size(); ++k) {
      const size_t bytes = static_cast<size_t>(channel_splits[k]) * plane;
      const float* src = gout.data() + static_cast<size_t>(b) * total_c * plane + offset;
      float* dst = grads[k].data() + static_cast<size_t>(b) * bytes;
      std::copy(src, src + bytes, dst);
      offset += bytes;
    }
  }
  return grads;
}

Tensor upsample_nearest(const Tensor& x, int factor_h, int factor_w) {
  check_rank(x, 4, "upsample input");
  check_arg(factor_h >= 1 && factor_w >= 1, "upsample factors must be >= 1");
  const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
  Tensor y({n, c, h * factor_h, w * factor_w});
  const int ow = w * factor_w;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* xp = x.data() + (static_cast<size_t>(b) * c + ch) * h * w;
      float* yp = y.data() + (static_cast<size_t>(b) * c + ch) * h * factor_h * ow;
      for (int i = 0; i < h * factor_h; ++i) {
        const float* row = xp + static_cast<size_t>(i / factor_h) * w;
        float* orow = yp + static_cast<size_t>(i) * ow;
        for (int j = 0; j < ow; ++j) orow[j] = row[j / factor_w];
      }
    }
  }
  return y;
}

Tensor upsample_nearest_backward(const Tensor& gout, int factor_h, int factor_w) {
  const int n = gout.extent(0), c = gout.extent(1);
  const int oh = gout.extent(2), ow = gout.extent(3);
  const int h = oh / factor_h, w = ow / factor_w;
  Tensor dx({n, c, h, w});
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* gp = gout.data() + (static_cast<size_t>(b) * c + ch) * oh * ow;
      float* dp = dx.data() + (static_cast<size_t>(b) * c + ch) * h * w;
      for (int i = 0; i < oh; ++i) {
        const float* grow = gp + static_cast<size_t>(i) * ow;
        float* drow = dp + static_cast<size_t>(i / factor_h) * w;
        for (int j = 0; j < ow; ++j) drow[j / factor_w] += grow[j];
      }
    }
  }
  return dx;
}

Tensor grid_to_rows(const Tensor& x) {
  check_rank(x, 4, "grid_to_rows input");
  check_arg(x.extent(0) == 1, "grid_to_rows expects batch 1, got " + x.shape_str());
  const int c = x.extent(1), h = x.extent(2), w = x.extent(3);
  Tensor y({h * w, c});
  for (int ch = 0; ch < c; ++ch) {
    const float* xp = x.data() + static_cast<size_t>(ch) * h * w;
    for (int s = 0; s < h * w; ++s) y(s, ch) = xp[s];
  }
  return y;
}

Tensor grid_to_rows_backward(const Tensor& gout, int channels, int grid_h, int grid_w) {
  Tensor dx({1, channels, grid_h, grid_w});
  for (int ch = 0; ch < channels; ++ch) {
    float* dp = dx.data() + static_cast<size_t>(ch) * grid_h * grid_w;
    for (int s = 0; s < grid_h * grid_w; ++s) dp[s] = gout(s, ch);
  }
  return dx;
}

// ---- elementwise ------------------------------------------------------

#define VITLR_BINARY_OP(name, expr)                          \
  Tensor name(const Tensor& a, const Tensor& b) {            \
    check_same_shape(a, b, #name);                           \
    Tensor y(a.shape());                                     \
    for (int64_t i = 0; i < a.numel(); ++i) {                \
      const float av = a[i], bv = b[i];                      \
      (void)av;                                              \
      (void)bv;                                              \
      y[i] = (expr);                                         \
    }                                                        \
    return y;                                                \
  }

VITLR_BINARY_OP(add, av + bv)
VITLR_BINARY_OP(sub, av - bv)
VITLR_BINARY_OP(mul, av * bv)
VITLR_BINARY_OP(divide, av / bv)
VITLR_BINARY_OP(minimum, bv < av ? bv : av)
VITLR_BINARY_OP(maximum, bv > av ? bv : av)

#undef VITLR_BINARY_OP

Tensor atan_pointwise(const Tensor& x) {
  return unary_map(x, [](float v) { return std::atan(v); });
}

Tensor log_clamped(const Tensor& x, float floor) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = std::log(std::max(x[i], floor));
  return y;
}

Tensor pow_scalar(const Tensor& x, float e) {
  Tensor y(x.shape());
  if (e == 0.0f) {
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = 1.0f;
    return y;
  }
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = std::pow(x[i], e);
  return y;
}

Tensor scale(const Tensor& x, float c) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * c;
  return y;
}

Tensor add_scalar(const Tensor& x, float c) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] + c;
  return y;
}

Tensor rsub_scalar(const Tensor& x, float c) {
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) y[i] = c - x[i];
  return y;
}

Tensor scale_columns(const Tensor& x, const std::vector<float>& coeffs) {
  check_rank(x, 2, "scale_columns input");
  check_arg(static_cast<int>(coeffs.size()) == x.extent(1),
            "scale_columns coefficient count does not match columns");
  Tensor y(x.shape());
  const int n = x.extent(0), c = x.extent(1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) y(i, j) = x(i, j) * coeffs[j];
  }
  return y;
}

// ---- gather / reduce --------------------------------------------------

Tensor select_per_row(const Tensor& x, const std::vector<int>& cols) {
  check_rank(x, 2, "select_per_row input");
  const int n = x.extent(0), c = x.extent(1);
  check_arg(static_cast<int>(cols.size()) == n, "select_per_row needs one column per row");
  Tensor y({n});
  for (int i = 0; i < n; ++i) {
    check_arg(cols[i] >= 0 && cols[i] < c,
              "select_per_row column " + std::to_string(cols[i]) + " out of range for row " +
                  std::to_string(i));
    y[i] = x(i, cols[i]);
  }
  return y;
}

Tensor select_per_row_backward(const Tensor& gout, const Tensor& x, const std::vector<int>& cols) {
  Tensor dx(x.shape());
  for (int i = 0; i < x.extent(0); ++i) dx(i, cols[i]) = gout[i];
  return dx;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  check_rank(x, 2, "gather_rows input");
  check_arg(!rows.empty(), "gather_rows needs at least one row");
  const int n = x.extent(0), c = x.extent(1);
  Tensor y({static_cast<int>(rows.size()), c});
  for (size_t g = 0; g < rows.size(); ++g) {
    check_arg(rows[g] >= 0 && rows[g] < n,
              "gather_rows index " + std::to_string(rows[g]) + " out of range");
    for (int j = 0; j < c; ++j) y(static_cast<int>(g), j) = x(rows[g], j);
  }
  return y;
}

Tensor gather_rows_backward(const Tensor& gout, const Tensor& x, const std::vector<int>& rows) {
  Tensor dx(x.shape());
  for (size_t g = 0; g < rows.size(); ++g) {
    for (int j = 0; j < x.extent(1); ++j) dx(rows[g], j) += gout(static_cast<int>(g), j);
  }
  return dx;
}

Tensor select_column(const Tensor& x, int col) {
  check_rank(x, 2, "select_column input");
  check_arg(col >= 0 && col < x.extent(1),
            "select_column index " + std::to_string(col) + " out of range for " + x.shape_str());
  Tensor y({x.extent(0)});
  for (int i = 0; i < x.extent(0); ++i) y[i] = x(i, col);
  return y;
}

Tensor select_column_backward(const Tensor& gout, const Tensor& x, int col) {
  Tensor dx(x.shape());
  for (int i = 0; i < x.extent(0); ++i) dx(i, col) = gout[i];
  return dx;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
  return Tensor::scalar(static_cast<float>(acc));
}

}  // namespace vitlr::ops
