#pragma once

#include <vector>

#include "vitlr/tensor.hpp"

// Forward and reverse-mode kernels for the restricted operator set. Every
// forward op here is a pure function; the matching *_backward takes the
// upstream gradient plus whatever the forward saved and returns gradients
// for each differentiable input.
namespace vitlr::ops {

// ---- convolutions -----------------------------------------------------

// Cross-correlation (no kernel flip), NCHW. x:[N,Ci,H,W] w:[Co,Ci,k,k]
// b:[Co]. Output extent (H + 2*pad - k) / stride + 1 must be integral.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

struct Conv2dGrads {
  Tensor dx, dw, db;
};
Conv2dGrads conv2d_backward(const Tensor& gout, const Tensor& x, const Tensor& w, int stride,
                            int padding);

// Depthwise: one kernel per channel, w:[C,1,k,k]. Output channel c depends
// only on input channel c.
Tensor dwconv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);
Conv2dGrads dwconv2d_backward(const Tensor& gout, const Tensor& x, const Tensor& w, int stride,
                              int padding);

// ---- normalization ----------------------------------------------------

struct BatchNormResult {
  Tensor y;
  Tensor mean;  // statistics used for normalization (batch or running)
  Tensor var;
};

// Train mode normalizes by biased batch statistics over (N,H,W) per channel
// and updates running stats in place; eval mode reads running stats only.
BatchNormResult batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            Tensor& running_mean, Tensor& running_var, float eps, bool train,
                            float momentum);

struct NormGrads {
  Tensor dx, dgamma, dbeta;
};
NormGrads batchnorm2d_backward(const Tensor& gout, const Tensor& x, const Tensor& gamma,
                               const Tensor& mean, const Tensor& var, float eps, bool train);

// Normalizes over the channel axis per spatial location (rank 4) or per row
// (rank 2). gamma/beta indexed by channel.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
NormGrads layernorm_backward(const Tensor& gout, const Tensor& x, const Tensor& gamma, float eps);

// ---- activations ------------------------------------------------------

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& gout, const Tensor& x);  // gradient 0 at x == 0

Tensor sigmoid(const Tensor& x);  // overflow-safe
Tensor sigmoid_backward(const Tensor& gout, const Tensor& y);

// Per-location distribution over the channel axis (axis 1); rows of a rank-2
// input. Sums to 1 within 1e-6.
Tensor softmax_channels(const Tensor& x);
Tensor softmax_channels_backward(const Tensor& gout, const Tensor& y);

// ---- dense / shape ----------------------------------------------------

// Affine map: x:[N,Din] w:[Dout,Din] b:[Dout] -> [N,Dout].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
struct DenseGrads {
  Tensor dx, dw, db;
};
DenseGrads dense_backward(const Tensor& gout, const Tensor& x, const Tensor& w);

// Element order is preserved; element count must match.
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor flatten(const Tensor& x);  // [N, rest]

// Output extents must divide the input extents (disjoint windows).
Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w);
Tensor adaptive_avg_pool2d_backward(const Tensor& gout, int in_h, int in_w);

Tensor concat_channels(const std::vector<Tensor>& xs);
std::vector<Tensor> concat_channels_backward(const Tensor& gout,
                                             const std::vector<int>& channel_splits);

// Integer-factor nearest upsampling of a rank-4 map.
Tensor upsample_nearest(const Tensor& x, int factor_h, int factor_w);
Tensor upsample_nearest_backward(const Tensor& gout, int factor_h, int factor_w);

// [1,C,H,W] -> [H*W, C]: one row per spatial location (query readout).
Tensor grid_to_rows(const Tensor& x);
Tensor grid_to_rows_backward(const Tensor& gout, int channels, int grid_h, int grid_w);

// ---- elementwise ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);  // ties take a
Tensor maximum(const Tensor& a, const Tensor& b);  // ties take a
Tensor atan_pointwise(const Tensor& x);
// log(max(x, floor)); gradient 0 where x <= floor.
Tensor log_clamped(const Tensor& x, float floor);
// x^e for x >= 0; e == 0 yields ones with zero gradient.
Tensor pow_scalar(const Tensor& x, float e);
Tensor scale(const Tensor& x, float c);
Tensor add_scalar(const Tensor& x, float c);
Tensor rsub_scalar(const Tensor& x, float c);  // c - x

// Per-column scaling of a rank-2 tensor: y[i,j] = x[i,j] * coeffs[j].
Tensor scale_columns(const Tensor& x, const std::vector<float>& coeffs);

// ---- gather / reduce --------------------------------------------------

// out[i] = x[i, cols[i]] for rank-2 x.
Tensor select_per_row(const Tensor& x, const std::vector<int>& cols);
Tensor select_per_row_backward(const Tensor& gout, const Tensor& x, const std::vector<int>& cols);

// out[g, :] = x[rows[g], :] for rank-2 x.
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor gather_rows_backward(const Tensor& gout, const Tensor& x, const std::vector<int>& rows);

// out[i] = x[i, col] for rank-2 x.
Tensor select_column(const Tensor& x, int col);
Tensor select_column_backward(const Tensor& gout, const Tensor& x, int col);

Tensor sum_all(const Tensor& x);  // shape [1], double accumulation

}  // namespace vitlr::ops
