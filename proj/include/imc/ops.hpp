#pragma once

// Differentiable tensor primitives. Every forward has a matching analytic
// backward; callers chain them in reverse order (no autograd graph).

#include <array>
#include <cmath>
#include <vector>

#include "imc/tensor.hpp"

namespace imc {

/// Bilinear resampling uses the half-pixel (align_corners = false) convention.
inline constexpr bool kAlignCorners = false;

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
struct ConvParams {
  Tensor<T> weights;  // (outC, inC, k, k)
  Tensor<T> bias;     // (outC) or empty for no bias
  int stride = 1;
  int padding = 0;

  std::int64_t out_channels() const { return weights.dim(0); }
  std::int64_t in_channels() const { return weights.dim(1); }
  std::int64_t kernel() const { return weights.dim(2); }
};

template <typename T>
struct ConvGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_weights;
  Tensor<T> grad_bias;  // empty when the conv has no bias
};

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, int stride, int padding);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params);

/// Gradients w.r.t. input, weights and bias. `need_input_grad = false` skips
/// the col2im scatter for layers that sit directly on the data.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params, const Tensor<T>& grad_out,
                             bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Bilinear sampling with zero padding outside the map.

/// Four integer taps of a bilinear sample. Taps outside the map carry
/// weight 0 and index 0.
template <typename T>
struct BilinearTaps {
  std::array<std::int64_t, 4> index{};
  std::array<T, 4> weight{};
  // Partial derivatives of each tap weight w.r.t. x and y.
  std::array<T, 4> dweight_dx{};
  std::array<T, 4> dweight_dy{};
  bool inside = false;
};

template <typename T>
BilinearTaps<T> bilinear_taps(std::int64_t height, std::int64_t width, T x, T y) {
  BilinearTaps<T> taps;
  if (y <= T(-1) || y >= T(height) || x <= T(-1) || x >= T(width)) return taps;
  taps.inside = true;
  const T fx = std::floor(x);
  const T fy = std::floor(y);
  const auto x0 = static_cast<std::int64_t>(fx);
  const auto y0 = static_cast<std::int64_t>(fy);
  const T lx = x - fx;
  const T ly = y - fy;
  const T hx = T(1) - lx;
  const T hy = T(1) - ly;
  const std::array<std::int64_t, 4> xs{x0, x0 + 1, x0, x0 + 1};
  const std::array<std::int64_t, 4> ys{y0, y0, y0 + 1, y0 + 1};
  const std::array<T, 4> w{hy * hx, hy * lx, ly * hx, ly * lx};
  const std::array<T, 4> dx{-hy, hy, -ly, ly};
  const std::array<T, 4> dy{-hx, -lx, hx, lx};
  for (int i = 0; i < 4; ++i) {
    if (xs[i] >= 0 && xs[i] < width && ys[i] >= 0 && ys[i] < height) {
      taps.index[i] = ys[i] * width + xs[i];
      taps.weight[i] = w[i];
      taps.dweight_dx[i] = dx[i];
      taps.dweight_dy[i] = dy[i];
    }
  }
  return taps;
}

/// Value of channel `channel` of batch item 0 at fractional (x, y).
template <typename T>
T bilinear_sample(const Tensor<T>& feature, std::int64_t channel, T x, T y);

template <typename T>
struct SampleGrads {
  T grad_x = 0;
  T grad_y = 0;
};

/// Accumulates `grad * d(sample)/d(feature)` into `grad_feature` and returns
/// the coordinate gradients.
template <typename T>
SampleGrads<T> bilinear_sample_backward(const Tensor<T>& feature, std::int64_t channel, T x, T y, T grad,
                                        Tensor<T>& grad_feature);

// ---------------------------------------------------------------------------
// Matrix ops (rank-2 tensors)

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
struct MatmulGrads {
  Tensor<T> grad_a;
  Tensor<T> grad_b;
};

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_out);

/// out(i, j) = exp(m(i, j)) / sum_n exp(m(n, j)); each column sums to 1.
template <typename T>
Tensor<T> softmax_columns(const Tensor<T>& matrix);

template <typename T>
Tensor<T> softmax_columns_backward(const Tensor<T>& out, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

/// Takes the forward output, not the input.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& out, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// mul backward is grad_a = grad * b, grad_b = grad * a; use mul().

/// x (N,C,H,W) times a per-channel scalar s (N,C,1,1).
template <typename T>
Tensor<T> broadcast_mul_channel(const Tensor<T>& x, const Tensor<T>& s);

template <typename T>
struct BroadcastGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_s;
};

template <typename T>
BroadcastGrads<T> broadcast_mul_channel_backward(const Tensor<T>& x, const Tensor<T>& s, const Tensor<T>& grad_out);

/// x (N,C,H,W) times a single-channel map m (N,1,H,W) broadcast over channels.
template <typename T>
Tensor<T> broadcast_mul_spatial(const Tensor<T>& x, const Tensor<T>& m);

template <typename T>
BroadcastGrads<T> broadcast_mul_spatial_backward(const Tensor<T>& x, const Tensor<T>& m, const Tensor<T>& grad_out);

/// (N,C,H,W) -> (N,1,H,W) sum over channels.
template <typename T>
Tensor<T> sum_channels(const Tensor<T>& x);

template <typename T>
Tensor<T> sum_channels_backward(const Tensor<T>& grad_out, std::int64_t channels);

// ---------------------------------------------------------------------------
// Channel concatenation

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels<T>({&a, &b});
}

/// Inverse of concat_channels: split along C into pieces with the given sizes.
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<std::int64_t>& sizes);

// ---------------------------------------------------------------------------
// Pooling and resampling

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape);

/// 2x2 window, stride 2. Requires even H and W.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x);

template <typename T>
Tensor<T> max_pool2_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& grad_out);

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, std::int64_t in_h, std::int64_t in_w);

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  return upsample_bilinear(x, x.h() * 2, x.w() * 2);
}

}  // namespace imc
