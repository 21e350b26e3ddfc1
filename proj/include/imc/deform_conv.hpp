#pragma once

#include "imc/tensor.hpp"

namespace imc {

/// Number of taps in the 3x3 kernel grid R = {-1,0,1}^2.
inline constexpr int kDeformTaps = 9;

/// Per-location fractional sampling offsets, shape (1, 2*|R|, H, W).
/// Channel 2k holds dx and channel 2k+1 holds dy for tap k = ky*3 + kx,
/// whose grid position is p_k = (kx - 1, ky - 1).
template <typename T>
struct OffsetField {
  Tensor<T> offsets;

  OffsetField() = default;
  explicit OffsetField(Tensor<T> t) : offsets(std::move(t)) {}
  static OffsetField zeros(std::int64_t h, std::int64_t w) { return OffsetField(Tensor<T>({1, 2 * kDeformTaps, h, w})); }
};

/// out(p0) = sum_k w(p_k) * f(p0 + p_k + dp_k), one deformable group, stride 1,
/// no modulation. `weights` is (outC, inC, 3, 3). Samples outside the map read 0.
template <typename T>
Tensor<T> deformable_conv(const Tensor<T>& input, const OffsetField<T>& field, const Tensor<T>& weights);

template <typename T>
struct DeformConvGrads {
  Tensor<T> grad_input;
  Tensor<T> grad_offsets;
  Tensor<T> grad_weights;
};

template <typename T>
DeformConvGrads<T> deformable_conv_backward(const Tensor<T>& input, const OffsetField<T>& field,
                                            const Tensor<T>& weights, const Tensor<T>& grad_out);

}  // namespace imc
