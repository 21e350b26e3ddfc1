#include "imc/deform_conv.hpp"

#include <Eigen/Core>
#include <vector>

#include "imc/ops.hpp"

namespace imc {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void check_shapes(const Tensor<T>& input, const OffsetField<T>& field, const Tensor<T>& weights) {
  require_nchw(input, "deformable_conv input");
  if (input.n() != 1) throw ShapeError("deformable_conv: batch size must be 1, got " + shape_str(input.shape()));
  if (field.offsets.shape() != Shape{1, 2 * kDeformTaps, input.h(), input.w()}) {
    throw ShapeError("deformable_conv: offsets " + shape_str(field.offsets.shape()) + " do not match input " +
                     shape_str(input.shape()));
  }
  if (weights.rank() != 4 || weights.dim(1) != input.c() || weights.dim(2) != 3 || weights.dim(3) != 3) {
    throw ShapeError("deformable_conv: weights " + shape_str(weights.shape()) + " incompatible with input " +
                     shape_str(input.shape()));
  }
}

// Bilinear taps for every (tap, position); offsets are shared across channels,
// so these are computed once per call.
template <typename T>
std::vector<BilinearTaps<T>> sampling_taps(const OffsetField<T>& field, std::int64_t h, std::int64_t w) {
  const std::int64_t plane = h * w;
  std::vector<BilinearTaps<T>> taps(static_cast<std::size_t>(kDeformTaps * plane));
  const T* off = field.offsets.data();
  for (int k = 0; k < kDeformTaps; ++k) {
    const int kx = k % 3 - 1;
    const int ky = k / 3 - 1;
    const T* dx = off + (2 * k) * plane;
    const T* dy = off + (2 * k + 1) * plane;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t p = y * w + x;
        taps[static_cast<std::size_t>(k * plane + p)] =
            bilinear_taps<T>(h, w, static_cast<T>(x + kx) + dx[p], static_cast<T>(y + ky) + dy[p]);
      }
    }
  }
  return taps;
}

// cols: (C*9) x (H*W), row c*9 + k.
template <typename T>
void deform_im2col(const Tensor<T>& input, const std::vector<BilinearTaps<T>>& taps, T* cols) {
  const std::int64_t plane = input.h() * input.w();
  for (std::int64_t c = 0; c < input.c(); ++c) {
    const T* img = input.plane(0, c);
    for (int k = 0; k < kDeformTaps; ++k) {
      T* row = cols + (c * kDeformTaps + k) * plane;
      const BilinearTaps<T>* tk = taps.data() + k * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        const auto& t = tk[p];
        row[p] = t.weight[0] * img[t.index[0]] + t.weight[1] * img[t.index[1]] + t.weight[2] * img[t.index[2]] +
                 t.weight[3] * img[t.index[3]];
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> deformable_conv(const Tensor<T>& input, const OffsetField<T>& field, const Tensor<T>& weights) {
  check_shapes(input, field, weights);
  const std::int64_t plane = input.h() * input.w();
  const std::int64_t kk = input.c() * kDeformTaps;
  const auto taps = sampling_taps(field, input.h(), input.w());
  AlignedVector<T> cols(static_cast<std::size_t>(kk * plane));
  deform_im2col(input, taps, cols.data());
  Tensor<T> out({1, weights.dim(0), input.h(), input.w()});
  Eigen::Map<RowMat<T>>(out.data(), weights.dim(0), plane).noalias() =
      Eigen::Map<const RowMat<T>>(weights.data(), weights.dim(0), kk) *
      Eigen::Map<const RowMat<T>>(cols.data(), kk, plane);
  return out;
}

template <typename T>
DeformConvGrads<T> deformable_conv_backward(const Tensor<T>& input, const OffsetField<T>& field,
                                            const Tensor<T>& weights, const Tensor<T>& grad_out) {
  check_shapes(input, field, weights);
  const std::int64_t plane = input.h() * input.w();
  const std::int64_t kk = input.c() * kDeformTaps;
  const std::int64_t oc = weights.dim(0);
  if (grad_out.shape() != Shape{1, oc, input.h(), input.w()}) {
    throw ShapeError("deformable_conv_backward: grad_out shape " + shape_str(grad_out.shape()));
  }
  const auto taps = sampling_taps(field, input.h(), input.w());
  AlignedVector<T> cols(static_cast<std::size_t>(kk * plane));
  deform_im2col(input, taps, cols.data());

  DeformConvGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(field.offsets.shape()), Tensor<T>(weights.shape())};
  Eigen::Map<const RowMat<T>> gy(grad_out.data(), oc, plane);
  Eigen::Map<RowMat<T>>(g.grad_weights.data(), oc, kk).noalias() =
      gy * Eigen::Map<const RowMat<T>>(cols.data(), kk, plane).transpose();
  AlignedVector<T> gcols(static_cast<std::size_t>(kk * plane));
  Eigen::Map<RowMat<T>>(gcols.data(), kk, plane).noalias() =
      Eigen::Map<const RowMat<T>>(weights.data(), oc, kk).transpose() * gy;

  T* goff = g.grad_offsets.data();
  for (std::int64_t c = 0; c < input.c(); ++c) {
    const T* img = input.plane(0, c);
    T* gimg = g.grad_input.plane(0, c);
    for (int k = 0; k < kDeformTaps; ++k) {
      const T* grow = gcols.data() + (c * kDeformTaps + k) * plane;
      const BilinearTaps<T>* tk = taps.data() + k * plane;
      T* gdx = goff + (2 * k) * plane;
      T* gdy = goff + (2 * k + 1) * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        const auto& t = tk[p];
        if (!t.inside) continue;
        const T gv = grow[p];
        T sx = 0, sy = 0;
        for (int i = 0; i < 4; ++i) {
          gimg[t.index[i]] += gv * t.weight[i];
          sx += t.dweight_dx[i] * img[t.index[i]];
          sy += t.dweight_dy[i] * img[t.index[i]];
        }
        gdx[p] += gv * sx;
        gdy[p] += gv * sy;
      }
    }
  }
  return g;
}

template Tensor<float> deformable_conv(const Tensor<float>&, const OffsetField<float>&, const Tensor<float>&);
template Tensor<double> deformable_conv(const Tensor<double>&, const OffsetField<double>&, const Tensor<double>&);
template DeformConvGrads<float> deformable_conv_backward(const Tensor<float>&, const OffsetField<float>&,
                                                         const Tensor<float>&, const Tensor<float>&);
template DeformConvGrads<double> deformable_conv_backward(const Tensor<double>&, const OffsetField<double>&,
                                                          const Tensor<double>&, const Tensor<double>&);

}  // namespace imc
