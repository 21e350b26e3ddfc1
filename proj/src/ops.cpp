#include "imc/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <limits>

namespace imc {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::int64_t n, c, h, w;
  std::int64_t oc, k;
  std::int64_t oh, ow;
  int stride, pad;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const ConvParams<T>& p) {
  require_nchw(input, "conv2d input");
  if (p.weights.rank() != 4) throw ShapeError("conv2d: weights must be (outC,inC,k,k), got " + shape_str(p.weights.shape()));
  if (p.weights.dim(2) != p.weights.dim(3)) throw ShapeError("conv2d: non-square kernel " + shape_str(p.weights.shape()));
  if (p.stride < 1 || p.padding < 0) throw ShapeError("conv2d: invalid stride/padding");
  if (input.c() != p.weights.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.c()) + " channels, weights expect " +
                     std::to_string(p.weights.dim(1)) + " (input " + shape_str(input.shape()) + ", weights " +
                     shape_str(p.weights.shape()) + ")");
  }
  if (!p.bias.empty() && (p.bias.rank() != 1 || p.bias.dim(0) != p.weights.dim(0))) {
    throw ShapeError("conv2d: bias shape " + shape_str(p.bias.shape()) + " does not match weights " +
                     shape_str(p.weights.shape()));
  }
  ConvGeometry g{input.n(), input.c(), input.h(), input.w(), p.weights.dim(0), p.weights.dim(2), 0, 0, p.stride, p.padding};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " smaller than kernel " + std::to_string(g.k) +
                     " after padding " + std::to_string(g.pad));
  }
  g.oh = conv_out_size(g.h, g.k, g.stride, g.pad);
  g.ow = conv_out_size(g.w, g.k, g.stride, g.pad);
  return g;
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

// cols: (c*k*k) x (oh*ow)
template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* cols) {
  const std::int64_t plane = g.oh * g.ow;
  for (std::int64_t ch = 0; ch < g.c; ++ch) {
    const T* img = src + ch * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((ch * g.k + ky) * g.k + kx) * plane;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          T* out = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.ow, T(0));
            continue;
          }
          const T* line = img + iy * g.w;
          if (g.stride == 1) {
            const std::int64_t shift = kx - g.pad;
            const std::int64_t lo = std::max<std::int64_t>(0, -shift);
            const std::int64_t hi = std::min<std::int64_t>(g.ow, g.w - shift);
            std::fill(out, out + std::min(lo, g.ow), T(0));
            if (hi > lo) std::copy(line + lo + shift, line + hi + shift, out + lo);
            if (hi < g.ow) std::fill(out + std::max(hi, lo), out + g.ow, T(0));
          } else {
            for (std::int64_t ox = 0; ox < g.ow; ++ox) {
              const std::int64_t ix = ox * g.stride - g.pad + kx;
              out[ox] = (ix >= 0 && ix < g.w) ? line[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* dst) {
  const std::int64_t plane = g.oh * g.ow;
  for (std::int64_t ch = 0; ch < g.c; ++ch) {
    T* img = dst + ch * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.k; ++ky) {
      for (std::int64_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ch * g.k + ky) * g.k + kx) * plane;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* line = img + iy * g.w;
          const T* in = row + oy * g.ow;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) line[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
}

// Linear interpolation table for one axis of align_corners=false resampling.
struct AxisTable {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> l1;
};

AxisTable axis_table(std::int64_t in, std::int64_t out) {
  AxisTable t;
  t.i0.resize(static_cast<std::size_t>(out));
  t.i1.resize(static_cast<std::size_t>(out));
  t.l1.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::int64_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    t.i0[static_cast<std::size_t>(o)] = i0;
    t.i1[static_cast<std::size_t>(o)] = i1;
    t.l1[static_cast<std::size_t>(o)] = src - static_cast<double>(i0);
  }
  return t;
}

}  // namespace

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params) {
  const ConvGeometry g = conv_geometry(input, params);
  Tensor<T> out({g.n, g.oc, g.oh, g.ow});
  const std::int64_t kk = g.c * g.k * g.k;
  const std::int64_t plane = g.oh * g.ow;
  ConstMatMap<T> w(params.weights.data(), g.oc, kk);
  AlignedVector<T> cols;
  if (!is_pointwise(g)) cols.resize(static_cast<std::size_t>(kk * plane));
  for (std::int64_t b = 0; b < g.n; ++b) {
    const T* src = input.data() + b * g.c * g.h * g.w;
    MatMap<T> y(out.data() + b * g.oc * plane, g.oc, plane);
    if (is_pointwise(g)) {
      y.noalias() = w * ConstMatMap<T>(src, kk, plane);
    } else {
      im2col(src, g, cols.data());
      y.noalias() = w * ConstMatMap<T>(cols.data(), kk, plane);
    }
    if (!params.bias.empty()) {
      for (std::int64_t o = 0; o < g.oc; ++o) y.row(o).array() += params.bias[o];
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params, const Tensor<T>& grad_out,
                             bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, params);
  const Shape expected{g.n, g.oc, g.oh, g.ow};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv2d_backward: grad_out " + shape_str(grad_out.shape()) + " but output is " +
                     shape_str(expected));
  }
  ConvGrads<T> grads;
  grads.grad_weights = Tensor<T>(params.weights.shape());
  if (!params.bias.empty()) grads.grad_bias = Tensor<T>(params.bias.shape());
  if (need_input_grad) grads.grad_input = Tensor<T>(input.shape());

  const std::int64_t kk = g.c * g.k * g.k;
  const std::int64_t plane = g.oh * g.ow;
  ConstMatMap<T> w(params.weights.data(), g.oc, kk);
  MatMap<T> gw(grads.grad_weights.data(), g.oc, kk);
  AlignedVector<T> cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(kk * plane));
  AlignedVector<T> gcols(need_input_grad && !is_pointwise(g) ? static_cast<std::size_t>(kk * plane) : 0);
  for (std::int64_t b = 0; b < g.n; ++b) {
    const T* src = input.data() + b * g.c * g.h * g.w;
    ConstMatMap<T> gy(grad_out.data() + b * g.oc * plane, g.oc, plane);
    if (is_pointwise(g)) {
      gw.noalias() += gy * ConstMatMap<T>(src, kk, plane).transpose();
      if (need_input_grad) {
        MatMap<T>(grads.grad_input.data() + b * g.c * g.h * g.w, kk, plane).noalias() = w.transpose() * gy;
      }
    } else {
      im2col(src, g, cols.data());
      gw.noalias() += gy * ConstMatMap<T>(cols.data(), kk, plane).transpose();
      if (need_input_grad) {
        MatMap<T>(gcols.data(), kk, plane).noalias() = w.transpose() * gy;
        col2im(gcols.data(), g, grads.grad_input.data() + b * g.c * g.h * g.w);
      }
    }
    if (!params.bias.empty()) {
      for (std::int64_t o = 0; o < g.oc; ++o) grads.grad_bias[o] += gy.row(o).sum();
    }
  }
  return grads;
}

template <typename T>
T bilinear_sample(const Tensor<T>& feature, std::int64_t channel, T x, T y) {
  require_nchw(feature, "bilinear_sample");
  if (channel < 0 || channel >= feature.c()) throw ShapeError("bilinear_sample: channel out of range");
  const auto taps = bilinear_taps<T>(feature.h(), feature.w(), x, y);
  if (!taps.inside) return T(0);
  const T* p = feature.plane(0, channel);
  T v = 0;
  for (int i = 0; i < 4; ++i) v += taps.weight[i] * p[taps.index[i]];
  return v;
}

template <typename T>
SampleGrads<T> bilinear_sample_backward(const Tensor<T>& feature, std::int64_t channel, T x, T y, T grad,
                                        Tensor<T>& grad_feature) {
  require_same_shape(feature, grad_feature, "bilinear_sample_backward");
  const auto taps = bilinear_taps<T>(feature.h(), feature.w(), x, y);
  SampleGrads<T> g;
  if (!taps.inside) return g;
  const T* p = feature.plane(0, channel);
  T* gp = grad_feature.plane(0, channel);
  for (int i = 0; i < 4; ++i) {
    gp[taps.index[i]] += grad * taps.weight[i];
    g.grad_x += grad * taps.dweight_dx[i] * p[taps.index[i]];
    g.grad_y += grad * taps.dweight_dy[i] * p[taps.index[i]];
  }
  return g;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  MatMap<T>(out.data(), a.dim(0), b.dim(1)).noalias() =
      ConstMatMap<T>(a.data(), a.dim(0), a.dim(1)) * ConstMatMap<T>(b.data(), b.dim(0), b.dim(1));
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2(a, "transpose");
  Tensor<T> out({a.dim(1), a.dim(0)});
  MatMap<T>(out.data(), a.dim(1), a.dim(0)) = ConstMatMap<T>(a.data(), a.dim(0), a.dim(1)).transpose();
  return out;
}

template <typename T>
MatmulGrads<T> matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& grad_out) {
  if (grad_out.shape() != Shape{a.dim(0), b.dim(1)}) {
    throw ShapeError("matmul_backward: grad_out shape " + shape_str(grad_out.shape()));
  }
  MatmulGrads<T> g{Tensor<T>(a.shape()), Tensor<T>(b.shape())};
  ConstMatMap<T> ma(a.data(), a.dim(0), a.dim(1));
  ConstMatMap<T> mb(b.data(), b.dim(0), b.dim(1));
  ConstMatMap<T> gy(grad_out.data(), grad_out.dim(0), grad_out.dim(1));
  MatMap<T>(g.grad_a.data(), a.dim(0), a.dim(1)).noalias() = gy * mb.transpose();
  MatMap<T>(g.grad_b.data(), b.dim(0), b.dim(1)).noalias() = ma.transpose() * gy;
  return g;
}

template <typename T>
Tensor<T> softmax_columns(const Tensor<T>& matrix) {
  require_rank2(matrix, "softmax_columns");
  const std::int64_t rows = matrix.dim(0), cols = matrix.dim(1);
  Tensor<T> out(matrix.shape());
  for (std::int64_t j = 0; j < cols; ++j) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t i = 0; i < rows; ++i) mx = std::max(mx, matrix[i * cols + j]);
    T denom = 0;
    for (std::int64_t i = 0; i < rows; ++i) {
      const T e = std::exp(matrix[i * cols + j] - mx);
      out[i * cols + j] = e;
      denom += e;
    }
    for (std::int64_t i = 0; i < rows; ++i) out[i * cols + j] /= denom;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_columns_backward(const Tensor<T>& out, const Tensor<T>& grad_out) {
  require_same_shape(out, grad_out, "softmax_columns_backward");
  const std::int64_t rows = out.dim(0), cols = out.dim(1);
  Tensor<T> g(out.shape());
  for (std::int64_t j = 0; j < cols; ++j) {
    T dot = 0;
    for (std::int64_t i = 0; i < rows; ++i) dot += out[i * cols + j] * grad_out[i * cols + j];
    for (std::int64_t i = 0; i < rows; ++i) g[i * cols + j] = out[i * cols + j] * (grad_out[i * cols + j] - dot);
  }
  return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    // Split by sign so exp never overflows.
    if (v >= 0) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& out, const Tensor<T>& grad_out) {
  require_same_shape(out, grad_out, "sigmoid_backward");
  Tensor<T> g(out.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) g[i] = grad_out[i] * out[i] * (T(1) - out[i]);
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor<T> g(input.shape());
  for (std::int64_t i = 0; i < input.numel(); ++i) g[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a;
  out += b;
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> broadcast_mul_channel(const Tensor<T>& x, const Tensor<T>& s) {
  require_nchw(x, "broadcast_mul_channel");
  if (s.shape() != Shape{x.n(), x.c(), 1, 1}) {
    throw ShapeError("broadcast_mul_channel: scale " + shape_str(s.shape()) + " for input " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  const std::int64_t plane = x.h() * x.w();
  for (std::int64_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const T k = s[nc];
    for (std::int64_t i = 0; i < plane; ++i) out[nc * plane + i] = x[nc * plane + i] * k;
  }
  return out;
}

template <typename T>
BroadcastGrads<T> broadcast_mul_channel_backward(const Tensor<T>& x, const Tensor<T>& s, const Tensor<T>& grad_out) {
  require_same_shape(x, grad_out, "broadcast_mul_channel_backward");
  BroadcastGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(s.shape())};
  const std::int64_t plane = x.h() * x.w();
  for (std::int64_t nc = 0; nc < x.n() * x.c(); ++nc) {
    T acc = 0;
    for (std::int64_t i = 0; i < plane; ++i) {
      g.grad_x[nc * plane + i] = grad_out[nc * plane + i] * s[nc];
      acc += grad_out[nc * plane + i] * x[nc * plane + i];
    }
    g.grad_s[nc] = acc;
  }
  return g;
}

template <typename T>
Tensor<T> broadcast_mul_spatial(const Tensor<T>& x, const Tensor<T>& m) {
  require_nchw(x, "broadcast_mul_spatial");
  if (m.shape() != Shape{x.n(), 1, x.h(), x.w()}) {
    throw ShapeError("broadcast_mul_spatial: map " + shape_str(m.shape()) + " for input " + shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  const std::int64_t plane = x.h() * x.w();
  for (std::int64_t b = 0; b < x.n(); ++b) {
    const T* mp = m.data() + b * plane;
    for (std::int64_t c = 0; c < x.c(); ++c) {
      const T* xp = x.plane(b, c);
      T* op = out.plane(b, c);
      for (std::int64_t i = 0; i < plane; ++i) op[i] = xp[i] * mp[i];
    }
  }
  return out;
}

template <typename T>
BroadcastGrads<T> broadcast_mul_spatial_backward(const Tensor<T>& x, const Tensor<T>& m, const Tensor<T>& grad_out) {
  require_same_shape(x, grad_out, "broadcast_mul_spatial_backward");
  BroadcastGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(m.shape())};
  const std::int64_t plane = x.h() * x.w();
  for (std::int64_t b = 0; b < x.n(); ++b) {
    const T* mp = m.data() + b * plane;
    T* gm = g.grad_s.data() + b * plane;
    for (std::int64_t c = 0; c < x.c(); ++c) {
      const T* xp = x.plane(b, c);
      const T* gp = grad_out.plane(b, c);
      T* gx = g.grad_x.plane(b, c);
      for (std::int64_t i = 0; i < plane; ++i) {
        gx[i] = gp[i] * mp[i];
        gm[i] += gp[i] * xp[i];
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> sum_channels(const Tensor<T>& x) {
  require_nchw(x, "sum_channels");
  Tensor<T> out({x.n(), 1, x.h(), x.w()});
  const std::int64_t plane = x.h() * x.w();
  for (std::int64_t b = 0; b < x.n(); ++b) {
    T* op = out.data() + b * plane;
    for (std::int64_t c = 0; c < x.c(); ++c) {
      const T* xp = x.plane(b, c);
      for (std::int64_t i = 0; i < plane; ++i) op[i] += xp[i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> sum_channels_backward(const Tensor<T>& grad_out, std::int64_t channels) {
  require_nchw(grad_out, "sum_channels_backward");
  Tensor<T> g({grad_out.n(), channels, grad_out.h(), grad_out.w()});
  const std::int64_t plane = grad_out.h() * grad_out.w();
  for (std::int64_t b = 0; b < grad_out.n(); ++b) {
    for (std::int64_t c = 0; c < channels; ++c) {
      std::copy(grad_out.data() + b * plane, grad_out.data() + (b + 1) * plane, g.plane(b, c));
    }
  }
  return g;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor<T>& first = *parts.front();
  require_nchw(first, "concat_channels");
  std::int64_t total = 0;
  for (const auto* p : parts) {
    require_nchw(*p, "concat_channels");
    if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w()) {
      throw ShapeError("concat_channels: incompatible shapes " + shape_str(first.shape()) + " and " +
                       shape_str(p->shape()));
    }
    total += p->c();
  }
  Tensor<T> out({first.n(), total, first.h(), first.w()});
  const std::int64_t plane = first.h() * first.w();
  for (std::int64_t b = 0; b < first.n(); ++b) {
    T* dst = out.plane(b, 0);
    for (const auto* p : parts) {
      const T* src = p->plane(b, 0);
      dst = std::copy(src, src + p->c() * plane, dst);
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<std::int64_t>& sizes) {
  require_nchw(x, "split_channels");
  std::int64_t total = 0;
  for (auto s : sizes) total += s;
  if (total != x.c()) {
    throw ShapeError("split_channels: sizes sum to " + std::to_string(total) + " but input has " +
                     std::to_string(x.c()) + " channels");
  }
  const std::int64_t plane = x.h() * x.w();
  std::vector<Tensor<T>> out;
  out.reserve(sizes.size());
  for (auto s : sizes) out.emplace_back(Shape{x.n(), s, x.h(), x.w()});
  for (std::int64_t b = 0; b < x.n(); ++b) {
    const T* src = x.plane(b, 0);
    for (auto& o : out) {
      std::copy(src, src + o.c() * plane, o.plane(b, 0));
      src += o.c() * plane;
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_nchw(x, "global_avg_pool");
  Tensor<T> out({x.n(), x.c(), 1, 1});
  const std::int64_t plane = x.h() * x.w();
  for (std::int64_t nc = 0; nc < x.n() * x.c(); ++nc) {
    T acc = 0;
    for (std::int64_t i = 0; i < plane; ++i) acc += x[nc * plane + i];
    out[nc] = acc / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  Tensor<T> g(input_shape);
  const std::int64_t plane = input_shape[2] * input_shape[3];
  for (std::int64_t nc = 0; nc < input_shape[0] * input_shape[1]; ++nc) {
    const T v = grad_out[nc] / static_cast<T>(plane);
    std::fill(g.data() + nc * plane, g.data() + (nc + 1) * plane, v);
  }
  return g;
}

namespace {
template <typename T>
void require_even(const Tensor<T>& x, const char* what) {
  require_nchw(x, what);
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw ShapeError(std::string(what) + ": spatial dims must be even, got " + shape_str(x.shape()));
  }
}
}  // namespace

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  require_even(x, "max_pool2");
  const std::int64_t oh = x.h() / 2, ow = x.w() / 2;
  Tensor<T> out({x.n(), x.c(), oh, ow});
  for (std::int64_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const T* src = x.data() + nc * x.h() * x.w();
    T* dst = out.data() + nc * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const T* p = src + 2 * y * x.w() + 2 * xx;
        dst[y * ow + xx] = std::max(std::max(p[0], p[1]), std::max(p[x.w()], p[x.w() + 1]));
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  require_even(x, "max_pool2_backward");
  const std::int64_t oh = x.h() / 2, ow = x.w() / 2;
  if (grad_out.shape() != Shape{x.n(), x.c(), oh, ow}) throw ShapeError("max_pool2_backward: grad_out shape");
  Tensor<T> g(x.shape());
  for (std::int64_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const T* src = x.data() + nc * x.h() * x.w();
    T* gdst = g.data() + nc * x.h() * x.w();
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const std::int64_t base = 2 * y * x.w() + 2 * xx;
        const std::array<std::int64_t, 4> idx{base, base + 1, base + x.w(), base + x.w() + 1};
        std::int64_t best = idx[0];
        for (auto i : idx) {
          if (src[i] > src[best]) best = i;
        }
        gdst[best] += grad_out[nc * oh * ow + y * ow + xx];
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require_even(x, "avg_pool2");
  const std::int64_t oh = x.h() / 2, ow = x.w() / 2;
  Tensor<T> out({x.n(), x.c(), oh, ow});
  for (std::int64_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const T* src = x.data() + nc * x.h() * x.w();
    T* dst = out.data() + nc * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const T* p = src + 2 * y * x.w() + 2 * xx;
        dst[y * ow + xx] = (p[0] + p[1] + p[x.w()] + p[x.w() + 1]) * T(0.25);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& grad_out) {
  require_nchw(grad_out, "avg_pool2_backward");
  const std::int64_t oh = grad_out.h(), ow = grad_out.w();
  Tensor<T> g({grad_out.n(), grad_out.c(), oh * 2, ow * 2});
  const std::int64_t w = ow * 2;
  for (std::int64_t nc = 0; nc < grad_out.n() * grad_out.c(); ++nc) {
    T* dst = g.data() + nc * oh * ow * 4;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const T v = grad_out[nc * oh * ow + y * ow + xx] * T(0.25);
        T* p = dst + 2 * y * w + 2 * xx;
        p[0] = v;
        p[1] = v;
        p[w] = v;
        p[w + 1] = v;
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  require_nchw(x, "upsample_bilinear");
  if (out_h < 1 || out_w < 1) throw ShapeError("upsample_bilinear: empty target size");
  const AxisTable ty = axis_table(x.h(), out_h);
  const AxisTable tx = axis_table(x.w(), out_w);
  Tensor<T> out({x.n(), x.c(), out_h, out_w});
  for (std::int64_t nc = 0; nc < x.n() * x.c(); ++nc) {
    const T* src = x.data() + nc * x.h() * x.w();
    T* dst = out.data() + nc * out_h * out_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto sy = static_cast<std::size_t>(oy);
      const T ly = static_cast<T>(ty.l1[sy]);
      const T* r0 = src + ty.i0[sy] * x.w();
      const T* r1 = src + ty.i1[sy] * x.w();
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto sx = static_cast<std::size_t>(ox);
        const T lx = static_cast<T>(tx.l1[sx]);
        const auto x0 = tx.i0[sx], x1 = tx.i1[sx];
        const T top = r0[x0] + (r0[x1] - r0[x0]) * lx;
        const T bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
        dst[oy * out_w + ox] = top + (bot - top) * ly;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, std::int64_t in_h, std::int64_t in_w) {
  require_nchw(grad_out, "upsample_bilinear_backward");
  const std::int64_t out_h = grad_out.h(), out_w = grad_out.w();
  const AxisTable ty = axis_table(in_h, out_h);
  const AxisTable tx = axis_table(in_w, out_w);
  Tensor<T> g({grad_out.n(), grad_out.c(), in_h, in_w});
  for (std::int64_t nc = 0; nc < grad_out.n() * grad_out.c(); ++nc) {
    const T* src = grad_out.data() + nc * out_h * out_w;
    T* dst = g.data() + nc * in_h * in_w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto sy = static_cast<std::size_t>(oy);
      const T ly = static_cast<T>(ty.l1[sy]);
      T* r0 = dst + ty.i0[sy] * in_w;
      T* r1 = dst + ty.i1[sy] * in_w;
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto sx = static_cast<std::size_t>(ox);
        const T lx = static_cast<T>(tx.l1[sx]);
        const T v = src[oy * out_w + ox];
        const auto x0 = tx.i0[sx], x1 = tx.i1[sx];
        r0[x0] += v * (1 - ly) * (1 - lx);
        r0[x1] += v * (1 - ly) * lx;
        r1[x0] += v * ly * (1 - lx);
        r1[x1] += v * ly * lx;
      }
    }
  }
  return g;
}

#define IMC_INSTANTIATE(T)                                                                                         \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvParams<T>&);                                               \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const ConvParams<T>&, const Tensor<T>&, bool);           \
  template T bilinear_sample(const Tensor<T>&, std::int64_t, T, T);                                                \
  template SampleGrads<T> bilinear_sample_backward(const Tensor<T>&, std::int64_t, T, T, T, Tensor<T>&);           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> transpose(const Tensor<T>&);                                                                  \
  template MatmulGrads<T> matmul_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> softmax_columns(const Tensor<T>&);                                                            \
  template Tensor<T> softmax_columns_backward(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                    \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> relu(const Tensor<T>&);                                                                       \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> broadcast_mul_channel(const Tensor<T>&, const Tensor<T>&);                                    \
  template BroadcastGrads<T> broadcast_mul_channel_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> broadcast_mul_spatial(const Tensor<T>&, const Tensor<T>&);                                    \
  template BroadcastGrads<T> broadcast_mul_spatial_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> sum_channels(const Tensor<T>&);                                                               \
  template Tensor<T> sum_channels_backward(const Tensor<T>&, std::int64_t);                                        \
  template Tensor<T> concat_channels(const std::vector<const Tensor<T>*>&);                                        \
  template std::vector<Tensor<T>> split_channels(const Tensor<T>&, const std::vector<std::int64_t>&);              \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                            \
  template Tensor<T> global_avg_pool_backward(const Tensor<T>&, const Shape&);                                     \
  template Tensor<T> max_pool2(const Tensor<T>&);                                                                  \
  template Tensor<T> max_pool2_backward(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> avg_pool2(const Tensor<T>&);                                                                  \
  template Tensor<T> avg_pool2_backward(const Tensor<T>&);                                                         \
  template Tensor<T> upsample_bilinear(const Tensor<T>&, std::int64_t, std::int64_t);                              \
  template Tensor<T> upsample_bilinear_backward(const Tensor<T>&, std::int64_t, std::int64_t);

IMC_INSTANTIATE(float)
IMC_INSTANTIATE(double)
#undef IMC_INSTANTIATE

}  // namespace imc
