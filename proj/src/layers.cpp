#include "imc/layers.hpp"

#include <cmath>
#include <numbers>

namespace imc {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
Conv2d<T>::Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride, int padding,
                  bool bias) {
  p_.weights = Tensor<T>({out_channels, in_channels, kernel, kernel});
  if (bias) p_.bias = Tensor<T>({out_channels});
  p_.stride = stride;
  p_.padding = padding < 0 ? kernel / 2 : padding;
  grad_w_ = Tensor<T>(p_.weights.shape());
  if (bias) grad_b_ = Tensor<T>(p_.bias.shape());
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& x, const Tensor<T>& grad_out, bool need_input_grad) {
  auto g = conv2d_backward(x, p_, grad_out, need_input_grad);
  grad_w_ += g.grad_weights;
  if (!p_.bias.empty()) grad_b_ += g.grad_bias;
  return std::move(g.grad_input);
}

template <typename T>
void Conv2d<T>::init_kaiming(Rng& rng) {
  const double fan_in = static_cast<double>(p_.weights.dim(1) * p_.weights.dim(2) * p_.weights.dim(3));
  const double bound = std::sqrt(6.0 / fan_in);
  rng.fill_uniform(p_.weights, -bound, bound);
  p_.bias.fill(T(0));
}

template <typename T>
void Conv2d<T>::init_zero() {
  p_.weights.fill(T(0));
  p_.bias.fill(T(0));
}

template <typename T>
void Conv2d<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  f(prefix + ".weight", p_.weights, grad_w_);
  if (!p_.bias.empty()) f(prefix + ".bias", p_.bias, grad_b_);
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::int64_t in_channels, std::int64_t out_channels)
    : conv1_(in_channels, out_channels, 3), conv2_(out_channels, out_channels, 3) {
  if (in_channels != out_channels) {
    proj_ = Conv2d<T>(in_channels, out_channels, 1);
    has_proj_ = true;
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, Cache* cache) const {
  Tensor<T> h1 = conv1_.forward(x);
  Tensor<T> a1 = relu(h1);
  Tensor<T> y = conv2_.forward(a1);
  if (has_proj_) {
    y += proj_.forward(x);
  } else {
    y += x;
  }
  if (cache) {
    cache->x = x;
    cache->h1 = std::move(h1);
    cache->a1 = std::move(a1);
  }
  return y;
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Cache& cache, const Tensor<T>& grad_out) {
  Tensor<T> ga1 = conv2_.backward(cache.a1, grad_out);
  Tensor<T> gx = conv1_.backward(cache.x, relu_backward(cache.h1, ga1));
  if (has_proj_) {
    gx += proj_.backward(cache.x, grad_out);
  } else {
    gx += grad_out;
  }
  return gx;
}

template <typename T>
void ResidualBlock<T>::init_kaiming(Rng& rng) {
  conv1_.init_kaiming(rng);
  conv2_.init_kaiming(rng);
  if (has_proj_) proj_.init_kaiming(rng);
}

template <typename T>
void ResidualBlock<T>::init_zero() {
  conv1_.init_zero();
  conv2_.init_zero();
  if (has_proj_) proj_.init_zero();
}

template <typename T>
void ResidualBlock<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  conv1_.visit(prefix + ".conv1", f);
  conv2_.visit(prefix + ".conv2", f);
  if (has_proj_) proj_.visit(prefix + ".proj", f);
}

template <typename T>
ConvReluConv<T>::ConvReluConv(std::int64_t in_channels, std::int64_t mid_channels, std::int64_t out_channels,
                              int kernel)
    : c1_(in_channels, mid_channels, kernel), c2_(mid_channels, out_channels, kernel) {}

template <typename T>
Tensor<T> ConvReluConv<T>::forward(const Tensor<T>& x, Cache* cache) const {
  Tensor<T> h1 = c1_.forward(x);
  Tensor<T> a1 = relu(h1);
  Tensor<T> y = c2_.forward(a1);
  if (cache) {
    cache->x = x;
    cache->h1 = std::move(h1);
    cache->a1 = std::move(a1);
  }
  return y;
}

template <typename T>
Tensor<T> ConvReluConv<T>::backward(const Cache& cache, const Tensor<T>& grad_out, bool need_input_grad) {
  Tensor<T> ga1 = c2_.backward(cache.a1, grad_out);
  return c1_.backward(cache.x, relu_backward(cache.h1, ga1), need_input_grad);
}

template <typename T>
void ConvReluConv<T>::init_kaiming(Rng& rng) {
  c1_.init_kaiming(rng);
  c2_.init_kaiming(rng);
}

template <typename T>
void ConvReluConv<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  c1_.visit(prefix + ".0", f);
  c2_.visit(prefix + ".1", f);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class ConvReluConv<float>;
template class ConvReluConv<double>;

}  // namespace imc
