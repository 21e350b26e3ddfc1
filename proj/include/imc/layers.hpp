#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "imc/ops.hpp"

namespace imc {

/// Visits (name, value, grad) for every trainable tensor of a module.
template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& value, Tensor<T>& grad)>;

/// Seeded generator. Distributions are derived from raw 64-bit draws so the
/// sequence does not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (auto& v : t.values()) v = static_cast<T>(uniform(lo, hi));
  }

 private:
  std::mt19937_64 engine_;
};

/// 2-D convolution layer: parameters plus accumulated gradients.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride = 1, int padding = -1,
         bool bias = true);

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, p_); }
  /// Accumulates parameter gradients and returns d(loss)/dx.
  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& grad_out, bool need_input_grad = true);

  /// Kaiming-uniform fan-in weights, zero bias.
  void init_kaiming(Rng& rng);
  void init_zero();
  void visit(const std::string& prefix, const ParamVisitor<T>& f);

  ConvParams<T>& params() { return p_; }
  const ConvParams<T>& params() const { return p_; }
  std::int64_t in_channels() const { return p_.in_channels(); }
  std::int64_t out_channels() const { return p_.out_channels(); }

 private:
  ConvParams<T> p_;
  Tensor<T> grad_w_;
  Tensor<T> grad_b_;
};

/// y = shortcut(x) + conv2(relu(conv1(x))), 3x3 convs. The shortcut is the
/// identity, or a 1x1 projection when the channel count changes.
template <typename T>
class ResidualBlock {
 public:
  struct Cache {
    Tensor<T> x;
    Tensor<T> h1;  // conv1 output before relu
    Tensor<T> a1;
  };

  ResidualBlock() = default;
  ResidualBlock(std::int64_t in_channels, std::int64_t out_channels);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& grad_out);

  void init_kaiming(Rng& rng);
  void init_zero();
  void visit(const std::string& prefix, const ParamVisitor<T>& f);

  Conv2d<T>& conv1() { return conv1_; }
  Conv2d<T>& conv2() { return conv2_; }

 private:
  Conv2d<T> conv1_;
  Conv2d<T> conv2_;
  Conv2d<T> proj_;
  bool has_proj_ = false;
};

/// conv -> relu -> conv, used by several small heads.
template <typename T>
class ConvReluConv {
 public:
  struct Cache {
    Tensor<T> x;
    Tensor<T> h1;
    Tensor<T> a1;
  };

  ConvReluConv() = default;
  ConvReluConv(std::int64_t in_channels, std::int64_t mid_channels, std::int64_t out_channels, int kernel = 3);

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& grad_out, bool need_input_grad = true);

  void init_kaiming(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);

  Conv2d<T>& first() { return c1_; }
  Conv2d<T>& second() { return c2_; }

 private:
  Conv2d<T> c1_;
  Conv2d<T> c2_;
};

/// Copies parameter values between two identically structured modules,
/// converting precision.
template <typename Dst, typename Src, typename ModuleDst, typename ModuleSrc>
void copy_params(ModuleDst& dst, ModuleSrc& src) {
  std::vector<Tensor<Src>*> values;
  src.visit("", [&](const std::string&, Tensor<Src>& v, Tensor<Src>&) { values.push_back(&v); });
  std::size_t i = 0;
  dst.visit("", [&](const std::string& name, Tensor<Dst>& v, Tensor<Dst>&) {
    if (i >= values.size() || values[i]->shape() != v.shape()) {
      throw ShapeError("copy_params: structure mismatch at " + name);
    }
    v = values[i++]->template cast<Dst>();
  });
}

}  // namespace imc
