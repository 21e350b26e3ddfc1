#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "imc/deform_conv.hpp"
#include "imc/gradcheck.hpp"
#include "imc/ops.hpp"

using namespace imc;
using imc::test::random_tensor;

namespace {

template <typename T>
Tensor<T> naive_conv(const Tensor<T>& x, const ConvParams<T>& p) {
  const std::int64_t k = p.kernel();
  const std::int64_t oh = conv_out_size(x.h(), k, p.stride, p.padding);
  const std::int64_t ow = conv_out_size(x.w(), k, p.stride, p.padding);
  Tensor<T> out({x.n(), p.out_channels(), oh, ow});
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t o = 0; o < p.out_channels(); ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xo = 0; xo < ow; ++xo) {
          T acc = p.bias.empty() ? T(0) : p.bias[o];
          for (std::int64_t c = 0; c < x.c(); ++c)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t iy = y * p.stride - p.padding + ky;
                const std::int64_t ix = xo * p.stride - p.padding + kx;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += p.weights.at(o, c, ky, kx) * x.at(n, c, iy, ix);
              }
          out.at(n, o, y, xo) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  TensorF t({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.numel() == shape_numel(t.shape()));
  CHECK_THROWS_AS(TensorF({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS_AS(t.reshaped({7, 7}), ShapeError);
  Param<float> p({3, 3});
  CHECK(p.grad.shape() == p.value.shape());
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(11);
  for (int trial = 0; trial < 24; ++trial) {
    const int k = trial % 3 == 0 ? 1 : 3;
    ConvParams<double> p;
    p.stride = 1 + trial % 2;
    p.padding = k == 1 ? 0 : trial % 3 == 1 ? 1 : 0;
    const std::int64_t cin = 1 + rng.below(4), cout = 1 + rng.below(5);
    p.weights = random_tensor<double>({cout, cin, k, k}, rng);
    if (trial % 4 != 3) p.bias = random_tensor<double>({cout}, rng);
    const auto x = random_tensor<double>({1 + static_cast<std::int64_t>(trial % 2), cin, 5 + trial % 4, 6}, rng);
    CHECK(max_abs_diff(conv2d(x, p), naive_conv(x, p)) < 1e-6);
  }
}

TEST_CASE("conv2d rejects mismatched channels") {
  ConvParams<float> p;
  p.weights = TensorF({2, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(TensorF({1, 4, 8, 8}), p), ShapeError);
}

TEST_CASE("conv2d_backward: zero and single-pixel upstream gradients") {
  Rng rng(3);
  ConvParams<double> p;
  p.weights = random_tensor<double>({2, 3, 3, 3}, rng);
  p.bias = random_tensor<double>({2}, rng);
  p.padding = 1;
  const auto x = random_tensor<double>({1, 3, 6, 6}, rng);
  const auto out = conv2d(x, p);

  const auto zero = conv2d_backward(x, p, TensorD(out.shape()));
  CHECK(sum(zero.grad_weights) == 0.0);
  CHECK(sum(zero.grad_bias) == 0.0);
  CHECK(sum(zero.grad_input) == 0.0);

  TensorD g(out.shape());
  g.at(0, 1, 2, 3) = 1.0;
  const auto one = conv2d_backward(x, p, g);
  for (std::int64_t c = 0; c < 3; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        CHECK(one.grad_weights.at(1, c, ky, kx) == doctest::Approx(x.at(0, c, 2 - 1 + ky, 3 - 1 + kx)));
        CHECK(one.grad_weights.at(0, c, ky, kx) == 0.0);
      }
  CHECK_THROWS_AS(conv2d_backward(x, p, TensorD({1, 2, 5, 5})), ShapeError);
}

TEST_CASE("conv2d backward agrees with finite differences in 32-bit") {
  Rng rng(21);
  ConvParams<float> p;
  p.weights = random_tensor<float>({3, 2, 3, 3}, rng);
  p.bias = random_tensor<float>({3}, rng);
  p.padding = 1;
  auto x = random_tensor<float>({1, 2, 5, 5}, rng);
  const auto r = random_tensor<float>({1, 3, 5, 5}, rng);
  auto objective = [&] {
    double s = 0;
    const auto y = conv2d(x, p);
    for (std::int64_t i = 0; i < y.numel(); ++i) s += static_cast<double>(y[i]) * r[i];
    return s;
  };
  const auto g = conv2d_backward(x, p, r);
  const float h = 1e-2f;
  double worst = 0;
  auto probe = [&](float& v, double analytic) {
    const float keep = v;
    v = keep + h;
    const double fp = objective();
    v = keep - h;
    const double fm = objective();
    v = keep;
    worst = std::max(worst, relative_error(analytic, (fp - fm) / (2.0 * h), 1e-3));
  };
  for (std::int64_t i = 0; i < x.numel(); i += 3) probe(x[i], g.grad_input[i]);
  for (std::int64_t i = 0; i < p.weights.numel(); i += 5) probe(p.weights[i], g.grad_weights[i]);
  for (std::int64_t i = 0; i < 3; ++i) probe(p.bias[i], g.grad_bias[i]);
  CHECK(worst < 1e-3);
}

TEST_CASE("bilinear_sample values") {
  TensorD f({1, 1, 2, 3}, {2.0, 4.0, 6.0, 1.0, 3.0, 5.0});
  CHECK(bilinear_sample(f, 0, 1.0, 1.0) == 3.0);
  CHECK(bilinear_sample(f, 0, 0.5, 0.0) == doctest::Approx(3.0));
  CHECK(bilinear_sample(f, 0, -2.0, 0.0) == 0.0);
  CHECK(bilinear_sample(f, 0, 1.0, 5.0) == 0.0);
  // half a pixel past the edge blends with zero padding
  CHECK(bilinear_sample(f, 0, -0.5, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("bilinear_sample is Lipschitz in x") {
  Rng rng(5);
  const auto f = random_tensor<double>({1, 1, 6, 7}, rng);
  double lo = 0, hi = 0;
  for (double v : f.values()) {
    lo = std::min(lo, v);  // zero padding is part of the range
    hi = std::max(hi, v);
  }
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(-1.5, 7.5), y = rng.uniform(-1.5, 6.5), d = rng.uniform(0.0, 1.0);
    const double a = bilinear_sample(f, 0, x, y), b = bilinear_sample(f, 0, x + d, y);
    CHECK(std::abs(a - b) <= d * (hi - lo) + 1e-12);
  }
}

TEST_CASE("softmax_columns normalizes columns and ignores column shifts") {
  Rng rng(2);
  const auto m = random_tensor<double>({5, 4}, rng, -3, 3);
  const auto s = softmax_columns(m);
  for (std::int64_t j = 0; j < 4; ++j) {
    double col = 0;
    for (std::int64_t i = 0; i < 5; ++i) col += s[i * 4 + j];
    CHECK(std::abs(col - 1.0) < 1e-6);
  }
  auto shifted = m;
  for (std::int64_t i = 0; i < 5; ++i) shifted[i * 4 + 2] += 7.5;
  CHECK(max_abs_diff(softmax_columns(shifted), s) < 1e-6);
}

TEST_CASE("pooling and upsampling") {
  TensorF q({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(max_pool2(q)[0] == 4.0f);
  CHECK(avg_pool2(q)[0] == 2.5f);
  CHECK(global_avg_pool(q)[0] == 2.5f);
  TensorF c({1, 2, 3, 5}, 0.25f);
  const auto up = upsample2(c);
  CHECK(up.shape() == Shape{1, 2, 6, 10});
  for (float v : up.values()) CHECK(v == doctest::Approx(0.25f));
  CHECK_THROWS_AS(max_pool2(TensorF({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("forward ops keep finite inputs finite") {
  Rng rng(8);
  const auto x = random_tensor<float>({1, 2, 4, 4}, rng, -40, 40);
  CHECK(sigmoid(x).all_finite());
  CHECK(softmax_columns(x.reshaped({8, 4})).all_finite());
  CHECK(upsample_bilinear(x, 7, 9).all_finite());
}

TEST_CASE("deformable_conv with zero offsets equals conv2d") {
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t cin = 1 + rng.below(6), cout = 1 + rng.below(6);
    const std::int64_t h = 3 + rng.below(10), w = 3 + rng.below(10);
    const auto x = random_tensor<double>({1, cin, h, w}, rng);
    ConvParams<double> p;
    p.weights = random_tensor<double>({cout, cin, 3, 3}, rng);
    p.padding = 1;
    const auto d = deformable_conv(x, OffsetField<double>::zeros(h, w), p.weights);
    worst = std::max(worst, max_abs_diff(d, conv2d(x, p)));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("deformable_conv with a unit x offset translates the input") {
  Rng rng(4);
  const auto x = random_tensor<double>({1, 1, 5, 6}, rng);
  TensorD w({1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  auto field = OffsetField<double>::zeros(5, 6);
  for (int k = 0; k < kDeformTaps; ++k) {
    for (std::int64_t i = 0; i < 30; ++i) field.offsets[2 * k * 30 + i] = 1.0;
  }
  const auto out = deformable_conv(x, field, w);
  for (std::int64_t y = 0; y < 5; ++y)
    for (std::int64_t xo = 0; xo < 6; ++xo) {
      const double expect = xo + 1 < 6 ? x.at(0, 0, y, xo + 1) : 0.0;
      CHECK(out.at(0, 0, y, xo) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("gradcheck reports") {
  GradCheckOptions opts;
  opts.seeds = 3;
  const auto r = run_gradcheck(find_gradcase("sigmoid"), opts);
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-6);
  CHECK(r.coords > 0);
  CHECK_THROWS_AS(find_gradcase("no_such_op"), ConfigError);
  CHECK(relative_error(1.0, 1.0, 1e-8) == 0.0);
  CHECK(relative_error(0.0, 0.0, 0.0) == 0.0);
  CHECK(relative_error(2.0, 1.0, 1e-8) == doctest::Approx(0.5));
}

TEST_CASE("gradcheck registry covers the required operations") {
  for (const char* name : {"conv2d", "deformable_conv", "bilinear_sample", "softmax_columns", "sigmoid", "max_pool2",
                           "avg_pool2", "upsample_bilinear", "bce_loss", "ssim_loss", "iou_loss", "acm", "apm", "mcm"}) {
    CHECK_NOTHROW(find_gradcase(name));
  }
}
