#include "imc/gradcheck.hpp"

#include <chrono>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "imc/acm.hpp"
#include "imc/apm.hpp"
#include "imc/deform_conv.hpp"
#include "imc/losses.hpp"
#include "imc/mcm.hpp"
#include "imc/model.hpp"

namespace imc {

namespace {

using Vars = std::vector<TensorD>;

TensorD random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(shape);
  rng.fill_uniform(t, lo, hi);
  return t;
}

TensorD binary_mask(const Shape& shape, Rng& rng) {
  TensorD t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// sum(r * f(vars)) with r drawn once for the output shape of f.
GradProblem projected(std::vector<std::string> names, Vars vars, Rng& rng,
                      std::function<TensorD(const Vars&)> forward,
                      std::function<Vars(const Vars&, const TensorD& r)> backward) {
  const TensorD out = forward(vars);
  auto r = std::make_shared<TensorD>(random_tensor(out.shape(), rng));
  GradProblem p;
  p.names = std::move(names);
  p.vars = std::move(vars);
  p.objective = [forward, r](const Vars& v) { return dot(forward(v), *r); };
  p.gradient = [backward, r](const Vars& v) { return backward(v, *r); };
  return p;
}

// Module composites: the variables are the given inputs followed by every
// parameter of the module, in visit order.
template <typename M>
void load_params(M& m, const Vars& vars, std::size_t first) {
  std::size_t k = first;
  m.visit("", [&](const std::string&, TensorD& v, TensorD&) { v = vars[k++]; });
}

// Zero-initialized biases on top of dead ReLUs put pre-activations exactly
// on the kink; the composites are checked at generic points instead.
template <typename M>
void append_params(M& m, std::vector<std::string>& names, Vars& vars, Rng& rng) {
  m.visit("", [&](const std::string& name, TensorD& v, TensorD&) {
    if (name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0) rng.fill_uniform(v, -0.2, 0.2);
    names.push_back(name);
    vars.push_back(v);
  });
}

template <typename M>
void append_param_grads(M& m, Vars& grads) {
  m.visit("", [&](const std::string&, TensorD&, TensorD& g) { grads.push_back(g); });
}

template <typename M>
void zero_grads(M& m) {
  m.visit("", [](const std::string&, TensorD&, TensorD& g) { g.fill(0.0); });
}

// Wrapper giving Imcnet the prefix-taking visit signature used above.
struct ModelAdapter {
  Imcnet<double> net;
  void visit(const std::string&, const ParamVisitor<double>& f) { net.visit(f); }
};

ConvParams<double> conv_params(const Vars& v, std::size_t w, std::ptrdiff_t b, int stride, int padding) {
  ConvParams<double> p;
  p.weights = v[w];
  if (b >= 0) p.bias = v[static_cast<std::size_t>(b)];
  p.stride = stride;
  p.padding = padding;
  return p;
}

GradProblem conv2d_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 3, 7, 6}, rng), random_tensor({4, 3, 3, 3}, rng), random_tensor({4}, rng)};
  return projected(
      {"input", "weights", "bias"}, std::move(v), rng,
      [](const Vars& x) { return conv2d(x[0], conv_params(x, 1, 2, 2, 1)); },
      [](const Vars& x, const TensorD& r) {
        auto g = conv2d_backward(x[0], conv_params(x, 1, 2, 2, 1), r);
        return Vars{g.grad_input, g.grad_weights, g.grad_bias};
      });
}

GradProblem conv2d_1x1_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 3, 5, 4}, rng), random_tensor({2, 3, 1, 1}, rng)};
  return projected(
      {"input", "weights"}, std::move(v), rng,
      [](const Vars& x) { return conv2d(x[0], conv_params(x, 1, -1, 1, 0)); },
      [](const Vars& x, const TensorD& r) {
        auto g = conv2d_backward(x[0], conv_params(x, 1, -1, 1, 0), r);
        return Vars{g.grad_input, g.grad_weights};
      });
}

GradProblem deformable_conv_case(std::uint64_t seed) {
  Rng rng(seed);
  // Offsets span whole pixels in both directions so taps land inside, on
  // and beyond the border.
  Vars v{random_tensor({1, 3, 6, 5}, rng), random_tensor({1, 2 * kDeformTaps, 6, 5}, rng, -1.8, 1.8),
         random_tensor({2, 3, 3, 3}, rng)};
  return projected(
      {"input", "offsets", "weights"}, std::move(v), rng,
      [](const Vars& x) { return deformable_conv(x[0], OffsetField<double>(x[1]), x[2]); },
      [](const Vars& x, const TensorD& r) {
        auto g = deformable_conv_backward(x[0], OffsetField<double>(x[1]), x[2], r);
        return Vars{g.grad_input, g.grad_offsets, g.grad_weights};
      });
}

GradProblem bilinear_sample_case(std::uint64_t seed) {
  Rng rng(seed);
  constexpr std::int64_t kPoints = 12, kC = 2, kH = 5, kW = 6;
  Vars v{random_tensor({1, kC, kH, kW}, rng), random_tensor({kPoints}, rng, -0.8, kW - 0.2),
         random_tensor({kPoints}, rng, -0.8, kH - 0.2)};
  return projected(
      {"feature", "x", "y"}, std::move(v), rng,
      [](const Vars& x) {
        TensorD out({kPoints, kC});
        for (std::int64_t m = 0; m < kPoints; ++m) {
          for (std::int64_t c = 0; c < kC; ++c) out[m * kC + c] = bilinear_sample(x[0], c, x[1][m], x[2][m]);
        }
        return out;
      },
      [](const Vars& x, const TensorD& r) {
        Vars g{TensorD(x[0].shape()), TensorD(x[1].shape()), TensorD(x[2].shape())};
        for (std::int64_t m = 0; m < kPoints; ++m) {
          for (std::int64_t c = 0; c < kC; ++c) {
            auto s = bilinear_sample_backward(x[0], c, x[1][m], x[2][m], r[m * kC + c], g[0]);
            g[1][m] += s.grad_x;
            g[2][m] += s.grad_y;
          }
        }
        return g;
      });
}

GradProblem softmax_columns_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({5, 7}, rng, -3, 3)};
  return projected(
      {"matrix"}, std::move(v), rng, [](const Vars& x) { return softmax_columns(x[0]); },
      [](const Vars& x, const TensorD& r) { return Vars{softmax_columns_backward(softmax_columns(x[0]), r)}; });
}

GradProblem matmul_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)};
  return projected(
      {"a", "b"}, std::move(v), rng, [](const Vars& x) { return matmul(x[0], x[1]); },
      [](const Vars& x, const TensorD& r) {
        auto g = matmul_backward(x[0], x[1], r);
        return Vars{g.grad_a, g.grad_b};
      });
}

GradProblem sigmoid_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 2, 3, 4}, rng, -5, 5)};
  return projected(
      {"x"}, std::move(v), rng, [](const Vars& x) { return sigmoid(x[0]); },
      [](const Vars& x, const TensorD& r) { return Vars{sigmoid_backward(sigmoid(x[0]), r)}; });
}

GradProblem relu_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 2, 3, 4}, rng)};
  return projected(
      {"x"}, std::move(v), rng, [](const Vars& x) { return relu(x[0]); },
      [](const Vars& x, const TensorD& r) { return Vars{relu_backward(x[0], r)}; });
}

GradProblem max_pool2_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 2, 6, 4}, rng)};
  return projected(
      {"x"}, std::move(v), rng, [](const Vars& x) { return max_pool2(x[0]); },
      [](const Vars& x, const TensorD& r) { return Vars{max_pool2_backward(x[0], r)}; });
}

GradProblem avg_pool2_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 2, 6, 4}, rng)};
  return projected(
      {"x"}, std::move(v), rng, [](const Vars& x) { return avg_pool2(x[0]); },
      [](const Vars&, const TensorD& r) { return Vars{avg_pool2_backward(r)}; });
}

GradProblem global_avg_pool_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 3, 4, 5}, rng)};
  return projected(
      {"x"}, std::move(v), rng, [](const Vars& x) { return global_avg_pool(x[0]); },
      [](const Vars& x, const TensorD& r) { return Vars{global_avg_pool_backward(r, x[0].shape())}; });
}

GradProblem upsample_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 2, 3, 4}, rng)};
  return projected(
      {"x"}, std::move(v), rng, [](const Vars& x) { return upsample_bilinear(x[0], 7, 9); },
      [](const Vars&, const TensorD& r) { return Vars{upsample_bilinear_backward(r, 3, 4)}; });
}

GradProblem upsample2_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 2, 4, 3}, rng)};
  return projected(
      {"x"}, std::move(v), rng, [](const Vars& x) { return upsample2(x[0]); },
      [](const Vars&, const TensorD& r) { return Vars{upsample_bilinear_backward(r, 4, 3)}; });
}

GradProblem broadcast_case(std::uint64_t seed) {
  Rng rng(seed);
  Vars v{random_tensor({1, 3, 4, 4}, rng), random_tensor({1, 3, 1, 1}, rng), random_tensor({1, 1, 4, 4}, rng)};
  return projected(
      {"x", "channel_scale", "spatial_map"}, std::move(v), rng,
      [](const Vars& x) { return sum_channels(broadcast_mul_spatial(broadcast_mul_channel(x[0], x[1]), x[2])); },
      [](const Vars& x, const TensorD& r) {
        const TensorD a = broadcast_mul_channel(x[0], x[1]);
        auto gs = broadcast_mul_spatial_backward(a, x[2], sum_channels_backward(r, 3));
        auto gc = broadcast_mul_channel_backward(x[0], x[1], gs.grad_x);
        return Vars{gc.grad_x, gc.grad_s, gs.grad_s};
      });
}

template <typename LossFn>
GradProblem loss_case(std::uint64_t seed, std::int64_t size, LossFn loss) {
  Rng rng(seed);
  auto gt = std::make_shared<TensorD>(binary_mask({1, 1, size, size}, rng));
  GradProblem p;
  p.names = {"pred"};
  p.vars = {random_tensor({1, 1, size, size}, rng, 0.05, 0.95)};
  p.objective = [gt, loss](const Vars& x) { return static_cast<double>(loss(x[0], *gt, nullptr)); };
  p.gradient = [gt, loss](const Vars& x) {
    TensorD g;
    loss(x[0], *gt, &g);
    return Vars{g};
  };
  return p;
}

GradProblem total_loss_case(std::uint64_t seed) {
  Rng rng(seed);
  constexpr std::int64_t kSize = 16;
  constexpr int kFrames = 3;
  auto gts = std::make_shared<std::vector<TensorD>>();
  for (int i = 0; i < kFrames; ++i) gts->push_back(binary_mask({1, 1, kSize, kSize}, rng));
  GradProblem p;
  p.names.push_back("final");
  p.vars.push_back(random_tensor({1, 1, kSize, kSize}, rng, 0.05, 0.95));
  for (int i = 0; i < kFrames; ++i) {
    for (int l = 0; l < kPyramidLevels; ++l) {
      const std::int64_t s = kSize / (std::int64_t{1} << (l + 1));
      p.names.push_back("side" + std::to_string(i) + "_level" + std::to_string(l + 2));
      p.vars.push_back(random_tensor({1, 1, s, s}, rng, 0.05, 0.95));
    }
  }
  auto unpack = [](const Vars& x) {
    std::vector<std::array<TensorD, kPyramidLevels>> sides(kFrames);
    for (int i = 0; i < kFrames; ++i) {
      for (int l = 0; l < kPyramidLevels; ++l) {
        sides[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)] =
            x[1 + static_cast<std::size_t>(i * kPyramidLevels + l)];
      }
    }
    return sides;
  };
  auto gt_ptrs = [gts] {
    std::vector<const TensorD*> out;
    for (const auto& g : *gts) out.push_back(&g);
    return out;
  };
  p.objective = [=](const Vars& x) { return total_loss(x[0], (*gts)[kFrames / 2], unpack(x), gt_ptrs()).total; };
  p.gradient = [=](const Vars& x) {
    LossGrads<double> g;
    total_loss(x[0], (*gts)[kFrames / 2], unpack(x), gt_ptrs(), &g);
    Vars out{g.final_mask};
    for (const auto& frame : g.side_masks) {
      for (const auto& t : frame) out.push_back(t);
    }
    return out;
  };
  return p;
}

// Tiny configuration shared by the module composites: 32x32 input, pyramid
// levels 8x8 .. 1x1.
constexpr std::int64_t kTinyInput = 32;
const std::array<std::int64_t, kPyramidLevels> kTinyChannels{2, 2, 3, 4};
constexpr std::int64_t kTinyWidth = 4;
// Smallest input whose level-5 map is wider than one pixel, so the
// co-attention softmax has more than one position to weigh.
constexpr std::int64_t kModelInput = 64;

GradProblem acm_case(std::uint64_t seed) {
  Rng rng(seed);
  auto acm = std::make_shared<Acm<double>>(AcmConfig{3, 4});
  acm->init(rng);
  constexpr int kFrames = 3;
  GradProblem p;
  for (int i = 0; i < kFrames; ++i) {
    p.names.push_back("v5_" + std::to_string(i));
    p.vars.push_back(random_tensor({1, 3, 2, 2}, rng));
  }
  append_params(*acm, p.names, p.vars, rng);
  auto r = std::make_shared<Vars>();
  for (int i = 0; i < kFrames; ++i) r->push_back(random_tensor({1, 3, 2, 2}, rng));
  auto inputs = [](const Vars& x) {
    std::vector<const TensorD*> v;
    for (int i = 0; i < kFrames; ++i) v.push_back(&x[static_cast<std::size_t>(i)]);
    return v;
  };
  p.objective = [=](const Vars& x) {
    load_params(*acm, x, kFrames);
    const auto z = acm->forward(inputs(x));
    double s = 0;
    for (int i = 0; i < kFrames; ++i) s += dot(z[static_cast<std::size_t>(i)], (*r)[static_cast<std::size_t>(i)]);
    return s;
  };
  p.gradient = [=](const Vars& x) {
    load_params(*acm, x, kFrames);
    zero_grads(*acm);
    Acm<double>::Cache cache;
    acm->forward(inputs(x), &cache);
    Vars out = acm->backward(cache, *r);
    append_param_grads(*acm, out);
    return out;
  };
  return p;
}

GradProblem apm_case(std::uint64_t seed) {
  Rng rng(seed);
  ApmConfig cfg;
  cfg.level_channels = kTinyChannels;
  cfg.width = kTinyWidth;
  auto apm = std::make_shared<Apm<double>>(cfg);
  apm->init(rng);
  GradProblem p;
  for (int l = 2; l <= 5; ++l) {
    const std::int64_t s = kTinyInput / kLevelStrides[static_cast<std::size_t>(l - 2)];
    p.names.push_back("v" + std::to_string(l));
    p.vars.push_back(random_tensor({1, kTinyChannels[static_cast<std::size_t>(l - 2)], s, s}, rng));
  }
  p.names.push_back("z");
  p.vars.push_back(random_tensor({1, kTinyWidth, 1, 1}, rng));
  append_params(*apm, p.names, p.vars, rng);
  constexpr std::size_t kInputs = kPyramidLevels + 1;
  auto r_masks = std::make_shared<std::array<TensorD, kPyramidLevels>>();
  for (std::size_t i = 0; i < kPyramidLevels; ++i) (*r_masks)[i] = random_tensor({1, 1, 8 >> i, 8 >> i}, rng);
  auto r_p2 = std::make_shared<TensorD>(random_tensor({1, kTinyWidth, 8, 8}, rng));
  auto pyramid = [](const Vars& x) {
    FramePyramid<double> py;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) py.levels[i] = x[i];
    return py;
  };
  p.objective = [=](const Vars& x) {
    load_params(*apm, x, kInputs);
    const auto st = apm->run(pyramid(x), x[kPyramidLevels]);
    double s = dot(st.p2(), *r_p2);
    for (std::size_t i = 0; i < kPyramidLevels; ++i) s += dot(st.side_masks[i], (*r_masks)[i]);
    return s;
  };
  p.gradient = [=](const Vars& x) {
    load_params(*apm, x, kInputs);
    zero_grads(*apm);
    Apm<double>::Cache cache;
    apm->run(pyramid(x), x[kPyramidLevels], &cache);
    auto g = apm->backward(cache, *r_masks, *r_p2);
    Vars out(g.grad_levels.begin(), g.grad_levels.end());
    out.push_back(g.grad_z);
    append_param_grads(*apm, out);
    return out;
  };
  return p;
}

GradProblem mcm_case(std::uint64_t seed) {
  Rng rng(seed);
  constexpr int kFrames = 3;
  auto mcm = std::make_shared<Mcm<double>>(McmConfig{kTinyWidth, 2, kFrames});
  mcm->init(rng);
  // Zero-initialized offset convs would put every tap on an integer grid
  // point, where bilinear sampling is not differentiable.
  for (int l = 0; l < mcm->config().cascade_depth; ++l) mcm->stage(l).offset.init_kaiming(rng);
  GradProblem p;
  for (int i = 0; i < kFrames; ++i) {
    p.names.push_back("p2_" + std::to_string(i));
    p.vars.push_back(random_tensor({1, kTinyWidth, 8, 8}, rng));
  }
  append_params(*mcm, p.names, p.vars, rng);
  p.coords_per_var = 12;
  auto r = std::make_shared<TensorD>(random_tensor({1, 1, kTinyInput, kTinyInput}, rng));
  auto inputs = [](const Vars& x) {
    std::vector<const TensorD*> v;
    for (int i = 0; i < kFrames; ++i) v.push_back(&x[static_cast<std::size_t>(i)]);
    return v;
  };
  p.objective = [=](const Vars& x) {
    load_params(*mcm, x, kFrames);
    return dot(mcm->forward(inputs(x), kFrames / 2, kTinyInput, kTinyInput), *r);
  };
  p.gradient = [=](const Vars& x) {
    load_params(*mcm, x, kFrames);
    zero_grads(*mcm);
    Mcm<double>::Cache cache;
    mcm->forward(inputs(x), kFrames / 2, kTinyInput, kTinyInput, &cache);
    Vars out = mcm->backward(cache, *r);
    append_param_grads(*mcm, out);
    return out;
  };
  return p;
}

GradProblem encoder_case(std::uint64_t seed) {
  Rng rng(seed);
  EncoderConfig cfg;
  cfg.channels.assign(kTinyChannels.begin(), kTinyChannels.end());
  cfg.input_size = kTinyInput;
  auto enc = std::make_shared<Encoder<double>>(cfg);
  enc->init(rng);
  GradProblem p;
  p.names.push_back("frame");
  p.vars.push_back(random_tensor({1, 3, kTinyInput, kTinyInput}, rng, -0.5, 0.5));
  append_params(*enc, p.names, p.vars, rng);
  p.coords_per_var = 12;
  auto r = std::make_shared<std::array<TensorD, kPyramidLevels>>();
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    const std::int64_t s = kTinyInput / kLevelStrides[i];
    (*r)[i] = random_tensor({1, kTinyChannels[i], s, s}, rng);
  }
  p.objective = [=](const Vars& x) {
    load_params(*enc, x, 1);
    const auto py = enc->encode(x[0]);
    double s = 0;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) s += dot(py.levels[i], (*r)[i]);
    return s;
  };
  p.gradient = [=](const Vars& x) {
    load_params(*enc, x, 1);
    zero_grads(*enc);
    Encoder<double>::Cache cache;
    enc->encode(x[0], &cache);
    Vars out{enc->backward(cache, *r, true)};
    append_param_grads(*enc, out);
    return out;
  };
  return p;
}

}  // namespace

const std::vector<GradCase>& gradcheck_registry() {
  static const std::vector<GradCase> cases = {
      {"conv2d", conv2d_case},
      {"conv2d_1x1", conv2d_1x1_case},
      {"deformable_conv", deformable_conv_case},
      {"bilinear_sample", bilinear_sample_case},
      {"softmax_columns", softmax_columns_case},
      {"matmul", matmul_case},
      {"sigmoid", sigmoid_case},
      {"relu", relu_case},
      {"max_pool2", max_pool2_case},
      {"avg_pool2", avg_pool2_case},
      {"global_avg_pool", global_avg_pool_case},
      {"upsample_bilinear", upsample_case},
      {"upsample2", upsample2_case},
      {"broadcast_mul", broadcast_case},
      {"bce_loss", [](std::uint64_t s) { return loss_case(s, 6, bce_loss<double>); }},
      {"ssim_loss", [](std::uint64_t s) { return loss_case(s, 13, ssim_loss<double>); }},
      {"iou_loss", [](std::uint64_t s) { return loss_case(s, 6, iou_loss<double>); }},
      {"total_loss", total_loss_case},
      {"encoder", encoder_case},
      {"acm", acm_case},
      {"apm", apm_case},
      {"mcm", mcm_case},
  };
  return cases;
}

const GradCase& find_gradcase(const std::string& name) {
  for (const auto& c : gradcheck_registry()) {
    if (c.name == name) return c;
  }
  std::ostringstream known;
  for (const auto& c : gradcheck_registry()) known << " " << c.name;
  throw ConfigError("unknown gradcheck op '" + name + "'; known:" + known.str());
}

GradProblem imcnet_problem(std::uint64_t seed) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.encoder.channels.assign(kTinyChannels.begin(), kTinyChannels.end());
  cfg.encoder.input_size = kModelInput;
  cfg.key_channels = 4;
  cfg.width = kTinyWidth;
  cfg.cascade_depth = 2;
  auto model = std::make_shared<ModelAdapter>(ModelAdapter{Imcnet<double>(cfg)});
  model->net.init(rng);
  for (int l = 0; l < cfg.cascade_depth; ++l) model->net.mcm().stage(l).offset.init_kaiming(rng);
  const int frames = cfg.frames();
  GradProblem p;
  auto gts = std::make_shared<Vars>();
  for (int i = 0; i < frames; ++i) {
    p.names.push_back("frame" + std::to_string(i));
    p.vars.push_back(random_tensor({1, 3, kModelInput, kModelInput}, rng, -0.5, 0.5));
    gts->push_back(binary_mask({1, 1, kModelInput, kModelInput}, rng));
  }
  append_params(*model, p.names, p.vars, rng);
  p.coords_per_var = 6;
  const auto nf = static_cast<std::size_t>(frames);
  auto loss = [gts, nf](const Imcnet<double>::Output& out, LossGrads<double>* grads) {
    std::vector<std::array<TensorD, kPyramidLevels>> sides;
    std::vector<const TensorD*> gt_ptrs;
    for (std::size_t i = 0; i < nf; ++i) {
      sides.push_back(out.decoders[i].side_masks);
      gt_ptrs.push_back(&(*gts)[i]);
    }
    return total_loss(out.mask, (*gts)[nf / 2], sides, gt_ptrs, grads).total;
  };
  p.objective = [=](const Vars& x) {
    load_params(*model, x, nf);
    return loss(model->net.forward(Vars(x.begin(), x.begin() + frames)), nullptr);
  };
  p.gradient = [=](const Vars& x) {
    load_params(*model, x, nf);
    model->net.zero_grad();
    Imcnet<double>::Cache cache;
    const auto out = model->net.forward(Vars(x.begin(), x.begin() + frames), &cache);
    LossGrads<double> g;
    loss(out, &g);
    model->net.backward(cache, g);
    // Input frames are not differentiated by the network backward pass; the
    // frames are checked through the encoder composite instead.
    Vars grads;
    for (std::size_t i = 0; i < nf; ++i) grads.emplace_back();
    append_param_grads(*model, grads);
    return grads;
  };
  return p;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return denom == 0 ? 0.0 : std::abs(analytic - numeric) / denom;
}

GradCheckReport run_gradcheck(const GradCase& c, const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  GradCheckReport rep;
  rep.name = c.name;
  rep.seeds = options.seeds;
  for (int s = 0; s < options.seeds; ++s) {
    const std::uint64_t seed = options.first_seed + static_cast<std::uint64_t>(s);
    GradProblem p = c.build(seed);
    const Vars grads = p.gradient(p.vars);
    if (grads.size() != p.vars.size()) throw ShapeError("gradcheck " + c.name + ": gradient count mismatch");
    Rng pick(seed ^ 0xC0FFEEULL);
    Vars x = p.vars;
    for (std::size_t v = 0; v < x.size(); ++v) {
      if (grads[v].empty()) continue;  // not differentiated by this problem
      require_same_shape(grads[v], x[v], "gradcheck");
      double amax = 0;
      for (std::int64_t i = 0; i < grads[v].numel(); ++i) amax = std::max(amax, std::abs(grads[v][i]));
      const double floor = std::max(1e-8, 1e-3 * amax);
      const auto n = static_cast<std::size_t>(x[v].numel());
      std::vector<std::size_t> coords;
      if (n <= p.coords_per_var) {
        for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
      } else {
        for (std::size_t k = 0; k < p.coords_per_var; ++k) coords.push_back(pick.below(n));
      }
      for (std::size_t i : coords) {
        const double orig = x[v][static_cast<std::int64_t>(i)];
        const double a = grads[v][static_cast<std::int64_t>(i)];
        const double scale = std::max(1.0, std::abs(orig));
        auto central = [&](double h) {
          x[v][static_cast<std::int64_t>(i)] = orig + h;
          const double fp = p.objective(x);
          x[v][static_cast<std::int64_t>(i)] = orig - h;
          const double fm = p.objective(x);
          x[v][static_cast<std::int64_t>(i)] = orig;
          return (fp - fm) / (2 * h);
        };
        double best = relative_error(a, central(options.step * scale), floor);
        for (double m : {1e-1, 1e-2}) {
          if (best < options.tolerance) break;
          best = std::min(best, relative_error(a, central(options.step * m * scale), floor));
          ++rep.refined;
        }
        for (double m : {1.0, 1e-1}) {
          if (best < options.tolerance) break;
          const double h = options.richardson_step * m * scale;
          best = std::min(best, relative_error(a, (4 * central(h / 2) - central(h)) / 3, floor));
          ++rep.refined;
        }
        ++rep.coords;
        if (best > rep.max_rel_error) {
          rep.max_rel_error = best;
          rep.worst = p.names[v] + "[" + std::to_string(i) + "] seed " + std::to_string(seed);
        }
      }
    }
  }
  rep.passed = rep.max_rel_error < options.tolerance;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace imc
