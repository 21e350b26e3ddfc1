#include "imc/encoder.hpp"

namespace imc {

void EncoderConfig::validate() const {
  if (channels.size() != kPyramidLevels) {
    throw ConfigError("encoder needs exactly 4 channel counts, got " + std::to_string(channels.size()));
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) throw ConfigError("encoder channel counts must be positive");
    if (i > 0 && channels[i] < channels[i - 1]) throw ConfigError("encoder channel counts must be non-decreasing");
  }
  if (input_size < 32 || input_size % 32 != 0) {
    throw ConfigError("input size must be a positive multiple of 32, got " + std::to_string(input_size));
  }
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& config) : config_(config) {
  config_.validate();
  stem_ = Conv2d<T>(3, config_.channels[0], 3, 2, 1);
  std::int64_t in = config_.channels[0];
  for (int s = 0; s < kPyramidLevels; ++s) {
    const std::int64_t out = config_.channels[static_cast<std::size_t>(s)];
    down_[static_cast<std::size_t>(s)] = Conv2d<T>(in, out, 3, 2, 1);
    refine_[static_cast<std::size_t>(s)] = Conv2d<T>(out, out, 3, 1, 1);
    in = out;
  }
}

template <typename T>
FramePyramid<T> Encoder<T>::encode(const Tensor<T>& frame, Cache* cache) const {
  require_nchw(frame, "encode");
  if (frame.c() != 3) throw ShapeError("encode: expected an RGB frame, got " + shape_str(frame.shape()));
  if (frame.h() % 32 != 0 || frame.w() % 32 != 0) {
    throw ShapeError("encode: frame dims must be divisible by 32, got " + shape_str(frame.shape()));
  }
  FramePyramid<T> pyr;
  Tensor<T> stem_pre = stem_.forward(frame);
  Tensor<T> x = relu(stem_pre);
  for (std::size_t s = 0; s < kPyramidLevels; ++s) {
    Tensor<T> pa = down_[s].forward(x);
    Tensor<T> aa = relu(pa);
    Tensor<T> pb = refine_[s].forward(aa);
    Tensor<T> out = relu(pb);
    if (cache) {
      cache->stage_in[s] = std::move(x);
      cache->pre_a[s] = std::move(pa);
      cache->act_a[s] = std::move(aa);
      cache->pre_b[s] = std::move(pb);
    }
    pyr.levels[s] = out;
    x = std::move(out);
  }
  if (cache) {
    cache->input = frame;
    cache->stem_pre = std::move(stem_pre);
  }
  return pyr;
}

template <typename T>
Tensor<T> Encoder<T>::backward(const Cache& cache, const std::array<Tensor<T>, kPyramidLevels>& grad_levels,
                               bool need_input_grad) {
  Tensor<T> g;  // gradient flowing into the current stage output
  for (int si = kPyramidLevels - 1; si >= 0; --si) {
    const auto s = static_cast<std::size_t>(si);
    if (!grad_levels[s].empty()) {
      if (g.empty()) {
        g = grad_levels[s];
      } else {
        g += grad_levels[s];
      }
    }
    if (g.empty()) continue;
    Tensor<T> gpb = relu_backward(cache.pre_b[s], g);
    Tensor<T> gaa = refine_[s].backward(cache.act_a[s], gpb);
    Tensor<T> gpa = relu_backward(cache.pre_a[s], gaa);
    g = down_[s].backward(cache.stage_in[s], gpa);
  }
  if (g.empty()) return {};
  return stem_.backward(cache.input, relu_backward(cache.stem_pre, g), need_input_grad);
}

template <typename T>
void Encoder<T>::init(Rng& rng) {
  stem_.init_kaiming(rng);
  for (std::size_t s = 0; s < kPyramidLevels; ++s) {
    down_[s].init_kaiming(rng);
    refine_[s].init_kaiming(rng);
  }
}

template <typename T>
void Encoder<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  stem_.visit(prefix + ".stem", f);
  for (std::size_t s = 0; s < kPyramidLevels; ++s) {
    const std::string stage = prefix + ".stage" + std::to_string(s + 2);
    down_[s].visit(stage + ".down", f);
    refine_[s].visit(stage + ".refine", f);
  }
}

template <typename T>
std::array<std::int64_t, kPyramidLevels> Encoder<T>::receptive_fields() const {
  // rf grows by (k - 1) * jump per conv; jump multiplies by the stride.
  std::int64_t rf = 1, jump = 1;
  auto apply = [&](const Conv2d<T>& c) {
    rf += (c.params().kernel() - 1) * jump;
    jump *= c.params().stride;
  };
  apply(stem_);
  std::array<std::int64_t, kPyramidLevels> out{};
  for (std::size_t s = 0; s < kPyramidLevels; ++s) {
    apply(down_[s]);
    apply(refine_[s]);
    out[s] = rf;
  }
  return out;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace imc
