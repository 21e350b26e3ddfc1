#include "imc/apm.hpp"

namespace imc {

namespace {

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  if (src.empty()) return;
  if (dst.empty()) {
    dst = src;
  } else {
    dst += src;
  }
}

}  // namespace

template <typename T>
Apm<T>::Apm(const ApmConfig& config) : config_(config) {
  if (config_.level_channels[3] != config_.width) {
    throw ConfigError("APM width " + std::to_string(config_.width) + " must equal level-5 channels " +
                      std::to_string(config_.level_channels[3]));
  }
  const std::int64_t c = config_.width;
  head_mask_ = ConvReluConv<T>(c, config_.mask_hidden(), 1, 3);
  for (int l = 4; l >= 2; --l) {
    Level& lv = level(l);
    lv.tau_head = Conv2d<T>(config_.level_channels[static_cast<std::size_t>(l - 2)], c, 3);
    lv.tau_res = ResidualBlock<T>(c, c);
    lv.xi1 = ResidualBlock<T>(c, c);
    lv.xi2 = ConvReluConv<T>(c, config_.mask_hidden(), 1, 3);
  }
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Apm<T>::head(const Tensor<T>& v5, const Tensor<T>& z, HeadCache* cache) const {
  require_same_shape(v5, z, "apm head");
  Tensor<T> gap = global_avg_pool(z);
  Tensor<T> vz = mul(v5, z);
  Tensor<T> p5 = broadcast_mul_channel(vz, gap);
  typename ConvReluConv<T>::Cache mc;
  Tensor<T> mask = sigmoid(head_mask_.forward(p5, cache ? &mc : nullptr));
  if (cache) {
    cache->v5 = v5;
    cache->z = z;
    cache->gap_z = std::move(gap);
    cache->vz = std::move(vz);
    cache->p5 = p5;
    cache->mask_cache = std::move(mc);
    cache->mask = mask;
  }
  return {std::move(p5), std::move(mask)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Apm<T>::step(int l, const Tensor<T>& v, const Tensor<T>& p_next,
                                             const Tensor<T>& mask_next, StepCache* cache) const {
  if (l < 2 || l > 4) throw ShapeError("apm step: level must be 2, 3 or 4");
  require_nchw(v, "apm step");
  require_nchw(p_next, "apm step");
  if (p_next.h() * 2 != v.h() || p_next.w() * 2 != v.w() || mask_next.h() != p_next.h() ||
      mask_next.w() != p_next.w() || mask_next.c() != 1) {
    throw ShapeError("apm step: level " + std::to_string(l) + " geometry mismatch V " + shape_str(v.shape()) +
                     ", P_next " + shape_str(p_next.shape()) + ", M_next " + shape_str(mask_next.shape()));
  }
  const Level& lv = levels_.at(static_cast<std::size_t>(4 - l));
  Tensor<T> up_mask = upsample2(mask_next);
  Tensor<T> gated = broadcast_mul_spatial(v, up_mask);
  Tensor<T> th = lv.tau_head.forward(gated);
  typename ResidualBlock<T>::Cache tc, xc;
  Tensor<T> lateral = lv.tau_res.forward(th, cache ? &tc : nullptr);
  Tensor<T> merged = upsample2(p_next);
  merged += lateral;
  Tensor<T> p = lv.xi1.forward(merged, cache ? &xc : nullptr);
  typename ConvReluConv<T>::Cache mc;
  Tensor<T> mask = sigmoid(lv.xi2.forward(p, cache ? &mc : nullptr));
  if (cache) {
    cache->v = v;
    cache->up_mask = std::move(up_mask);
    cache->gated = std::move(gated);
    cache->tau_head = std::move(th);
    cache->tau_cache = std::move(tc);
    cache->xi1_cache = std::move(xc);
    cache->p = p;
    cache->mask_cache = std::move(mc);
    cache->mask = mask;
    cache->next_h = p_next.h();
    cache->next_w = p_next.w();
  }
  return {std::move(p), std::move(mask)};
}

template <typename T>
DecoderState<T> Apm<T>::run(const FramePyramid<T>& pyramid, const Tensor<T>& z, Cache* cache) const {
  DecoderState<T> st;
  auto [p5, m5] = head(pyramid.level(5), z, cache ? &cache->head : nullptr);
  st.features[3] = std::move(p5);
  st.side_masks[3] = std::move(m5);
  for (int l = 4; l >= 2; --l) {
    const auto i = static_cast<std::size_t>(l - 2);
    auto [p, m] = step(l, pyramid.level(l), st.features[i + 1], st.side_masks[i + 1],
                       cache ? &cache->steps[static_cast<std::size_t>(4 - l)] : nullptr);
    st.features[i] = std::move(p);
    st.side_masks[i] = std::move(m);
  }
  return st;
}

template <typename T>
typename Apm<T>::Grads Apm<T>::backward(const Cache& cache, const std::array<Tensor<T>, kPyramidLevels>& grad_masks,
                                        const Tensor<T>& grad_p2) {
  Grads out;
  std::array<Tensor<T>, kPyramidLevels> gp;  // dL/dP^l
  std::array<Tensor<T>, kPyramidLevels> gm;  // dL/dM^l
  for (std::size_t i = 0; i < kPyramidLevels; ++i) gm[i] = grad_masks[i];
  gp[0] = grad_p2;

  for (int l = 2; l <= 4; ++l) {
    const auto i = static_cast<std::size_t>(l - 2);
    const StepCache& sc = cache.steps[static_cast<std::size_t>(4 - l)];
    Level& lv = level(l);
    if (!gm[i].empty()) {
      accumulate(gp[i], lv.xi2.backward(sc.mask_cache, sigmoid_backward(sc.mask, gm[i])));
    }
    if (gp[i].empty()) gp[i] = Tensor<T>(sc.p.shape());
    const Tensor<T> g_merged = lv.xi1.backward(sc.xi1_cache, gp[i]);
    accumulate(gp[i + 1], upsample_bilinear_backward(g_merged, sc.next_h, sc.next_w));
    const Tensor<T> g_th = lv.tau_res.backward(sc.tau_cache, g_merged);
    const Tensor<T> g_gated = lv.tau_head.backward(sc.gated, g_th);
    auto bg = broadcast_mul_spatial_backward(sc.v, sc.up_mask, g_gated);
    out.grad_levels[i] = std::move(bg.grad_x);
    accumulate(gm[i + 1], upsample_bilinear_backward(bg.grad_s, sc.next_h, sc.next_w));
  }

  const HeadCache& hc = cache.head;
  if (!gm[3].empty()) {
    accumulate(gp[3], head_mask_.backward(hc.mask_cache, sigmoid_backward(hc.mask, gm[3])));
  }
  if (gp[3].empty()) gp[3] = Tensor<T>(hc.p5.shape());
  auto bg = broadcast_mul_channel_backward(hc.vz, hc.gap_z, gp[3]);
  out.grad_levels[3] = mul(bg.grad_x, hc.z);
  out.grad_z = mul(bg.grad_x, hc.v5);
  out.grad_z += global_avg_pool_backward(bg.grad_s, hc.z.shape());
  return out;
}

template <typename T>
void Apm<T>::init(Rng& rng) {
  head_mask_.init_kaiming(rng);
  for (auto& lv : levels_) {
    lv.tau_head.init_kaiming(rng);
    lv.tau_res.init_kaiming(rng);
    lv.xi1.init_kaiming(rng);
    lv.xi2.init_kaiming(rng);
  }
}

template <typename T>
void Apm<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  head_mask_.visit(prefix + ".head.mask", f);
  for (int l = 4; l >= 2; --l) {
    Level& lv = level(l);
    const std::string p = prefix + ".level" + std::to_string(l);
    lv.tau_head.visit(p + ".tau_head", f);
    lv.tau_res.visit(p + ".tau_res", f);
    lv.xi1.visit(p + ".refine", f);
    lv.xi2.visit(p + ".mask", f);
  }
}

template class Apm<float>;
template class Apm<double>;

}  // namespace imc
