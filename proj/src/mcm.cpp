#include "imc/mcm.hpp"

#include <cmath>

namespace imc {

void McmConfig::validate() const {
  if (channels < 1) throw ConfigError("MCM channel count must be positive");
  if (cascade_depth < 1 || cascade_depth > 5) {
    throw ConfigError("cascade depth must be in 1..5, got " + std::to_string(cascade_depth));
  }
  if (frames < 1 || frames % 2 == 0) throw ConfigError("clip length must be odd (2N+1), got " + std::to_string(frames));
}

template <typename T>
Mcm<T>::Mcm(const McmConfig& config) : config_(config) {
  config_.validate();
  const std::int64_t c = config_.channels;
  for (int l = 0; l < config_.cascade_depth; ++l) {
    AlignStage<T> st;
    st.reduce = Conv2d<T>(2 * c, c, 3);
    st.offset = Conv2d<T>(c, 2 * kDeformTaps, 3);
    st.dcn = Param<T>({c, c, 3, 3});
    stages_.push_back(std::move(st));
  }
  phi_ = Conv2d<T>(c, c, 1);
  psi_ = Conv2d<T>(c, c, 1);
  reduce_ = Conv2d<T>(config_.frames * c, c, 1);
  theta1_ = Conv2d<T>(c, c, 3);
  theta2_ = Conv2d<T>(2 * c, c, 3);
  delta_ = ConvReluConv<T>(c, c, c, 3);
  head_res_ = ResidualBlock<T>(c, c);
  head_out_ = Conv2d<T>(c, 1, 1);
}

template <typename T>
OffsetField<T> Mcm<T>::generate_offsets(const Tensor<T>& f_ref, const Tensor<T>& f_prev, int stage,
                                        typename AlignStage<T>::Cache* cache) const {
  require_same_shape(f_ref, f_prev, "generate_offsets");
  const AlignStage<T>& st = stages_.at(static_cast<std::size_t>(stage));
  Tensor<T> cat = concat_channels(f_ref, f_prev);
  Tensor<T> pre = st.reduce.forward(cat);
  Tensor<T> act = relu(pre);
  OffsetField<T> field(st.offset.forward(act));
  if (cache) {
    cache->cat = std::move(cat);
    cache->reduce_pre = std::move(pre);
    cache->reduce_act = std::move(act);
    cache->field = field;
  }
  return field;
}

template <typename T>
Tensor<T> Mcm<T>::cascade_align(const Tensor<T>& f_ref, const Tensor<T>& f_nbr, CascadeCache* cache) const {
  require_same_shape(f_ref, f_nbr, "cascade_align");
  if (cache) cache->assign(stages_.size(), {});
  Tensor<T> aligned = f_nbr;
  for (std::size_t l = 0; l < stages_.size(); ++l) {
    typename AlignStage<T>::Cache* sc = cache ? &(*cache)[l] : nullptr;
    const OffsetField<T> field = generate_offsets(f_ref, aligned, static_cast<int>(l), sc);
    Tensor<T> next = deformable_conv(aligned, field, stages_[l].dcn.value);
    if (sc) sc->input = std::move(aligned);
    aligned = std::move(next);
  }
  return aligned;
}

template <typename T>
Tensor<T> Mcm<T>::cascade_backward(const CascadeCache& cache, const Tensor<T>& grad_aligned, Tensor<T>& grad_ref) {
  Tensor<T> g = grad_aligned;
  for (int li = static_cast<int>(stages_.size()) - 1; li >= 0; --li) {
    const auto l = static_cast<std::size_t>(li);
    AlignStage<T>& st = stages_[l];
    const auto& sc = cache[l];
    auto dg = deformable_conv_backward(sc.input, sc.field, st.dcn.value, g);
    st.dcn.grad += dg.grad_weights;
    Tensor<T> g_act = st.offset.backward(sc.reduce_act, dg.grad_offsets);
    Tensor<T> g_cat = st.reduce.backward(sc.cat, relu_backward(sc.reduce_pre, g_act));
    auto parts = split_channels(g_cat, {config_.channels, config_.channels});
    grad_ref += parts[0];
    g = std::move(dg.grad_input);
    g += parts[1];
  }
  return g;
}

template <typename T>
std::vector<Tensor<T>> Mcm<T>::temporal_attention(const std::vector<Tensor<T>>& frames, int reference,
                                                  TemporalCache* cache) const {
  if (reference < 0 || reference >= static_cast<int>(frames.size())) {
    throw ShapeError("temporal_attention: reference index out of range");
  }
  const Tensor<T>& f_ref = frames[static_cast<std::size_t>(reference)];
  for (const auto& f : frames) require_same_shape(f, f_ref, "temporal_attention");
  Tensor<T> psi_ref = psi_.forward(f_ref);
  std::vector<Tensor<T>> phis, maps, gated;
  for (const auto& f : frames) {
    Tensor<T> ph = phi_.forward(f);
    Tensor<T> a = sigmoid(sum_channels(mul(ph, psi_ref)));
    gated.push_back(broadcast_mul_spatial(f, a));
    phis.push_back(std::move(ph));
    maps.push_back(std::move(a));
  }
  if (cache) {
    std::vector<const Tensor<T>*> parts;
    for (const auto& g : gated) parts.push_back(&g);
    cache->frames = frames;
    cache->phi = std::move(phis);
    cache->psi_ref = std::move(psi_ref);
    cache->attention = maps;
    cache->fused = concat_channels(parts);
  }
  return maps;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> Mcm<T>::spatial_attention(const Tensor<T>& f_prime, SpatialCache* cache) const {
  require_nchw(f_prime, "spatial_attention");
  if (f_prime.h() % 2 != 0 || f_prime.w() % 2 != 0) {
    throw ShapeError("spatial_attention: spatial dims must be even, got " + shape_str(f_prime.shape()));
  }
  Tensor<T> r = reduce_.forward(f_prime);
  Tensor<T> u = theta1_.forward(r);
  Tensor<T> mp = max_pool2(u);
  Tensor<T> ap = avg_pool2(u);
  Tensor<T> pooled = concat_channels(mp, ap);
  Tensor<T> a_s = upsample2(theta2_.forward(pooled));
  a_s += r;
  typename ConvReluConv<T>::Cache dc;
  Tensor<T> out = mul(a_s, r);
  out += delta_.forward(a_s, cache ? &dc : nullptr);
  if (cache) {
    cache->f_prime = f_prime;
    cache->r = std::move(r);
    cache->u = std::move(u);
    cache->pooled = std::move(pooled);
    cache->attention = a_s;
    cache->delta_cache = std::move(dc);
  }
  return {std::move(a_s), std::move(out)};
}

template <typename T>
Tensor<T> Mcm<T>::segment_head(const Tensor<T>& f_fused, std::int64_t out_h, std::int64_t out_w,
                               HeadCache* cache) const {
  typename ResidualBlock<T>::Cache rc;
  Tensor<T> hidden = head_res_.forward(f_fused, cache ? &rc : nullptr);
  Tensor<T> logits = head_out_.forward(hidden);
  Tensor<T> mask = sigmoid(upsample_bilinear(logits, out_h, out_w));
  if (cache) {
    cache->res_cache = std::move(rc);
    cache->hidden = std::move(hidden);
    cache->logits = std::move(logits);
    cache->mask = mask;
  }
  return mask;
}

template <typename T>
Tensor<T> Mcm<T>::forward(const std::vector<const Tensor<T>*>& features, int center, std::int64_t out_h,
                          std::int64_t out_w, Cache* cache) const {
  if (static_cast<int>(features.size()) != config_.frames) {
    throw ShapeError("MCM expects " + std::to_string(config_.frames) + " frame features, got " +
                     std::to_string(features.size()));
  }
  if (center < 0 || center >= config_.frames) throw ShapeError("MCM: center index out of range");
  const Tensor<T>& f_ref = *features[static_cast<std::size_t>(center)];
  if (f_ref.c() != config_.channels) {
    throw ShapeError("MCM: expected " + std::to_string(config_.channels) + " channels, got " + shape_str(f_ref.shape()));
  }
  if (cache) {
    cache->center = center;
    cache->cascades.assign(features.size(), {});
  }
  std::vector<Tensor<T>> frames;
  for (int i = 0; i < config_.frames; ++i) {
    const auto si = static_cast<std::size_t>(i);
    if (i == center) {
      frames.push_back(f_ref);
    } else {
      frames.push_back(cascade_align(f_ref, *features[si], cache ? &cache->cascades[si] : nullptr));
    }
  }
  TemporalCache tc;
  temporal_attention(frames, center, &tc);
  SpatialCache sc;
  auto [a_s, fused] = spatial_attention(tc.fused, cache ? &sc : nullptr);
  Tensor<T> mask = segment_head(fused, out_h, out_w, cache ? &cache->head : nullptr);
  if (cache) {
    cache->temporal = std::move(tc);
    cache->spatial = std::move(sc);
  }
  return mask;
}

template <typename T>
Tensor<T> Mcm<T>::temporal_backward(const TemporalCache& cache, const Tensor<T>& grad_fused, int reference,
                                    std::vector<Tensor<T>>& grad_frames) {
  const std::int64_t c = config_.channels;
  const std::vector<std::int64_t> sizes(cache.frames.size(), c);
  auto g_gated = split_channels(grad_fused, sizes);
  Tensor<T> g_psi(cache.psi_ref.shape());
  grad_frames.assign(cache.frames.size(), {});
  for (std::size_t k = 0; k < cache.frames.size(); ++k) {
    auto bg = broadcast_mul_spatial_backward(cache.frames[k], cache.attention[k], g_gated[k]);
    Tensor<T> g_prod = sum_channels_backward(sigmoid_backward(cache.attention[k], bg.grad_s), c);
    g_psi += mul(g_prod, cache.phi[k]);
    Tensor<T> gf = std::move(bg.grad_x);
    gf += phi_.backward(cache.frames[k], mul(g_prod, cache.psi_ref));
    grad_frames[k] = std::move(gf);
  }
  return psi_.backward(cache.frames[static_cast<std::size_t>(reference)], g_psi);
}

template <typename T>
Tensor<T> Mcm<T>::spatial_backward(const SpatialCache& cache, const Tensor<T>& grad_out) {
  // f'' = A_s * r + delta(A_s), A_s = up(theta2([max(u), avg(u)])) + r, u = theta1(r)
  Tensor<T> g_as = mul(grad_out, cache.r);
  Tensor<T> g_r = mul(grad_out, cache.attention);
  g_as += delta_.backward(cache.delta_cache, grad_out);
  g_r += g_as;
  const Tensor<T> g_q = upsample_bilinear_backward(g_as, cache.u.h() / 2, cache.u.w() / 2);
  const Tensor<T> g_pooled = theta2_.backward(cache.pooled, g_q);
  auto parts = split_channels(g_pooled, {config_.channels, config_.channels});
  Tensor<T> g_u = max_pool2_backward(cache.u, parts[0]);
  g_u += avg_pool2_backward(parts[1]);
  g_r += theta1_.backward(cache.r, g_u);
  return reduce_.backward(cache.f_prime, g_r);
}

template <typename T>
std::vector<Tensor<T>> Mcm<T>::backward(const Cache& cache, const Tensor<T>& grad_mask) {
  const HeadCache& hc = cache.head;
  const Tensor<T> g_up = sigmoid_backward(hc.mask, grad_mask);
  const Tensor<T> g_logits = upsample_bilinear_backward(g_up, hc.logits.h(), hc.logits.w());
  const Tensor<T> g_hidden = head_out_.backward(hc.hidden, g_logits);
  const Tensor<T> g_fused = head_res_.backward(hc.res_cache, g_hidden);
  const Tensor<T> g_prime = spatial_backward(cache.spatial, g_fused);

  std::vector<Tensor<T>> g_frames;
  const auto center = static_cast<std::size_t>(cache.center);
  Tensor<T> g_ref = temporal_backward(cache.temporal, g_prime, cache.center, g_frames);
  g_ref += g_frames[center];

  std::vector<Tensor<T>> out(g_frames.size());
  for (std::size_t i = 0; i < g_frames.size(); ++i) {
    if (i == center) continue;
    out[i] = cascade_backward(cache.cascades[i], g_frames[i], g_ref);
  }
  out[center] = std::move(g_ref);
  return out;
}

template <typename T>
void Mcm<T>::init(Rng& rng) {
  const double dcn_bound = std::sqrt(3.0 / static_cast<double>(config_.channels * 9));
  for (auto& st : stages_) {
    st.reduce.init_kaiming(rng);
    st.offset.init_zero();
    rng.fill_uniform(st.dcn.value, -dcn_bound, dcn_bound);
  }
  phi_.init_kaiming(rng);
  psi_.init_kaiming(rng);
  reduce_.init_kaiming(rng);
  theta1_.init_kaiming(rng);
  theta2_.init_kaiming(rng);
  delta_.init_kaiming(rng);
  head_res_.init_kaiming(rng);
  head_out_.init_kaiming(rng);
}

template <typename T>
void Mcm<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t l = 0; l < stages_.size(); ++l) {
    const std::string p = prefix + ".align" + std::to_string(l + 1);
    stages_[l].reduce.visit(p + ".reduce", f);
    stages_[l].offset.visit(p + ".offset", f);
    f(p + ".dcn.weight", stages_[l].dcn.value, stages_[l].dcn.grad);
  }
  phi_.visit(prefix + ".tsc.phi", f);
  psi_.visit(prefix + ".tsc.psi", f);
  reduce_.visit(prefix + ".tsc.reduce", f);
  theta1_.visit(prefix + ".tsc.theta1", f);
  theta2_.visit(prefix + ".tsc.theta2", f);
  delta_.visit(prefix + ".tsc.delta", f);
  head_res_.visit(prefix + ".seg.res", f);
  head_out_.visit(prefix + ".seg.out", f);
}

template class Mcm<float>;
template class Mcm<double>;

}  // namespace imc
