#include "imc/model.hpp"

namespace imc {

void ModelConfig::validate() const {
  encoder.validate();
  if (clip_n < 0 || clip_n > 8) throw ConfigError("clip_n must be in 0..8, got " + std::to_string(clip_n));
  if (delta_t < 1) throw ConfigError("delta_t must be positive");
  if (key_channels < 1) throw ConfigError("key_channels must be positive");
  if (width != encoder.channels.back()) {
    throw ConfigError("width " + std::to_string(width) + " must equal the level-5 encoder channels " +
                      std::to_string(encoder.channels.back()));
  }
  McmConfig{width, cascade_depth, frames()}.validate();
}

ParamGroup param_group(const std::string& name) {
  if (name.rfind("encoder.", 0) == 0) return ParamGroup::Encoder;
  if (name.rfind("mcm.", 0) == 0) return ParamGroup::Motion;
  if (name.rfind("acm.", 0) == 0 || name.rfind("apm.", 0) == 0) return ParamGroup::Decoder;
  throw ConfigError("parameter " + name + " has no learning-rate group");
}

template <typename T>
Imcnet<T>::Imcnet(const ModelConfig& config) : config_(config) {
  config_.validate();
  encoder_ = Encoder<T>(config_.encoder);
  acm_ = Acm<T>(AcmConfig{config_.encoder.channels.back(), config_.key_channels});
  ApmConfig ac;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) ac.level_channels[i] = config_.encoder.channels[i];
  ac.width = config_.width;
  apm_ = Apm<T>(ac);
  mcm_ = Mcm<T>(McmConfig{config_.width, config_.cascade_depth, config_.frames()});
}

template <typename T>
typename Imcnet<T>::Output Imcnet<T>::forward(const std::vector<Tensor<T>>& frames, Cache* cache) const {
  if (static_cast<int>(frames.size()) != config_.frames()) {
    throw ShapeError("model expects " + std::to_string(config_.frames()) + " frames, got " +
                     std::to_string(frames.size()));
  }
  const std::size_t nf = frames.size();
  if (cache) {
    cache->encoder.assign(nf, {});
    cache->apm.assign(nf, {});
  }
  std::vector<FramePyramid<T>> pyramids(nf);
  std::vector<const Tensor<T>*> v5(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    require_same_shape(frames[i], frames[0], "model forward");
    pyramids[i] = encoder_.encode(frames[i], cache ? &cache->encoder[i] : nullptr);
    pyramids[i].frame_index = static_cast<int>(i);
    v5[i] = &pyramids[i].level(5);
  }
  const std::vector<Tensor<T>> z = acm_.forward(v5, cache ? &cache->acm : nullptr);
  Output out;
  out.decoders.resize(nf);
  std::vector<const Tensor<T>*> p2(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    out.decoders[i] = apm_.run(pyramids[i], z[i], cache ? &cache->apm[i] : nullptr);
    p2[i] = &out.decoders[i].features[0];
  }
  out.mask = mcm_.forward(p2, static_cast<int>(nf / 2), frames[0].h(), frames[0].w(), cache ? &cache->mcm : nullptr);
  return out;
}

template <typename T>
void Imcnet<T>::backward(const Cache& cache, const LossGrads<T>& grads) {
  const std::size_t nf = cache.apm.size();
  if (grads.side_masks.size() != nf) throw ShapeError("model backward: side gradient count mismatch");
  const std::vector<Tensor<T>> g_p2 = mcm_.backward(cache.mcm, grads.final_mask);
  std::vector<typename Apm<T>::Grads> apm_grads(nf);
  std::vector<Tensor<T>> g_z(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    apm_grads[i] = apm_.backward(cache.apm[i], grads.side_masks[i], g_p2[i]);
    g_z[i] = std::move(apm_grads[i].grad_z);
  }
  const std::vector<Tensor<T>> g_v5 = acm_.backward(cache.acm, g_z);
  for (std::size_t i = 0; i < nf; ++i) {
    apm_grads[i].grad_levels[3] += g_v5[i];
    encoder_.backward(cache.encoder[i], apm_grads[i].grad_levels, false);
  }
}

template <typename T>
void Imcnet<T>::init(Rng& rng) {
  encoder_.init(rng);
  acm_.init(rng);
  apm_.init(rng);
  mcm_.init(rng);
}

template <typename T>
void Imcnet<T>::visit(const ParamVisitor<T>& f) {
  encoder_.visit("encoder", f);
  acm_.visit("acm", f);
  apm_.visit("apm", f);
  mcm_.visit("mcm", f);
}

template <typename T>
void Imcnet<T>::zero_grad() {
  visit([](const std::string&, Tensor<T>&, Tensor<T>& g) { g.fill(T(0)); });
}

template <typename T>
std::size_t Imcnet<T>::parameter_count() {
  std::size_t n = 0;
  visit([&n](const std::string&, Tensor<T>& v, Tensor<T>&) { n += static_cast<std::size_t>(v.numel()); });
  return n;
}

template <typename T>
TensorMap Imcnet<T>::export_weights() {
  TensorMap out;
  visit([&out](const std::string& name, Tensor<T>& v, Tensor<T>&) { out.emplace(name, v.template cast<float>()); });
  return out;
}

template <typename T>
void Imcnet<T>::import_weights(const TensorMap& weights) {
  TensorMap current = export_weights();
  assign_checkpoint(current, weights);
  visit([&current](const std::string& name, Tensor<T>& v, Tensor<T>&) { v = current.at(name).cast<T>(); });
}

template class Imcnet<float>;
template class Imcnet<double>;

}  // namespace imc
