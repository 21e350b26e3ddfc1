#include "imc/acm.hpp"

namespace imc {

namespace {

// Inverse of concat_positions for one block: columns [begin, begin+n) of a
// C x (T*n) matrix back to (1, C, h, w).
template <typename T>
Tensor<T> take_block(const Tensor<T>& m, std::int64_t begin, std::int64_t h, std::int64_t w) {
  const std::int64_t rows = m.dim(0), cols = m.dim(1), n = h * w;
  Tensor<T> out({1, rows, h, w});
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(m.data() + r * cols + begin, m.data() + r * cols + begin + n, out.data() + r * n);
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> concat_positions(const std::vector<const Tensor<T>*>& maps) {
  if (maps.empty()) throw ShapeError("concat_positions: no maps");
  const Tensor<T>& first = *maps.front();
  require_nchw(first, "concat_positions");
  for (const auto* m : maps) {
    if (m->shape() != first.shape() || m->n() != 1) {
      throw ShapeError("concat_positions: inconsistent map shapes " + shape_str(first.shape()) + " vs " +
                       shape_str(m->shape()));
    }
  }
  const std::int64_t c = first.c(), n = first.h() * first.w();
  const auto frames = static_cast<std::int64_t>(maps.size());
  Tensor<T> out({c, frames * n});
  for (std::int64_t f = 0; f < frames; ++f) {
    const Tensor<T>& m = *maps[static_cast<std::size_t>(f)];
    for (std::int64_t ch = 0; ch < c; ++ch) {
      std::copy(m.plane(0, ch), m.plane(0, ch) + n, out.data() + ch * frames * n + f * n);
    }
  }
  return out;
}

template <typename T>
AffinityMatrix<T> compute_affinity(const std::vector<KeyMap<T>>& keys, const ConvParams<T>& p_proj,
                                   const ConvParams<T>& q_proj) {
  if (keys.empty()) throw ShapeError("compute_affinity: no key maps");
  std::vector<Tensor<T>> pk, qk;
  for (const auto& k : keys) {
    if (k.keys.shape() != keys.front().keys.shape()) {
      throw ShapeError("compute_affinity: key maps differ in shape " + shape_str(keys.front().keys.shape()) + " vs " +
                       shape_str(k.keys.shape()));
    }
    pk.push_back(conv2d(k.keys, p_proj));
    qk.push_back(conv2d(k.keys, q_proj));
  }
  std::vector<const Tensor<T>*> pp, qp;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    pp.push_back(&pk[i]);
    qp.push_back(&qk[i]);
  }
  const Tensor<T> a = concat_positions(pp);
  const Tensor<T> b = concat_positions(qp);
  AffinityMatrix<T> aff;
  aff.S = matmul(transpose(a), b);
  aff.S_r = softmax_columns(aff.S);
  aff.frames = static_cast<std::int64_t>(keys.size());
  aff.height = keys.front().keys.h();
  aff.width = keys.front().keys.w();
  aff.positions_per_frame = aff.height * aff.width;
  return aff;
}

template <typename T>
std::vector<Tensor<T>> attend_values(const std::vector<const Tensor<T>*>& values, const AffinityMatrix<T>& aff) {
  if (static_cast<std::int64_t>(values.size()) != aff.frames) {
    throw ShapeError("attend_values: " + std::to_string(values.size()) + " value maps for an affinity over " +
                     std::to_string(aff.frames) + " frames");
  }
  for (const auto* v : values) {
    require_nchw(*v, "attend_values");
    if (v->h() != aff.height || v->w() != aff.width) {
      throw ShapeError("attend_values: value map " + shape_str(v->shape()) + " does not match key grid " +
                       std::to_string(aff.height) + "x" + std::to_string(aff.width));
    }
  }
  const Tensor<T> z_all = matmul(concat_positions(values), aff.S_r);
  std::vector<Tensor<T>> out;
  for (std::int64_t i = 0; i < aff.frames; ++i) out.push_back(take_block(z_all, aff.block_begin(i), aff.height, aff.width));
  return out;
}

template <typename T>
Acm<T>::Acm(const AcmConfig& config)
    : config_(config),
      key_encoder_(config.value_channels, config.key_channels, config.key_channels, 3),
      proj_p_(config.key_channels, config.key_channels, 1, 1, 0, false),
      proj_q_(config.key_channels, config.key_channels, 1, 1, 0, false) {}

template <typename T>
KeyMap<T> Acm<T>::encode_keys(const Tensor<T>& v5, typename ConvReluConv<T>::Cache* cache) const {
  require_nchw(v5, "encode_keys");
  if (v5.c() != config_.value_channels) {
    throw ShapeError("encode_keys: expected " + std::to_string(config_.value_channels) + " channels, got " +
                     shape_str(v5.shape()));
  }
  return KeyMap<T>{key_encoder_.forward(v5, cache)};
}

template <typename T>
AffinityMatrix<T> Acm<T>::compute_affinity(const std::vector<KeyMap<T>>& keys) const {
  return imc::compute_affinity(keys, proj_p_.params(), proj_q_.params());
}

template <typename T>
std::vector<Tensor<T>> Acm<T>::forward(const std::vector<const Tensor<T>*>& v5, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  c.key_caches.assign(v5.size(), {});
  c.keys.clear();
  for (std::size_t i = 0; i < v5.size(); ++i) c.keys.push_back(encode_keys(*v5[i], &c.key_caches[i]));
  c.affinity = compute_affinity(c.keys);
  std::vector<Tensor<T>> pk, qk;
  for (const auto& k : c.keys) {
    pk.push_back(proj_p_.forward(k.keys));
    qk.push_back(proj_q_.forward(k.keys));
  }
  std::vector<const Tensor<T>*> pp, qp;
  for (std::size_t i = 0; i < pk.size(); ++i) {
    pp.push_back(&pk[i]);
    qp.push_back(&qk[i]);
  }
  c.proj_p = concat_positions(pp);
  c.proj_q = concat_positions(qp);
  c.values = concat_positions(v5);
  return attend_values(v5, c.affinity);
}

template <typename T>
std::vector<Tensor<T>> Acm<T>::backward(const Cache& cache, const std::vector<Tensor<T>>& grad_z) {
  const auto& aff = cache.affinity;
  const std::int64_t frames = aff.frames, n = aff.positions_per_frame;
  if (static_cast<std::int64_t>(grad_z.size()) != frames) throw ShapeError("Acm::backward: gradient count mismatch");

  std::vector<const Tensor<T>*> gz_ptrs;
  for (const auto& g : grad_z) gz_ptrs.push_back(&g);
  const Tensor<T> gz_all = concat_positions(gz_ptrs);  // C_v x T*n

  const auto zg = matmul_backward(cache.values, aff.S_r, gz_all);
  const Tensor<T> g_s = softmax_columns_backward(aff.S_r, zg.grad_b);
  // S = A^T B  =>  dA = B dS^T, dB = A dS
  const Tensor<T> g_a = matmul(cache.proj_q, transpose(g_s));
  const Tensor<T> g_b = matmul(cache.proj_p, g_s);

  std::vector<Tensor<T>> grad_v5;
  for (std::int64_t i = 0; i < frames; ++i) {
    const auto fi = static_cast<std::size_t>(i);
    const Tensor<T>& k = cache.keys[fi].keys;
    Tensor<T> gk = proj_p_.backward(k, take_block(g_a, aff.block_begin(i), aff.height, aff.width));
    gk += proj_q_.backward(k, take_block(g_b, aff.block_begin(i), aff.height, aff.width));
    Tensor<T> gv = key_encoder_.backward(cache.key_caches[fi], gk);
    gv += take_block(zg.grad_a, i * n, aff.height, aff.width);
    grad_v5.push_back(std::move(gv));
  }
  return grad_v5;
}

template <typename T>
void Acm<T>::init(Rng& rng) {
  key_encoder_.init_kaiming(rng);
  proj_p_.init_kaiming(rng);
  proj_q_.init_kaiming(rng);
}

template <typename T>
void Acm<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  key_encoder_.visit(prefix + ".key_encoder", f);
  proj_p_.visit(prefix + ".proj_p", f);
  proj_q_.visit(prefix + ".proj_q", f);
}

#define IMC_INSTANTIATE(T)                                                                                   \
  template Tensor<T> concat_positions(const std::vector<const Tensor<T>*>&);                                 \
  template AffinityMatrix<T> compute_affinity(const std::vector<KeyMap<T>>&, const ConvParams<T>&,           \
                                              const ConvParams<T>&);                                         \
  template std::vector<Tensor<T>> attend_values(const std::vector<const Tensor<T>*>&, const AffinityMatrix<T>&); \
  template class Acm<T>;

IMC_INSTANTIATE(float)
IMC_INSTANTIATE(double)
#undef IMC_INSTANTIATE

}  // namespace imc
