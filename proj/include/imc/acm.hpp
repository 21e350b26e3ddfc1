#pragma once

#include <vector>

#include "imc/layers.hpp"

namespace imc {

struct AcmConfig {
  std::int64_t value_channels = 64;  // C_v, channels of V^5
  std::int64_t key_channels = 64;    // C_k
};

template <typename T>
struct KeyMap {
  Tensor<T> keys;  // (1, C_k, h', w')
};

/// Affinity over all frames of a clip. Frame i owns positions
/// [i * positions_per_frame, (i + 1) * positions_per_frame) on both axes.
template <typename T>
struct AffinityMatrix {
  Tensor<T> S;    // (T*n, T*n)
  Tensor<T> S_r;  // column-softmax of S
  std::int64_t frames = 0;
  std::int64_t positions_per_frame = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;

  std::int64_t block_begin(std::int64_t frame) const { return frame * positions_per_frame; }
};

/// Flattens each (1,C,h,w) map to C x (h*w) and concatenates along positions.
template <typename T>
Tensor<T> concat_positions(const std::vector<const Tensor<T>*>& maps);

/// S = (P^T K)^T (Q^T K) with `p_proj`/`q_proj` the 1x1 projection weights
/// (P^T and Q^T as conv kernels), then S_r = softmax_columns(S).
template <typename T>
AffinityMatrix<T> compute_affinity(const std::vector<KeyMap<T>>& keys, const ConvParams<T>& p_proj,
                                   const ConvParams<T>& q_proj);

/// Z_i = V_all * S_r[:, block i], reshaped to (1, C_v, h', w').
template <typename T>
std::vector<Tensor<T>> attend_values(const std::vector<const Tensor<T>*>& values, const AffinityMatrix<T>& aff);

/// Affinity computing module: shared key encoder, factorized projections and
/// attention over the value features of every frame in the clip.
template <typename T>
class Acm {
 public:
  struct Cache {
    std::vector<typename ConvReluConv<T>::Cache> key_caches;
    std::vector<KeyMap<T>> keys;
    Tensor<T> proj_p;  // C_k x T*n
    Tensor<T> proj_q;
    Tensor<T> values;  // C_v x T*n
    AffinityMatrix<T> affinity;
  };

  Acm() = default;
  explicit Acm(const AcmConfig& config);

  KeyMap<T> encode_keys(const Tensor<T>& v5, typename ConvReluConv<T>::Cache* cache = nullptr) const;
  AffinityMatrix<T> compute_affinity(const std::vector<KeyMap<T>>& keys) const;

  /// Full module: level-5 features of every frame -> enhanced features Z_i.
  std::vector<Tensor<T>> forward(const std::vector<const Tensor<T>*>& v5, Cache* cache = nullptr) const;
  /// Returns d(loss)/dV^5 per frame (through both the key and value paths).
  std::vector<Tensor<T>> backward(const Cache& cache, const std::vector<Tensor<T>>& grad_z);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);

  const AcmConfig& config() const { return config_; }
  Conv2d<T>& proj_p() { return proj_p_; }
  Conv2d<T>& proj_q() { return proj_q_; }
  ConvReluConv<T>& key_encoder() { return key_encoder_; }

 private:
  AcmConfig config_;
  ConvReluConv<T> key_encoder_;
  Conv2d<T> proj_p_;
  Conv2d<T> proj_q_;
};

}  // namespace imc
