#pragma once

#include <vector>

#include "imc/acm.hpp"
#include "imc/apm.hpp"
#include "imc/checkpoint.hpp"
#include "imc/encoder.hpp"
#include "imc/losses.hpp"
#include "imc/mcm.hpp"

namespace imc {

struct ModelConfig {
  EncoderConfig encoder;
  int clip_n = 1;                    // N
  int delta_t = 4;                   // frame step
  std::int64_t key_channels = 64;    // C_k
  std::int64_t width = 64;           // C, decoder and MCM width
  int cascade_depth = 4;             // L

  int frames() const { return 2 * clip_n + 1; }
  void validate() const;
};

enum class ParamGroup { Encoder, Decoder, Motion };

/// Group of a parameter from its visit name (encoder / acm+apm / mcm).
ParamGroup param_group(const std::string& name);

/// Full network: shared encoder over every frame, ACM over the level-5
/// features, a per-frame APM decoder, and the MCM head on the P^2 stack.
template <typename T>
class Imcnet {
 public:
  struct Output {
    Tensor<T> mask;                          // final mask of the center frame, (1,1,H,W)
    std::vector<DecoderState<T>> decoders;   // per frame, including side masks
  };
  struct Cache {
    std::vector<typename Encoder<T>::Cache> encoder;
    typename Acm<T>::Cache acm;
    std::vector<typename Apm<T>::Cache> apm;
    typename Mcm<T>::Cache mcm;
  };

  Imcnet() = default;
  explicit Imcnet(const ModelConfig& config);

  /// frames: 2N+1 RGB tensors (1,3,H,W) in temporal order; the center frame is segmented.
  Output forward(const std::vector<Tensor<T>>& frames, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients for the given loss gradients.
  void backward(const Cache& cache, const LossGrads<T>& grads);

  void init(Rng& rng);
  void visit(const ParamVisitor<T>& f);
  void zero_grad();
  std::size_t parameter_count();

  TensorMap export_weights();
  /// Throws CheckpointError listing mismatched entries.
  void import_weights(const TensorMap& weights);

  const ModelConfig& config() const { return config_; }
  Encoder<T>& encoder() { return encoder_; }
  Acm<T>& acm() { return acm_; }
  Apm<T>& apm() { return apm_; }
  Mcm<T>& mcm() { return mcm_; }

 private:
  ModelConfig config_;
  Encoder<T> encoder_;
  Acm<T> acm_;
  Apm<T> apm_;
  Mcm<T> mcm_;
};

}  // namespace imc
