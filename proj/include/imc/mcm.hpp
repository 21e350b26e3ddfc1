#pragma once

#include <vector>

#include "imc/deform_conv.hpp"
#include "imc/layers.hpp"

namespace imc {

struct McmConfig {
  std::int64_t channels = 64;  // C
  int cascade_depth = 4;       // L
  int frames = 3;              // 2N+1

  void validate() const;
};

/// One cascade stage: offsets from [f_ref, f_prev], then a deformable 3x3 conv.
template <typename T>
struct AlignStage {
  Conv2d<T> reduce;  // 2C -> C, followed by relu
  Conv2d<T> offset;  // C -> 18, zero-initialized
  Param<T> dcn;      // (C, C, 3, 3), no bias

  struct Cache {
    Tensor<T> input;  // f_aligned^{l-1}
    Tensor<T> cat;
    Tensor<T> reduce_pre;
    Tensor<T> reduce_act;
    OffsetField<T> field;
  };
};

/// Motion compensation: cascaded deformable alignment of every neighbor to the
/// reference feature, temporal-spatial attention fusion and the mask head.
template <typename T>
class Mcm {
 public:
  using CascadeCache = std::vector<typename AlignStage<T>::Cache>;

  struct TemporalCache {
    std::vector<Tensor<T>> frames;
    std::vector<Tensor<T>> phi;
    Tensor<T> psi_ref;
    std::vector<Tensor<T>> attention;  // A_t per frame
    Tensor<T> fused;                   // f'
  };
  struct SpatialCache {
    Tensor<T> f_prime;
    Tensor<T> r;
    Tensor<T> u;  // theta1(r)
    Tensor<T> pooled;
    Tensor<T> attention;  // A_s
    typename ConvReluConv<T>::Cache delta_cache;
  };
  struct HeadCache {
    typename ResidualBlock<T>::Cache res_cache;
    Tensor<T> hidden;
    Tensor<T> logits;  // (1,1,h/4,w/4)
    Tensor<T> mask;    // full resolution
  };
  struct Cache {
    std::vector<CascadeCache> cascades;  // one per neighbor, in frame order
    TemporalCache temporal;
    SpatialCache spatial;
    HeadCache head;
    int center = 0;
  };

  Mcm() = default;
  explicit Mcm(const McmConfig& config);

  OffsetField<T> generate_offsets(const Tensor<T>& f_ref, const Tensor<T>& f_prev, int stage,
                                  typename AlignStage<T>::Cache* cache = nullptr) const;

  /// Runs the L-stage cascade starting from f_aligned^0 = f_nbr.
  Tensor<T> cascade_align(const Tensor<T>& f_ref, const Tensor<T>& f_nbr, CascadeCache* cache = nullptr) const;

  /// Returns (dL/df_nbr); accumulates dL/df_ref into `grad_ref`.
  Tensor<T> cascade_backward(const CascadeCache& cache, const Tensor<T>& grad_aligned, Tensor<T>& grad_ref);

  /// A_t per frame and f' = concat_k(A_t[k] * frames[k]). `reference` is the
  /// index of f_ref inside `frames`.
  std::vector<Tensor<T>> temporal_attention(const std::vector<Tensor<T>>& frames, int reference,
                                            TemporalCache* cache = nullptr) const;

  /// Returns (A_s, f'') for the concatenated temporal feature f'.
  std::pair<Tensor<T>, Tensor<T>> spatial_attention(const Tensor<T>& f_prime, SpatialCache* cache = nullptr) const;

  /// sigmoid(bilinear-upsampled logits) at (out_h, out_w).
  Tensor<T> segment_head(const Tensor<T>& f_fused, std::int64_t out_h, std::int64_t out_w,
                         HeadCache* cache = nullptr) const;

  /// features: P^2 of every frame of the clip in temporal order; `center` is
  /// the index of the reference frame. Returns the final mask.
  Tensor<T> forward(const std::vector<const Tensor<T>*>& features, int center, std::int64_t out_h,
                    std::int64_t out_w, Cache* cache = nullptr) const;

  /// dL/dP^2 for every frame of the clip.
  std::vector<Tensor<T>> backward(const Cache& cache, const Tensor<T>& grad_mask);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);

  const McmConfig& config() const { return config_; }
  AlignStage<T>& stage(int l) { return stages_.at(static_cast<std::size_t>(l)); }
  Conv2d<T>& phi() { return phi_; }
  Conv2d<T>& psi() { return psi_; }
  Conv2d<T>& reduce() { return reduce_; }
  Conv2d<T>& theta1() { return theta1_; }
  Conv2d<T>& theta2() { return theta2_; }
  ConvReluConv<T>& delta() { return delta_; }
  ResidualBlock<T>& head_res() { return head_res_; }
  Conv2d<T>& head_out() { return head_out_; }

 private:
  Tensor<T> temporal_backward(const TemporalCache& cache, const Tensor<T>& grad_fused, int reference,
                              std::vector<Tensor<T>>& grad_frames);
  Tensor<T> spatial_backward(const SpatialCache& cache, const Tensor<T>& grad_out);

  McmConfig config_;
  std::vector<AlignStage<T>> stages_;
  Conv2d<T> phi_, psi_;
  Conv2d<T> reduce_;
  Conv2d<T> theta1_, theta2_;
  ConvReluConv<T> delta_;
  ResidualBlock<T> head_res_;
  Conv2d<T> head_out_;
};

}  // namespace imc
