#pragma once

#include <array>

#include "imc/encoder.hpp"

namespace imc {

struct ApmConfig {
  std::array<std::int64_t, kPyramidLevels> level_channels{16, 32, 48, 64};  // C_v^l, l = 2..5
  std::int64_t width = 64;                                                   // channels of every P^l

  std::int64_t mask_hidden() const { return width > 1 ? width / 2 : 1; }
};

/// Decoder outputs for one frame, indexed by level - 2.
template <typename T>
struct DecoderState {
  std::array<Tensor<T>, kPyramidLevels> features;    // P^l
  std::array<Tensor<T>, kPyramidLevels> side_masks;  // M^l in (0,1), (1,1,h_l,w_l)

  const Tensor<T>& p2() const { return features[0]; }
  Tensor<T>& feature(int l) { return features.at(static_cast<std::size_t>(l - 2)); }
  Tensor<T>& side_mask(int l) { return side_masks.at(static_cast<std::size_t>(l - 2)); }
};

/// Attention propagation decoder: the level-5 head weights V^5 by the
/// enhanced feature Z, then each lower level gates its skip connection with
/// the upsampled mask predicted one level up.
template <typename T>
class Apm {
 public:
  struct HeadCache {
    Tensor<T> v5, z, gap_z, vz;
    Tensor<T> p5;
    typename ConvReluConv<T>::Cache mask_cache;
    Tensor<T> mask;
  };
  struct StepCache {
    Tensor<T> v;         // V^l
    Tensor<T> up_mask;   // up(M^{l+1})
    Tensor<T> gated;     // V~^l
    Tensor<T> tau_head;  // head conv output
    typename ResidualBlock<T>::Cache tau_cache;
    typename ResidualBlock<T>::Cache xi1_cache;
    Tensor<T> p;
    typename ConvReluConv<T>::Cache mask_cache;
    Tensor<T> mask;
    std::int64_t next_h = 0, next_w = 0;
  };
  struct Cache {
    HeadCache head;
    std::array<StepCache, 3> steps;  // index 0 -> level 4, 2 -> level 2
  };

  Apm() = default;
  explicit Apm(const ApmConfig& config);

  /// P5 = (v5 * z) scaled per channel by GAP(z); M5 = sigmoid(xi2(P5)).
  std::pair<Tensor<T>, Tensor<T>> head(const Tensor<T>& v5, const Tensor<T>& z, HeadCache* cache = nullptr) const;

  /// One top-down step for level l in {4, 3, 2}.
  std::pair<Tensor<T>, Tensor<T>> step(int level, const Tensor<T>& v, const Tensor<T>& p_next,
                                       const Tensor<T>& mask_next, StepCache* cache = nullptr) const;

  DecoderState<T> run(const FramePyramid<T>& pyramid, const Tensor<T>& z, Cache* cache = nullptr) const;

  struct Grads {
    std::array<Tensor<T>, kPyramidLevels> grad_levels;  // dL/dV^l
    Tensor<T> grad_z;
  };

  /// `grad_masks[i]` (may be empty) is dL/dM^{i+2}; `grad_p2` (may be empty)
  /// is dL/dP^2.
  Grads backward(const Cache& cache, const std::array<Tensor<T>, kPyramidLevels>& grad_masks, const Tensor<T>& grad_p2);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);

  const ApmConfig& config() const { return config_; }

  struct Level {
    Conv2d<T> tau_head;
    ResidualBlock<T> tau_res;
    ResidualBlock<T> xi1;
    ConvReluConv<T> xi2;
  };
  /// Level l in {4, 3, 2}.
  Level& level(int l) { return levels_.at(static_cast<std::size_t>(4 - l)); }
  ConvReluConv<T>& head_mask() { return head_mask_; }

 private:
  ApmConfig config_;
  ConvReluConv<T> head_mask_;
  std::array<Level, 3> levels_;  // 4, 3, 2
};

}  // namespace imc
