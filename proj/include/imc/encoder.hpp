#pragma once

#include <array>
#include <vector>

#include "imc/layers.hpp"

namespace imc {

inline constexpr int kPyramidLevels = 4;  // levels 2..5
inline constexpr std::array<int, kPyramidLevels> kLevelStrides{4, 8, 16, 32};

struct EncoderConfig {
  std::vector<std::int64_t> channels{16, 32, 48, 64};  // C_v^l for l = 2..5
  std::int64_t input_size = 64;

  /// Throws ConfigError when the plan is unusable.
  void validate() const;
};

/// Per-frame feature stack V^l, l = 2..5.
template <typename T>
struct FramePyramid {
  std::array<Tensor<T>, kPyramidLevels> levels;
  int frame_index = 0;

  /// Level by paper numbering (2..5).
  Tensor<T>& level(int l) { return levels.at(static_cast<std::size_t>(l - 2)); }
  const Tensor<T>& level(int l) const { return levels.at(static_cast<std::size_t>(l - 2)); }
};

/// Shared-weight convolutional pyramid: a stride-2 stem followed by four
/// stages of [conv3x3 s2 -> relu -> conv3x3 -> relu].
template <typename T>
class Encoder {
 public:
  struct Cache {
    Tensor<T> input;
    Tensor<T> stem_pre;
    std::array<Tensor<T>, kPyramidLevels> stage_in;
    std::array<Tensor<T>, kPyramidLevels> pre_a;
    std::array<Tensor<T>, kPyramidLevels> act_a;
    std::array<Tensor<T>, kPyramidLevels> pre_b;
  };

  Encoder() = default;
  explicit Encoder(const EncoderConfig& config);

  /// frame: (1,3,h,w) with h and w divisible by 32.
  FramePyramid<T> encode(const Tensor<T>& frame, Cache* cache = nullptr) const;

  /// `grad_levels[i]` may be empty (treated as zero). Returns the gradient
  /// w.r.t. the frame when `need_input_grad` is set, else an empty tensor.
  Tensor<T> backward(const Cache& cache, const std::array<Tensor<T>, kPyramidLevels>& grad_levels,
                     bool need_input_grad = false);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& f);

  const EncoderConfig& config() const { return config_; }

  /// Receptive field (in input pixels) of one unit at each level.
  std::array<std::int64_t, kPyramidLevels> receptive_fields() const;

 private:
  EncoderConfig config_;
  Conv2d<T> stem_;
  std::array<Conv2d<T>, kPyramidLevels> down_;
  std::array<Conv2d<T>, kPyramidLevels> refine_;
};

}  // namespace imc
