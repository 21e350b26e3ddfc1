#pragma once

#include <array>
#include <vector>

#include "imc/encoder.hpp"

namespace imc {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kIouEps = 1e-7;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

struct LossBreakdown {
  double bce = 0;
  double ssim = 0;
  double iou = 0;
  double total = 0;
  double final_total = 0;           // composite loss of the final mask (total_loss only)
  std::vector<double> side_totals;  // frame-major, levels 2..5 (total_loss only)
};

// Each loss returns its value and, when `grad` is given, writes
// d(loss)/d(pred) into it. Masks are single-channel (1,1,H,W).

/// Mean binary cross-entropy; pred clamped to [1e-7, 1 - 1e-7].
template <typename T>
T bce_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad = nullptr);

/// 1 - mean SSIM over 11x11 Gaussian windows (sigma 1.5), reflect padding.
template <typename T>
T ssim_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad = nullptr);

/// Soft IoU loss 1 - (sum pg + eps) / (sum p + sum g - sum pg + eps).
template <typename T>
T iou_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad = nullptr);

/// bce + ssim + iou with unit weights.
template <typename T>
LossBreakdown composite_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad = nullptr);

template <typename T>
struct LossGrads {
  Tensor<T> final_mask;
  std::vector<std::array<Tensor<T>, kPyramidLevels>> side_masks;
};

/// Deeply supervised loss: composite(final, gt_center) plus composite of every
/// side mask of every frame against that frame's mask. Side masks come at
/// their native resolution and are bilinearly upsampled to the mask size;
/// side gradients are returned at native resolution.
template <typename T>
LossBreakdown total_loss(const Tensor<T>& final_pred, const Tensor<T>& final_gt,
                         const std::vector<std::array<Tensor<T>, kPyramidLevels>>& side_preds,
                         const std::vector<const Tensor<T>*>& side_gts, LossGrads<T>* grads = nullptr);

/// Normalized 1-D Gaussian taps used by the SSIM window.
std::array<double, kSsimWindow> ssim_gaussian();

}  // namespace imc
