#include "imc/losses.hpp"

#include <algorithm>
#include <cmath>

namespace imc {

namespace {

template <typename T>
void require_mask_pair(const Tensor<T>& pred, const Tensor<T>& gt, const char* what) {
  require_same_shape(pred, gt, what);
  require_nchw(pred, what);
  if (pred.c() != 1) throw ShapeError(std::string(what) + ": expected single-channel masks, got " + shape_str(pred.shape()));
}

std::int64_t reflect(std::int64_t i, std::int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

// Separable Gaussian filter with reflect padding on an h x w plane.
template <typename T>
class GaussianFilter {
 public:
  GaussianFilter(std::int64_t h, std::int64_t w) : h_(h), w_(w), tmp_(static_cast<std::size_t>(h * w)) {
    const auto g = ssim_gaussian();
    for (int k = 0; k < kSsimWindow; ++k) taps_[static_cast<std::size_t>(k)] = static_cast<T>(g[static_cast<std::size_t>(k)]);
  }

  void apply(const T* in, T* out) {
    constexpr int r = kSsimWindow / 2;
    for (std::int64_t y = 0; y < h_; ++y) {
      for (std::int64_t x = 0; x < w_; ++x) {
        T acc = 0;
        for (int k = 0; k < kSsimWindow; ++k) acc += taps_[static_cast<std::size_t>(k)] * in[y * w_ + reflect(x + k - r, w_)];
        tmp_[static_cast<std::size_t>(y * w_ + x)] = acc;
      }
    }
    for (std::int64_t y = 0; y < h_; ++y) {
      for (std::int64_t x = 0; x < w_; ++x) {
        T acc = 0;
        for (int k = 0; k < kSsimWindow; ++k) {
          acc += taps_[static_cast<std::size_t>(k)] * tmp_[static_cast<std::size_t>(reflect(y + k - r, h_) * w_ + x)];
        }
        out[y * w_ + x] = acc;
      }
    }
  }

  // out += adjoint(in)
  void apply_adjoint(const T* in, T* out) {
    constexpr int r = kSsimWindow / 2;
    std::fill(tmp_.begin(), tmp_.end(), T(0));
    for (std::int64_t y = 0; y < h_; ++y) {
      for (std::int64_t x = 0; x < w_; ++x) {
        const T v = in[y * w_ + x];
        for (int k = 0; k < kSsimWindow; ++k) {
          tmp_[static_cast<std::size_t>(reflect(y + k - r, h_) * w_ + x)] += taps_[static_cast<std::size_t>(k)] * v;
        }
      }
    }
    for (std::int64_t y = 0; y < h_; ++y) {
      for (std::int64_t x = 0; x < w_; ++x) {
        const T v = tmp_[static_cast<std::size_t>(y * w_ + x)];
        for (int k = 0; k < kSsimWindow; ++k) out[y * w_ + reflect(x + k - r, w_)] += taps_[static_cast<std::size_t>(k)] * v;
      }
    }
  }

 private:
  std::int64_t h_, w_;
  std::array<T, kSsimWindow> taps_{};
  std::vector<T> tmp_;
};

}  // namespace

std::array<double, kSsimWindow> ssim_gaussian() {
  std::array<double, kSsimWindow> g{};
  double s = 0;
  for (int k = 0; k < kSsimWindow; ++k) {
    const double d = k - kSsimWindow / 2;
    g[static_cast<std::size_t>(k)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
    s += g[static_cast<std::size_t>(k)];
  }
  for (auto& v : g) v /= s;
  return g;
}

template <typename T>
T bce_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad) {
  require_mask_pair(pred, gt, "bce_loss");
  const T lo = static_cast<T>(kProbClamp), hi = static_cast<T>(1.0 - kProbClamp);
  const auto n = static_cast<T>(pred.numel());
  if (grad) *grad = Tensor<T>(pred.shape());
  T acc = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const T raw = pred[i];
    const T p = std::clamp(raw, lo, hi);
    const T g = gt[i];
    acc -= g * std::log(p) + (T(1) - g) * std::log(T(1) - p);
    if (grad && raw > lo && raw < hi) (*grad)[i] = (-g / p + (T(1) - g) / (T(1) - p)) / n;
  }
  return acc / n;
}

template <typename T>
T ssim_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad) {
  require_mask_pair(pred, gt, "ssim_loss");
  const std::int64_t h = pred.h(), w = pred.w();
  if (h < kSsimWindow || w < kSsimWindow) {
    throw ShapeError("ssim_loss: image " + shape_str(pred.shape()) + " smaller than the 11x11 window");
  }
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  const std::int64_t np = h * w;
  if (grad) *grad = Tensor<T>(pred.shape());
  T total = 0;
  GaussianFilter<T> filter(h, w);
  std::vector<T> xx(static_cast<std::size_t>(np)), yy(xx.size()), xy(xx.size());
  std::vector<T> mx(xx.size()), my(xx.size()), exx(xx.size()), eyy(xx.size()), exy(xx.size());
  std::vector<T> g_mx(xx.size()), g_exx(xx.size()), g_exy(xx.size());
  for (std::int64_t b = 0; b < pred.n(); ++b) {
    const T* x = pred.plane(b, 0);
    const T* y = gt.plane(b, 0);
    for (std::int64_t i = 0; i < np; ++i) {
      xx[static_cast<std::size_t>(i)] = x[i] * x[i];
      yy[static_cast<std::size_t>(i)] = y[i] * y[i];
      xy[static_cast<std::size_t>(i)] = x[i] * y[i];
    }
    filter.apply(x, mx.data());
    filter.apply(y, my.data());
    filter.apply(xx.data(), exx.data());
    filter.apply(yy.data(), eyy.data());
    filter.apply(xy.data(), exy.data());
    const T scale = T(-1) / static_cast<T>(pred.numel());
    for (std::size_t i = 0; i < xx.size(); ++i) {
      const T sxx = exx[i] - mx[i] * mx[i];
      const T syy = eyy[i] - my[i] * my[i];
      const T sxy = exy[i] - mx[i] * my[i];
      const T a1 = 2 * mx[i] * my[i] + c1;
      const T a2 = 2 * sxy + c2;
      const T b1 = mx[i] * mx[i] + my[i] * my[i] + c1;
      const T b2 = sxx + syy + c2;
      const T s = (a1 * a2) / (b1 * b2);
      total += s;
      if (grad) {
        const T bb = b1 * b2;
        g_mx[i] = scale * (2 * my[i] * (a2 - a1) / bb - s * 2 * mx[i] * (b2 - b1) / bb);
        g_exx[i] = scale * (-s / b2);
        g_exy[i] = scale * (2 * a1 / bb);
      }
    }
    if (grad) {
      T* gp = grad->plane(b, 0);
      std::vector<T> acc_mx(xx.size(), T(0)), acc_exx(xx.size(), T(0)), acc_exy(xx.size(), T(0));
      filter.apply_adjoint(g_mx.data(), acc_mx.data());
      filter.apply_adjoint(g_exx.data(), acc_exx.data());
      filter.apply_adjoint(g_exy.data(), acc_exy.data());
      for (std::int64_t i = 0; i < np; ++i) {
        const auto si = static_cast<std::size_t>(i);
        gp[i] = acc_mx[si] + 2 * x[i] * acc_exx[si] + y[i] * acc_exy[si];
      }
    }
  }
  return T(1) - total / static_cast<T>(pred.numel());
}

template <typename T>
T iou_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad) {
  require_mask_pair(pred, gt, "iou_loss");
  T sp = 0, sg = 0, spg = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    sp += pred[i];
    sg += gt[i];
    spg += pred[i] * gt[i];
  }
  const T eps = static_cast<T>(kIouEps);
  const T inter = spg + eps;
  const T uni = sp + sg - spg + eps;
  if (grad) {
    *grad = Tensor<T>(pred.shape());
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
      (*grad)[i] = -(gt[i] * uni - inter * (T(1) - gt[i])) / (uni * uni);
    }
  }
  return T(1) - inter / uni;
}

template <typename T>
LossBreakdown composite_loss(const Tensor<T>& pred, const Tensor<T>& gt, Tensor<T>* grad) {
  LossBreakdown lb;
  if (grad) {
    Tensor<T> g1, g2, g3;
    lb.bce = bce_loss(pred, gt, &g1);
    lb.ssim = ssim_loss(pred, gt, &g2);
    lb.iou = iou_loss(pred, gt, &g3);
    g1 += g2;
    g1 += g3;
    *grad = std::move(g1);
  } else {
    lb.bce = bce_loss(pred, gt);
    lb.ssim = ssim_loss(pred, gt);
    lb.iou = iou_loss(pred, gt);
  }
  lb.total = lb.bce + lb.ssim + lb.iou;
  return lb;
}

template <typename T>
LossBreakdown total_loss(const Tensor<T>& final_pred, const Tensor<T>& final_gt,
                         const std::vector<std::array<Tensor<T>, kPyramidLevels>>& side_preds,
                         const std::vector<const Tensor<T>*>& side_gts, LossGrads<T>* grads) {
  if (side_preds.empty() || side_preds.size() != side_gts.size()) {
    throw ShapeError("total_loss: " + std::to_string(side_preds.size()) + " side prediction sets for " +
                     std::to_string(side_gts.size()) + " frames");
  }
  LossBreakdown out;
  auto add_term = [&out](const LossBreakdown& t) {
    out.bce += t.bce;
    out.ssim += t.ssim;
    out.iou += t.iou;
    out.total += t.total;
  };
  const LossBreakdown fin = composite_loss(final_pred, final_gt, grads ? &grads->final_mask : nullptr);
  add_term(fin);
  out.final_total = fin.total;
  if (grads) grads->side_masks.assign(side_preds.size(), {});
  for (std::size_t i = 0; i < side_preds.size(); ++i) {
    const Tensor<T>& gt = *side_gts[i];
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
      const Tensor<T>& side = side_preds[i][l];
      if (side.empty()) {
        throw ShapeError("total_loss: missing side output for frame " + std::to_string(i) + " level " +
                         std::to_string(l + 2));
      }
      const Tensor<T> up = upsample_bilinear(side, gt.h(), gt.w());
      Tensor<T> g;
      const LossBreakdown t = composite_loss(up, gt, grads ? &g : nullptr);
      add_term(t);
      out.side_totals.push_back(t.total);
      if (grads) grads->side_masks[i][l] = upsample_bilinear_backward(g, side.h(), side.w());
    }
  }
  return out;
}

#define IMC_INSTANTIATE(T)                                                                                      \
  template T bce_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                                          \
  template T ssim_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                                         \
  template T iou_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                                          \
  template LossBreakdown composite_loss(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);                        \
  template LossBreakdown total_loss(const Tensor<T>&, const Tensor<T>&,                                         \
                                    const std::vector<std::array<Tensor<T>, kPyramidLevels>>&,                  \
                                    const std::vector<const Tensor<T>*>&, LossGrads<T>*);

IMC_INSTANTIATE(float)
IMC_INSTANTIATE(double)
#undef IMC_INSTANTIATE

}  // namespace imc
