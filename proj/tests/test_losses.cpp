#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "imc/losses.hpp"

using namespace imc;
using imc::test::random_tensor;

namespace {

TensorD square_mask(std::int64_t size, std::int64_t x0, std::int64_t y0, std::int64_t side) {
  TensorD m({1, 1, size, size});
  for (std::int64_t y = y0; y < y0 + side; ++y)
    for (std::int64_t x = x0; x < x0 + side; ++x) m.at(0, 0, y, x) = 1.0;
  return m;
}

// SSIM evaluated window by window with an explicit 2-D Gaussian and
// reflected indices.
double ssim_direct(const TensorD& x, const TensorD& y) {
  const std::int64_t h = x.h(), w = x.w();
  const int r = kSsimWindow / 2;
  double g1[kSsimWindow], gs = 0;
  for (int k = 0; k < kSsimWindow; ++k) {
    g1[k] = std::exp(-double((k - r) * (k - r)) / (2 * 1.5 * 1.5));
    gs += g1[k];
  }
  auto refl = [](std::int64_t i, std::int64_t n) { return i < 0 ? -i : i >= n ? 2 * (n - 1) - i : i; };
  double total = 0;
  for (std::int64_t py = 0; py < h; ++py)
    for (std::int64_t px = 0; px < w; ++px) {
      double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
      for (int ky = 0; ky < kSsimWindow; ++ky)
        for (int kx = 0; kx < kSsimWindow; ++kx) {
          const double wt = g1[ky] * g1[kx] / (gs * gs);
          const std::int64_t yy = refl(py + ky - r, h), xx = refl(px + kx - r, w);
          const double a = x.at(0, 0, yy, xx), b = y.at(0, 0, yy, xx);
          mx += wt * a;
          my += wt * b;
          exx += wt * a * a;
          eyy += wt * b * b;
          exy += wt * a * b;
        }
      const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
      const double s = (2 * mx * my + c1) * (2 * (exy - mx * my) + c2) /
                       ((mx * mx + my * my + c1) * (exx - mx * mx + eyy - my * my + c2));
      total += s;
    }
  return 1.0 - total / static_cast<double>(h * w);
}

}  // namespace

TEST_CASE("bce anchors") {
  const TensorD half({1, 1, 8, 8}, 0.5);
  Rng rng(1);
  TensorD gt({1, 1, 8, 8});
  for (auto& v : gt.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  CHECK(std::abs(bce_loss(half, gt) - std::log(2.0)) < 1e-6);
  CHECK(bce_loss(gt, gt) <= 1e-6);

  const auto pred = random_tensor<double>({1, 1, 8, 8}, rng, 0.01, 0.99);
  double direct = 0;
  for (std::int64_t i = 0; i < 64; ++i) direct -= gt[i] * std::log(pred[i]) + (1 - gt[i]) * std::log(1 - pred[i]);
  CHECK(std::abs(bce_loss(pred, gt) - direct / 64) < 1e-7);
  CHECK_THROWS_AS(bce_loss(pred, TensorD({1, 1, 8, 7})), ShapeError);
}

TEST_CASE("ssim anchors") {
  Rng rng(2);
  const auto x = random_tensor<double>({1, 1, 16, 16}, rng, 0, 1);
  CHECK(ssim_loss(x, x) <= 1e-6);
  CHECK(std::abs(ssim_loss(TensorD({1, 1, 12, 12}, 0.3), TensorD({1, 1, 12, 12}, 0.3))) <= 1e-12);

  TensorD gt({1, 1, 16, 16});
  for (std::int64_t y = 0; y < 16; ++y)
    for (std::int64_t xx = 8; xx < 16; ++xx) gt.at(0, 0, y, xx) = 1.0;
  TensorD inv = gt;
  for (auto& v : inv.values()) v = 1.0 - v;
  const double worst = ssim_loss(inv, gt);
  CHECK(worst > 1.0);
  CHECK(worst == doctest::Approx(ssim_direct(inv, gt)).epsilon(1e-9));

  const auto y = random_tensor<double>({1, 1, 13, 17}, rng, 0, 1);
  const auto z = random_tensor<double>({1, 1, 13, 17}, rng, 0, 1);
  CHECK(std::abs(ssim_loss(y, z) - ssim_direct(y, z)) < 1e-9);
  CHECK_THROWS_AS(ssim_loss(TensorD({1, 1, 10, 16}), TensorD({1, 1, 10, 16})), ShapeError);
}

TEST_CASE("iou anchors") {
  const auto a = square_mask(16, 2, 2, 6);
  CHECK(iou_loss(a, a) <= 1e-6);
  CHECK(iou_loss(a, square_mask(16, 9, 9, 6)) == doctest::Approx(1.0).epsilon(1e-6));
  // 4x4 squares shifted by 2 px: overlap 8, union 24
  const double v = iou_loss(square_mask(16, 2, 2, 4), square_mask(16, 4, 2, 4));
  CHECK(std::abs(v - 2.0 / 3.0) < 1e-4);
}

TEST_CASE("composite loss is the unweighted sum and vanishes at the target") {
  Rng rng(3);
  const auto pred = random_tensor<double>({1, 1, 12, 12}, rng, 0.05, 0.95);
  const auto gt = square_mask(12, 3, 3, 5);
  const auto lb = composite_loss(pred, gt);
  CHECK(lb.total == doctest::Approx(lb.bce + lb.ssim + lb.iou));
  CHECK(lb.bce >= 0);
  CHECK(lb.ssim >= 0);
  CHECK(lb.iou >= 0);
  CHECK(composite_loss(gt, gt).total <= 1e-6);
}

TEST_CASE("total loss counts every frame and level") {
  Rng rng(4);
  const std::int64_t size = 16;
  std::vector<TensorD> gts;
  std::vector<std::array<TensorD, kPyramidLevels>> sides(3);
  for (int i = 0; i < 3; ++i) {
    gts.push_back(square_mask(size, 2 + i, 3, 7));
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
      const std::int64_t s = size / (std::int64_t{1} << l);
      sides[static_cast<std::size_t>(i)][l] = random_tensor<double>({1, 1, s, s}, rng, 0.05, 0.95);
    }
  }
  const auto final_pred = random_tensor<double>({1, 1, size, size}, rng, 0.05, 0.95);
  std::vector<const TensorD*> gp{&gts[0], &gts[1], &gts[2]};

  LossGrads<double> grads;
  const auto lb = total_loss(final_pred, gts[1], sides, gp, &grads);
  CHECK(lb.side_totals.size() == 12);
  double sum_terms = lb.final_total;
  for (double t : lb.side_totals) sum_terms += t;
  CHECK(1 + lb.side_totals.size() == 13);
  CHECK(lb.total == doctest::Approx(sum_terms));
  CHECK(lb.total == doctest::Approx(lb.bce + lb.ssim + lb.iou));
  for (int i = 0; i < 3; ++i)
    for (std::size_t l = 0; l < kPyramidLevels; ++l) CHECK(grads.side_masks[static_cast<std::size_t>(i)][l].shape() == sides[static_cast<std::size_t>(i)][l].shape());

  // final-mask gradient is the sum of the three component gradients
  TensorD g1, g2, g3;
  bce_loss(final_pred, gts[1], &g1);
  ssim_loss(final_pred, gts[1], &g2);
  iou_loss(final_pred, gts[1], &g3);
  g1 += g2;
  g1 += g3;
  CHECK(max_abs_diff(grads.final_mask, g1) < 1e-12);

  // permuting the frames' side terms leaves the total unchanged
  std::vector<std::array<TensorD, kPyramidLevels>> rev{sides[2], sides[1], sides[0]};
  const auto lb_rev = total_loss(final_pred, gts[1], rev, {&gts[2], &gts[1], &gts[0]});
  CHECK(lb_rev.total == doctest::Approx(lb.total).epsilon(1e-12));

  auto broken = sides;
  broken[1][2] = TensorD();
  CHECK_THROWS_AS(total_loss(final_pred, gts[1], broken, gp), ShapeError);
  CHECK_THROWS_AS(total_loss(final_pred, gts[1], sides, {&gts[0]}), ShapeError);
}

TEST_CASE("total loss of perfect predictions is near zero") {
  const TensorD gt({1, 1, 16, 16}, 1.0);
  std::vector<std::array<TensorD, kPyramidLevels>> sides(3);
  for (auto& s : sides)
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
      const std::int64_t n = 16 >> l;
      s[l] = TensorD({1, 1, n, n}, 1.0);
    }
  const auto lb = total_loss(gt, gt, sides, {&gt, &gt, &gt});
  CHECK(lb.total < 1e-5);
}
