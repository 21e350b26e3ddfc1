#include <doctest.h>

#include "helpers.hpp"
#include "imc/acm.hpp"
#include "oracles.hpp"

using namespace imc;
using imc::test::random_tensor;
using imc::oracle::apply;
using imc::oracle::dot;

namespace {

ConvParams<double> projection(const TensorD& w) {
  ConvParams<double> p;
  p.weights = w.reshaped({w.dim(0), w.dim(1), 1, 1});
  return p;
}

struct Case {
  std::vector<KeyMap<double>> keys;
  std::vector<TensorD> values;
  TensorD wp, wq;
};

Case random_case(std::uint64_t seed, int frames, std::int64_t h, std::int64_t w, std::int64_t ck, std::int64_t cv) {
  Rng rng(seed);
  Case c;
  for (int f = 0; f < frames; ++f) {
    c.keys.push_back({random_tensor<double>({1, ck, h, w}, rng)});
    c.values.push_back(random_tensor<double>({1, cv, h, w}, rng));
  }
  c.wp = random_tensor<double>({ck, ck}, rng);
  c.wq = random_tensor<double>({ck, ck}, rng);
  return c;
}

std::vector<const TensorD*> ptrs(const std::vector<TensorD>& v) {
  std::vector<const TensorD*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

}  // namespace

TEST_CASE("affinity of a single 2x1 key map is the Gram matrix of projected keys") {
  std::vector<KeyMap<double>> keys{{TensorD({1, 2, 2, 1}, {1.0, -2.0, 0.5, 3.0})}};
  const TensorD wp({2, 2}, {1.0, 2.0, 0.0, -1.0});
  const TensorD wq({2, 2}, {0.5, 0.0, 1.0, 1.0});
  const auto aff = compute_affinity(keys, projection(wp), projection(wq));
  REQUIRE(aff.S.shape() == Shape{2, 2});
  // position 0 holds key (1, 0.5), position 1 holds (-2, 3)
  const std::vector<std::vector<double>> k{{1.0, 0.5}, {-2.0, 3.0}};
  for (int n = 0; n < 2; ++n)
    for (int j = 0; j < 2; ++j) {
      const double expect = dot(apply(wp, k[static_cast<std::size_t>(n)]), apply(wq, k[static_cast<std::size_t>(j)]));
      CHECK(aff.S[n * 2 + j] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("two-frame 2x2 affinity and attention match per-position oracles") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Case c = random_case(seed, 2, 2, 2, 3, 4);
    const auto aff = compute_affinity(c.keys, projection(c.wp), projection(c.wq));
    REQUIRE(aff.S.shape() == Shape{8, 8});
    const TensorD s_ref = oracle::affinity(c.keys, c.wp, c.wq);
    CHECK(max_abs_diff(aff.S, s_ref) < 1e-6);
    CHECK(max_abs_diff(aff.S_r, oracle::softmax_columns(s_ref)) < 1e-6);

    for (std::int64_t col = 0; col < 8; ++col) {
      double total = 0;
      for (std::int64_t row = 0; row < 8; ++row) {
        const double v = aff.S_r[row * 8 + col];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }

    const auto z = attend_values(ptrs(c.values), aff);
    const auto z_ref = oracle::attend(c.values, oracle::softmax_columns(s_ref));
    REQUIRE(z.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) CHECK(max_abs_diff(z[i], z_ref[i]) < 1e-6);
  }
}

TEST_CASE("materialized W = P Q^T gives the same affinity") {
  const Case c = random_case(42, 3, 2, 3, 5, 2);
  const auto aff = compute_affinity(c.keys, projection(c.wp), projection(c.wq));
  std::vector<const TensorD*> kp;
  for (const auto& k : c.keys) kp.push_back(&k.keys);
  const TensorD k_all = concat_positions(kp);
  const TensorD w = matmul(transpose(c.wp), c.wq);
  const TensorD s = matmul(transpose(k_all), matmul(w, k_all));
  CHECK(max_abs_diff(aff.S, s) < 1e-5);
}

TEST_CASE("attention output is a convex combination of values") {
  const Case c = random_case(7, 3, 2, 2, 4, 3);
  const auto aff = compute_affinity(c.keys, projection(c.wp), projection(c.wq));
  const auto z = attend_values(ptrs(c.values), aff);
  for (std::int64_t ch = 0; ch < 3; ++ch) {
    double lo = 1e9, hi = -1e9;
    for (const auto& v : c.values)
      for (std::int64_t p = 0; p < 4; ++p) {
        lo = std::min(lo, v.plane(0, ch)[p]);
        hi = std::max(hi, v.plane(0, ch)[p]);
      }
    for (const auto& zi : z)
      for (std::int64_t p = 0; p < 4; ++p) {
        CHECK(zi.plane(0, ch)[p] >= lo - 1e-12);
        CHECK(zi.plane(0, ch)[p] <= hi + 1e-12);
      }
  }

  std::vector<TensorD> constant(3, TensorD({1, 3, 2, 2}, 1.75));
  for (const auto& zi : attend_values(ptrs(constant), aff)) {
    for (double v : zi.values()) CHECK(v == doctest::Approx(1.75));
  }
}

TEST_CASE("identity attention returns each frame's own values") {
  const Case c = random_case(9, 2, 2, 2, 2, 3);
  AffinityMatrix<double> aff;
  aff.frames = 2;
  aff.height = aff.width = 2;
  aff.positions_per_frame = 4;
  aff.S_r = TensorD({8, 8});
  for (std::int64_t i = 0; i < 8; ++i) aff.S_r[i * 8 + i] = 1.0;
  const auto z = attend_values(ptrs(c.values), aff);
  CHECK(z[0] == c.values[0]);
  CHECK(z[1] == c.values[1]);
  CHECK_THROWS_AS(attend_values(std::vector<const TensorD*>{&c.values[0]}, aff), ShapeError);
}

TEST_CASE("identical keys give uniform attention") {
  std::vector<KeyMap<double>> keys(2, KeyMap<double>{TensorD({1, 2, 2, 2})});
  for (auto& k : keys) k.keys.plane(0, 0)[0] = 1.0;  // one-hot spatial pattern
  TensorD eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const auto aff = compute_affinity(keys, projection(eye), projection(eye));
  // S is 1 exactly on (active, active) pairs: positions 0 and 4
  for (std::int64_t a = 0; a < 8; ++a)
    for (std::int64_t b = 0; b < 8; ++b) {
      const bool active = (a % 4 == 0) && (b % 4 == 0);
      CHECK(aff.S[a * 8 + b] == (active ? 1.0 : 0.0));
    }
  // the two active columns weight the identical active keys equally
  CHECK(aff.S_r[0 * 8 + 0] == doctest::Approx(aff.S_r[4 * 8 + 0]));
  CHECK(aff.S_r[0 * 8 + 4] == doctest::Approx(aff.S_r[4 * 8 + 4]));
}

TEST_CASE("permuting neighbor frames permutes affinity blocks and keeps each Z") {
  const Case c = random_case(13, 3, 2, 2, 3, 2);
  const auto aff = compute_affinity(c.keys, projection(c.wp), projection(c.wq));
  const auto z = attend_values(ptrs(c.values), aff);

  const std::vector<std::size_t> perm{2, 1, 0};
  Case p;
  for (std::size_t i : perm) {
    p.keys.push_back(c.keys[i]);
    p.values.push_back(c.values[i]);
  }
  const auto aff_p = compute_affinity(p.keys, projection(c.wp), projection(c.wq));
  const auto z_p = attend_values(ptrs(p.values), aff_p);
  const std::int64_t n = 4, t = 12;
  for (std::int64_t a = 0; a < t; ++a)
    for (std::int64_t b = 0; b < t; ++b) {
      const std::int64_t ao = static_cast<std::int64_t>(perm[static_cast<std::size_t>(a / n)]) * n + a % n;
      const std::int64_t bo = static_cast<std::int64_t>(perm[static_cast<std::size_t>(b / n)]) * n + b % n;
      CHECK(aff_p.S[a * t + b] == doctest::Approx(aff.S[ao * t + bo]).epsilon(1e-12));
    }
  for (std::size_t i = 0; i < 3; ++i) CHECK(max_abs_diff(z_p[i], z[perm[i]]) < 1e-12);
}

TEST_CASE("ACM module shapes and key encoder contract") {
  Acm<float> acm(AcmConfig{64, 64});
  Rng rng(1);
  acm.init(rng);
  const TensorF v5 = random_tensor<float>({1, 64, 2, 2}, rng);
  const auto keys = acm.encode_keys(v5);
  CHECK(keys.keys.shape() == Shape{1, 64, 2, 2});
  CHECK_THROWS_AS(acm.encode_keys(TensorF({1, 32, 2, 2})), ShapeError);

  Acm<float> zero(AcmConfig{64, 64});
  const auto zk = zero.encode_keys(TensorF({1, 64, 2, 2}));
  for (float v : zk.keys.values()) CHECK(v == 0.0f);

  const auto z = acm.forward({&v5, &v5, &v5});
  REQUIRE(z.size() == 3);
  for (const auto& zi : z) CHECK(zi.shape() == v5.shape());
  CHECK_THROWS_AS(compute_affinity(std::vector<KeyMap<float>>{keys, KeyMap<float>{TensorF({1, 64, 1, 2})}},
                                   acm.proj_p().params(), acm.proj_q().params()),
                  ShapeError);
}
