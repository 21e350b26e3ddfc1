#include <doctest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "imc/eval.hpp"
#include "imc/image_io.hpp"
#include "oracles.hpp"
#include "json.hpp"

using namespace imc;
using imc::test::TempDir;

namespace {

BinaryMask square(std::int64_t size, std::int64_t x0, std::int64_t y0, std::int64_t side) {
  BinaryMask m(size, size);
  for (std::int64_t y = y0; y < y0 + side; ++y)
    for (std::int64_t x = x0; x < x0 + side; ++x) m(y, x) = 1;
  return m;
}

void write_binary(const std::filesystem::path& path, const BinaryMask& m) {
  TensorF t({1, 1, m.h, m.w});
  for (std::size_t i = 0; i < m.bits.size(); ++i) t[static_cast<std::int64_t>(i)] = m.bits[i];
  write_mask(path, t);
}

}  // namespace

TEST_CASE("region similarity") {
  // 4x4 squares shifted by 2 px: overlap 8, union 24
  CHECK(region_j(square(16, 2, 2, 4), square(16, 4, 2, 4)) == doctest::Approx(8.0 / 24.0));
  CHECK(region_j(BinaryMask(5, 5), BinaryMask(5, 5)) == 1.0);
  CHECK(region_j(square(8, 0, 0, 2), BinaryMask(8, 8)) == 0.0);
  CHECK_THROWS_AS(region_j(BinaryMask(4, 4), BinaryMask(4, 5)), ShapeError);
}

TEST_CASE("J and F agree with set-based oracles on random masks") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    BinaryMask p(16, 16), g(16, 16);
    const double density = rng.uniform(0.1, 0.9);
    for (auto& b : p.bits) b = rng.uniform() < density ? 1 : 0;
    for (auto& b : g.bits) b = rng.uniform() < density ? 1 : 0;
    CHECK(std::abs(region_j(p, g) - oracle::region_j(p, g)) < 1e-12);
    const int r = trial % 3;
    CHECK(std::abs(boundary_f(p, g, r) - oracle::boundary_f(p, g, r)) < 1e-9);
    CHECK(boundary_f(p, g, r) == doctest::Approx(boundary_f(g, p, r)));
    CHECK(region_j(p, g) == doctest::Approx(region_j(g, p)));
  }
}

TEST_CASE("boundary measure on squares") {
  const auto a = square(16, 2, 2, 6);
  CHECK(mask_boundary(a).count() == 20);
  CHECK(boundary_f(a, square(16, 3, 2, 6), 1) == doctest::Approx(1.0));
  CHECK(boundary_f(a, square(16, 3, 2, 6), 0) < 1.0);
  CHECK(boundary_f(a, a, 0) == 1.0);
  CHECK(boundary_f(BinaryMask(8, 8), BinaryMask(8, 8)) == 1.0);
  CHECK(boundary_f(square(8, 1, 1, 3), BinaryMask(8, 8)) == 0.0);
  // foreground touching the image edge has no boundary there
  BinaryMask full(6, 6);
  for (auto& b : full.bits) b = 1;
  CHECK(mask_boundary(full).count() == 0);
  CHECK(default_boundary_tolerance(480, 854) == 8);
}

TEST_CASE("summary statistics") {
  const auto s = summarize({1.0, 1.0, 0.0, 0.0});
  CHECK(s.recall == 0.5);
  CHECK(s.mean == 0.5);
  CHECK(s.decay == 1.0);

  // ten frames split into quartiles of 3, 3, 2, 2
  std::vector<double> ramp;
  for (int i = 0; i < 10; ++i) ramp.push_back(1.0 - 0.1 * i);
  const auto r = summarize(ramp);
  CHECK(r.decay == doctest::Approx((1.0 + 0.9 + 0.8) / 3 - (0.1 + 0.2) / 2));
  CHECK(r.recall == doctest::Approx(0.5));

  CHECK(summarize(std::vector<double>(7, 0.6)).decay == 0.0);
  CHECK(summarize({0.9, 0.1}).decay == 0.0);
  CHECK_THROWS_AS(summarize({}), DataError);
}

TEST_CASE("directory evaluation and reports") {
  TempDir gt("gt"), pred("pred");
  for (const char* seq : {"alpha", "beta"}) {
    std::filesystem::create_directories(gt / seq);
    std::filesystem::create_directories(pred / seq);
    for (int f = 0; f < 4; ++f) {
      const std::string name = "0000" + std::to_string(f) + ".png";
      write_binary(gt / seq / name, square(32, 4 + f, 6, 10));
      write_binary(pred / seq / name, square(32, 4 + f, 6, 10));
    }
  }
  const auto same = evaluate_dirs(pred.path(), gt.path());
  REQUIRE(same.sequences.size() == 2);
  CHECK(same.j.mean == 1.0);
  CHECK(same.f.mean == 1.0);
  CHECK(same.jf_mean == 1.0);
  CHECK(same.sequences[0].name == "alpha");

  write_binary(pred / "beta" / "00002.png", BinaryMask(32, 32));
  const auto diff = evaluate_dirs(pred.path(), gt.path());
  CHECK(diff.sequences[1].j[2] == 0.0);
  CHECK(diff.sequences[1].j_stats.mean == doctest::Approx(0.75));
  CHECK(diff.j.mean == doctest::Approx((1.0 + 0.75) / 2));

  std::istringstream lines(to_jsonl(diff));
  std::string line;
  int count = 0;
  nlohmann::json last;
  while (std::getline(lines, line)) {
    last = nlohmann::json::parse(line);
    ++count;
  }
  CHECK(count == 3);
  CHECK(last["sequence"] == "__dataset__");
  CHECK(last["J"]["mean"].get<double>() == doctest::Approx(0.875));

  const std::string csv = to_csv(diff);
  CHECK(csv.rfind("sequence,frames,J_mean", 0) == 0);
  CHECK(csv.find("__dataset__,8,") != std::string::npos);

  std::filesystem::remove(pred / "alpha" / "00003.png");
  CHECK_THROWS_AS(evaluate_dirs(pred.path(), gt.path()), DataError);
  std::filesystem::remove_all(pred / "alpha");
  CHECK_THROWS_AS(evaluate_dirs(pred.path(), gt.path()), DataError);
  CHECK_THROWS_AS(evaluate_dirs(pred / "missing", gt.path()), IoError);
}
