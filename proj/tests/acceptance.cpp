// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "helpers.hpp"
#include "imc/bench.hpp"
#include "imc/deform_conv.hpp"
#include "imc/gradcheck.hpp"
#include "imc/image_io.hpp"
#include "imc/losses.hpp"
#include "imc/ops.hpp"
#include "imc/train.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace imc;
using imc::test::random_tensor;

namespace {

constexpr double kGradTolerance = 1e-5;
constexpr double kGradBudgetSeconds = 300;
constexpr double kDcnTolerance = 1e-6;
constexpr double kDcnBudgetSeconds = 10;
constexpr double kAcmTolerance = 1e-6;
constexpr double kBceTolerance = 1e-6;
constexpr double kSsimSelfMax = 1e-6;
constexpr double kIouTolerance = 1e-4;
constexpr double kBoundaryTolerance = 1e-9;
constexpr double kOverfitJ = 0.90;
constexpr double kBenchRatio = 50;
constexpr int kDeterminismIterations = 25;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  GradCheckOptions opts;
  opts.seeds = 20;
  opts.tolerance = kGradTolerance;
  bool ok = true;
  double worst = 0;
  std::string worst_case, failed;
  for (const auto& c : gradcheck_registry()) {
    const auto r = run_gradcheck(c, opts);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_case = r.name;
    }
    if (!r.passed) {
      ok = false;
      failed += " " + r.name + "(" + r.worst + ")";
    }
  }
  const double secs = seconds_since(start);
  std::ostringstream os;
  os << gradcheck_registry().size() << " ops x 20 seeds, worst " << fmt("%.3e", worst) << " (" << worst_case << "), "
     << fmt("%.1f", secs) << " s";
  if (!failed.empty()) os << "; failed:" << failed;
  return {ok && secs < kGradBudgetSeconds, os.str()};
}

Outcome zero_offset() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t cin = 1 + rng.below(8), cout = 1 + rng.below(8);
    const std::int64_t h = 3 + rng.below(14), w = 3 + rng.below(14);
    const auto x = random_tensor<double>({1, cin, h, w}, rng);
    ConvParams<double> p;
    p.weights = random_tensor<double>({cout, cin, 3, 3}, rng);
    p.padding = 1;
    worst = std::max(worst, max_abs_diff(deformable_conv(x, OffsetField<double>::zeros(h, w), p.weights), conv2d(x, p)));
  }
  const double secs = seconds_since(start);
  return {worst < kDcnTolerance && secs < kDcnBudgetSeconds,
          "50 cases, max abs diff " + fmt("%.3e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome acm_oracle() {
  double worst = 0, worst_sum = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    std::vector<KeyMap<double>> keys;
    std::vector<TensorD> values;
    for (int f = 0; f < 2; ++f) {
      keys.push_back({random_tensor<double>({1, 4, 2, 2}, rng)});
      values.push_back(random_tensor<double>({1, 3, 2, 2}, rng));
    }
    const auto wp = random_tensor<double>({4, 4}, rng), wq = random_tensor<double>({4, 4}, rng);
    ConvParams<double> pp, pq;
    pp.weights = wp.reshaped({4, 4, 1, 1});
    pq.weights = wq.reshaped({4, 4, 1, 1});
    const auto aff = compute_affinity(keys, pp, pq);
    const TensorD s_ref = oracle::affinity(keys, wp, wq);
    worst = std::max({worst, max_abs_diff(aff.S, s_ref), max_abs_diff(aff.S_r, oracle::softmax_columns(s_ref))});
    const auto z = attend_values({&values[0], &values[1]}, aff);
    const auto z_ref = oracle::attend(values, aff.S_r);
    for (std::size_t i = 0; i < 2; ++i) worst = std::max(worst, max_abs_diff(z[i], z_ref[i]));
    const std::int64_t t = aff.S_r.dim(0);
    for (std::int64_t col = 0; col < t; ++col) {
      double total = 0;
      for (std::int64_t row = 0; row < t; ++row) total += aff.S_r[row * t + col];
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    }
  }
  return {worst < kAcmTolerance && worst_sum < kAcmTolerance,
          "20 cases, max diff " + fmt("%.3e", worst) + ", column-sum error " + fmt("%.3e", worst_sum)};
}

Outcome loss_anchors() {
  Rng rng(1);
  TensorD gt({1, 1, 16, 16});
  for (auto& v : gt.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  const double bce = bce_loss(TensorD({1, 1, 16, 16}, 0.5), gt);
  const auto x = random_tensor<double>({1, 1, 16, 16}, rng, 0, 1);
  const double ssim = ssim_loss(x, x);
  // two 4x4 squares overlapping in half their area: |A n B| = 8, |A u B| = 24
  TensorD a({1, 1, 16, 16}), b({1, 1, 16, 16});
  std::int64_t inter = 0, uni = 0;
  for (std::int64_t y = 0; y < 16; ++y)
    for (std::int64_t xx = 0; xx < 16; ++xx) {
      const bool in_a = y >= 2 && y < 6 && xx >= 2 && xx < 6, in_b = y >= 2 && y < 6 && xx >= 4 && xx < 8;
      a.at(0, 0, y, xx) = in_a;
      b.at(0, 0, y, xx) = in_b;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  const double iou_ref = 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
  const double iou = iou_loss(a, b);
  const bool ok = std::abs(bce - std::log(2.0)) < kBceTolerance && ssim <= kSsimSelfMax &&
                  std::abs(iou - 2.0 / 3.0) < kIouTolerance && std::abs(iou_ref - 2.0 / 3.0) < 1e-12;
  return {ok, "bce " + fmt("%.9f", bce) + " (ln 2 = " + fmt("%.9f", std::log(2.0)) + "), ssim(x,x) " +
                  fmt("%.2e", ssim) + ", iou " + fmt("%.6f", iou)};
}

bool window_property(const JointSchedule& s) {
  const std::size_t window = static_cast<std::size_t>(std::max<std::int64_t>(s.r, 1) + 1);
  if (s.plan.size() < window) return false;
  for (std::size_t i = 0; i + window <= s.plan.size(); ++i) {
    int images = 0;
    for (std::size_t k = i; k < i + window; ++k) images += s.plan[k].kind == BatchKind::Image;
    if (images != 1) return false;
  }
  return true;
}

Outcome scheduler() {
  const auto r1 = schedule_ratio(100, 24, 8), r2 = schedule_ratio(24, 24, 8);
  bool windows = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    windows = windows && window_property(build_schedule(100, 24, 8, seed)) &&
              window_property(build_schedule(24, 24, 8, seed)) && window_property(build_schedule(400, 30, 6, seed));
  }
  return {r1 == 4 && r2 == 1 && windows, "(100,24,8) -> " + std::to_string(r1) + ", (24,24,8) -> " +
                                             std::to_string(r2) + ", window property " + (windows ? "holds" : "violated")};
}

Outcome metric_oracles() {
  Rng rng(17);
  int j_exact = 0;
  double f_worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    BinaryMask p(16, 16), g(16, 16);
    const double density = rng.uniform(0.1, 0.9);
    for (auto& v : p.bits) v = rng.uniform() < density ? 1 : 0;
    for (auto& v : g.bits) v = rng.uniform() < density ? 1 : 0;
    j_exact += region_j(p, g) == oracle::region_j(p, g);
    const int r = default_boundary_tolerance(16, 16);
    f_worst = std::max(f_worst, std::abs(boundary_f(p, g) - oracle::boundary_f(p, g, r)));
  }

  imc::test::TempDir dir("accept_metrics");
  SynthConfig cfg;
  cfg.count = 2;
  cfg.frames = 4;
  write_video_dataset(generate_synthetic(cfg), dir.path());
  const auto same = evaluate_dirs(dir / "Annotations", dir / "Annotations");
  const bool ones = same.j.mean == 1.0 && same.f.mean == 1.0;
  return {j_exact == 200 && f_worst < kBoundaryTolerance && ones,
          std::to_string(j_exact) + "/200 J exact, F max diff " + fmt("%.1e", f_worst) + ", identical dirs J " +
              fmt("%.3f", same.j.mean) + " F " + fmt("%.3f", same.f.mean)};
}

struct OverfitRun {
  double j = -1;
  double seconds = 0;
  int iterations = 0;
};

OverfitRun overfit(RunConfig cfg, int depth, const fs::path& out) {
  cfg.model.cascade_depth = depth;
  cfg.output_dir = out.string();
  const auto start = std::chrono::steady_clock::now();
  auto model = make_model(cfg.model, cfg.train.seed);
  TrainOptions opts;
  opts.progress = &std::cerr;
  const auto res = train(cfg, model, opts);
  OverfitRun run;
  run.j = mean_region_j(model, training_videos(cfg));
  run.seconds = seconds_since(start);
  run.iterations = res.iterations;
  return run;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism(RunConfig cfg, const fs::path& work) {
  cfg.train.iterations = kDeterminismIterations;
  cfg.train.eval_every = 0;
  cfg.train.checkpoint_every = 0;
  std::vector<std::string> ckpts, masks;
  for (int run = 0; run < 2; ++run) {
    cfg.output_dir = (work / ("determinism" + std::to_string(run))).string();
    auto model = make_model(cfg.model, cfg.train.seed);
    const auto res = train(cfg, model, {});
    ckpts.push_back(read_bytes(res.checkpoint));
    std::string bytes;
    const VideoSet videos = training_videos(cfg);
    for (const auto& seq : videos.sequences) {
      const auto probs = infer_sequence(model, seq);
      for (std::size_t t = 0; t < probs.size(); ++t) {
        const fs::path png = fs::path(cfg.output_dir) / "masks" / seq.id() / (std::to_string(t) + ".png");
        fs::create_directories(png.parent_path());
        write_mask(png, probs[t]);
        bytes += read_bytes(png);
        bytes.append(reinterpret_cast<const char*>(probs[t].data()), static_cast<std::size_t>(probs[t].numel()) * sizeof(float));
      }
    }
    masks.push_back(std::move(bytes));
  }
  const bool same_ckpt = ckpts[0] == ckpts[1], same_masks = masks[0] == masks[1];
  return {same_ckpt && same_masks, std::to_string(kDeterminismIterations) + " iterations x 2 runs, checkpoints " +
                                       (same_ckpt ? "identical" : "differ") + ", masks " +
                                       (same_masks ? "identical" : "differ")};
}

Outcome bench() {
  double worst = 0;
  std::ostringstream os;
  for (std::int64_t size : {32, 64}) {
    const auto conv = run_bench("conv2d", size, 7);
    const auto dcn = run_bench("deformable_conv", size, 7);
    const double ratio = dcn.ns_per_element / conv.ns_per_element;
    worst = std::max(worst, ratio);
    os << size << "px " << fmt("%.1f", ratio) << "x  ";
  }
  return {worst < kBenchRatio, "deformable_conv / conv2d ns per element: " + os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMCNet acceptance checks"};
  std::string config = std::string(IMC_SOURCE_DIR) + "/configs/overfit.conf";
  std::string work;
  bool skip_training = false;
  app.add_option("--config", config, "overfit run config");
  app.add_option("--work", work, "directory for run artifacts (default: a fresh temp dir)");
  app.add_flag("--skip-training", skip_training, "skip the overfit, cascade-depth and determinism runs");
  CLI11_PARSE(app, argc, argv);

  std::unique_ptr<imc::test::TempDir> temp;
  if (work.empty()) {
    temp = std::make_unique<imc::test::TempDir>("acceptance");
    work = temp->path().string();
  }
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  };

  report("gradient suite", gradient_suite);
  report("zero-offset degeneracy", zero_offset);
  report("ACM oracle equivalence", acm_oracle);
  report("loss anchors", loss_anchors);
  report("scheduler arithmetic", scheduler);
  report("metric oracles", metric_oracles);

  if (skip_training) {
    std::printf("SKIP overfit, cascade-depth report, determinism\n");
  } else {
    const RunConfig cfg = RunConfig::load(config);
    OverfitRun deep;
    report("overfit", [&] {
      deep = overfit(cfg, cfg.model.cascade_depth, fs::path(work) / "overfit");
      return Outcome{deep.j >= kOverfitJ, "L=" + std::to_string(cfg.model.cascade_depth) + ", " +
                                              std::to_string(deep.iterations) + " iterations, train mean J " +
                                              fmt("%.4f", deep.j) + " (target " + fmt("%.2f", kOverfitJ) + "), " +
                                              fmt("%.0f", deep.seconds) + " s"};
    });
    report("cascade-depth report", [&] {
      const int other = cfg.model.cascade_depth == 1 ? 4 : 1;
      const OverfitRun shallow = overfit(cfg, other, fs::path(work) / ("overfit_L" + std::to_string(other)));
      const bool ran = deep.j >= 0 && shallow.j >= 0;
      return Outcome{ran, "mean J at L=" + std::to_string(other) + ": " + fmt("%.4f", shallow.j) + ", at L=" +
                              std::to_string(cfg.model.cascade_depth) + ": " + fmt("%.4f", deep.j)};
    });
    report("determinism", [&] { return determinism(cfg, work); });
  }
  report("benchmark sanity", bench);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
