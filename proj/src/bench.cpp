#include "imc/bench.hpp"

#include <algorithm>
#include <chrono>
#include <functional>

#include "imc/deform_conv.hpp"
#include "imc/layers.hpp"

namespace imc {

namespace {

constexpr std::int64_t kBenchChannels = 16;

double median_ns(const std::function<void()>& f, int runs) {
  f();
  std::vector<double> t;
  for (int i = 0; i < runs; ++i) {
    const auto a = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - a).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

// Keeps results observable so the timed work is not optimized away.
volatile float g_sink = 0;

}  // namespace

const std::vector<std::string>& bench_kernels() {
  static const std::vector<std::string> k{"conv2d", "deformable_conv", "bilinear_sample"};
  return k;
}

BenchRow run_bench(const std::string& kernel, std::int64_t size, int runs) {
  if (runs < 5) throw ConfigError("bench needs at least 5 runs");
  if (size < 1) throw ConfigError("bench size must be positive");
  Rng rng(42);
  const std::int64_t c = kBenchChannels;
  TensorF input({1, c, size, size});
  rng.fill_uniform(input, -1, 1);
  BenchRow row;
  row.kernel = kernel;
  row.size = size;
  row.runs = runs;
  row.elements = c * size * size;
  if (kernel == "conv2d") {
    ConvParams<float> p;
    p.weights = TensorF({c, c, 3, 3});
    rng.fill_uniform(p.weights, -0.1, 0.1);
    p.padding = 1;
    row.median_ns = median_ns([&] { g_sink = conv2d(input, p)[0]; }, runs);
  } else if (kernel == "deformable_conv") {
    TensorF w({c, c, 3, 3});
    rng.fill_uniform(w, -0.1, 0.1);
    OffsetField<float> field = OffsetField<float>::zeros(size, size);
    rng.fill_uniform(field.offsets, -1.5, 1.5);
    row.median_ns = median_ns([&] { g_sink = deformable_conv(input, field, w)[0]; }, runs);
  } else if (kernel == "bilinear_sample") {
    std::vector<float> xs(static_cast<std::size_t>(size * size)), ys(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      xs[i] = static_cast<float>(rng.uniform(-0.5, static_cast<double>(size) - 0.5));
      ys[i] = static_cast<float>(rng.uniform(-0.5, static_cast<double>(size) - 0.5));
    }
    row.median_ns = median_ns(
        [&] {
          float acc = 0;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < xs.size(); ++i) acc += bilinear_sample(input, ch, xs[i], ys[i]);
          }
          g_sink = acc;
        },
        runs);
  } else {
    throw ConfigError("unknown bench kernel '" + kernel + "' (conv2d, deformable_conv, bilinear_sample)");
  }
  row.ns_per_element = row.median_ns / static_cast<double>(row.elements);
  return row;
}

}  // namespace imc
