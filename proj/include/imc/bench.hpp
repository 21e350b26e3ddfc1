#pragma once

#include <string>
#include <vector>

#include <cstdint>

namespace imc {

struct BenchRow {
  std::string kernel;
  std::int64_t size = 0;      // spatial side
  std::int64_t elements = 0;  // output elements per call
  int runs = 0;
  double median_ns = 0;
  double ns_per_element = 0;
};

/// Kernels: conv2d, deformable_conv, bilinear_sample (16 channels, 3x3).
const std::vector<std::string>& bench_kernels();

/// Median wall time of `runs` (>= 5) timed calls after one warm-up.
BenchRow run_bench(const std::string& kernel, std::int64_t size, int runs = 7);

}  // namespace imc
