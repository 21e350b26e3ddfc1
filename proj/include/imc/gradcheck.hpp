#pragma once

#include <functional>
#include <string>
#include <vector>

#include "imc/tensor.hpp"

namespace imc {

/// A scalar objective over a list of float64 variables with its analytic
/// gradient. Operations are wrapped as sum(r * op(vars)) for a fixed random r.
struct GradProblem {
  std::vector<std::string> names;
  std::vector<TensorD> vars;
  std::function<double(const std::vector<TensorD>&)> objective;
  std::function<std::vector<TensorD>(const std::vector<TensorD>&)> gradient;
  /// Coordinates sampled per variable (all when the variable is smaller).
  std::size_t coords_per_var = 24;
};

struct GradCase {
  std::string name;
  std::function<GradProblem(std::uint64_t seed)> build;
};

/// Every registered differentiable operation and composite.
const std::vector<GradCase>& gradcheck_registry();
const GradCase& find_gradcase(const std::string& name);

/// Whole network at tiny widths (64x64 input, three frames) under the deeply
/// supervised loss. Not registered: its smallest parameter gradients sit
/// below what per-coordinate differences resolve, so tests probe it along
/// random directions instead.
GradProblem imcnet_problem(std::uint64_t seed);

struct GradCheckOptions {
  int seeds = 20;
  double tolerance = 1e-5;
  double step = 1e-5;
  double richardson_step = 1e-3;
  std::uint64_t first_seed = 1;
};

struct GradCheckReport {
  std::string name;
  int seeds = 0;
  std::size_t coords = 0;
  std::size_t refined = 0;   // extra estimates beyond the first central difference
  double max_rel_error = 0;
  std::string worst;          // "var[index] seed N"
  double seconds = 0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Central differences at steps h, h/10, h/100, then a Richardson estimate
/// (4 D(H/2) - D(H)) / 3 at H and H/10, keeping the smallest error.
/// Small steps avoid kinks; the extrapolated estimate covers gradients too
/// small for plain differences to resolve above the objective's round-off.
GradCheckReport run_gradcheck(const GradCase& c, const GradCheckOptions& options = {});

}  // namespace imc
