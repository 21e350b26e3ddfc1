#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imc/tensor.hpp"

namespace imc {

/// Row-major binary mask.
struct BinaryMask {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::int64_t height, std::int64_t width) : h(height), w(width), bits(static_cast<std::size_t>(h * w), 0) {}
  /// Thresholds a (1,1,H,W) map at 0.5.
  static BinaryMask from_tensor(const TensorF& t);

  std::uint8_t operator()(std::int64_t y, std::int64_t x) const { return bits[static_cast<std::size_t>(y * w + x)]; }
  std::uint8_t& operator()(std::int64_t y, std::int64_t x) { return bits[static_cast<std::size_t>(y * w + x)]; }
  std::int64_t count() const;
};

/// |pred & gt| / |pred | gt|; 1 when both are empty.
double region_j(const BinaryMask& pred, const BinaryMask& gt);

/// Foreground pixels with a 4-neighbor in the background. Pixels outside the
/// image do not count as background.
BinaryMask mask_boundary(const BinaryMask& m);

/// Dilation radius used by boundary_f when none is given: ceil(0.008 * diagonal).
int default_boundary_tolerance(std::int64_t h, std::int64_t w);

/// Boundary F-measure with disk-dilation matching of radius `tolerance`
/// (negative selects the default). 1 when both boundaries are empty.
double boundary_f(const BinaryMask& pred, const BinaryMask& gt, int tolerance = -1);

struct MetricStats {
  double mean = 0;
  double recall = 0;  // fraction of frames scoring > 0.5
  double decay = 0;   // mean(first quartile) - mean(last quartile)
};

/// Quartiles split like numpy.array_split(scores, 4); decay is 0 below 4 frames.
MetricStats summarize(const std::vector<double>& scores);

struct SequenceScore {
  std::string name;
  std::vector<double> j, f;
  MetricStats j_stats, f_stats;
  double jf_mean = 0;
};

struct DatasetScore {
  std::vector<SequenceScore> sequences;
  MetricStats j, f;  // means over sequences
  double jf_mean = 0;
};

SequenceScore aggregate_sequence(std::string name, std::vector<double> j, std::vector<double> f);
DatasetScore aggregate(std::vector<SequenceScore> sequences);

/// Scores prediction masks against ground truth. Either directory holds
/// frames directly (one sequence) or one sub-directory per sequence; both
/// must contain the same sequences and frame names.
DatasetScore evaluate_dirs(const std::filesystem::path& pred, const std::filesystem::path& gt);

/// One JSON object per sequence followed by a dataset record.
std::string to_jsonl(const DatasetScore& score);
std::string to_csv(const DatasetScore& score);

}  // namespace imc
