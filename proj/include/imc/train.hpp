#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "imc/config.hpp"
#include "imc/data.hpp"
#include "imc/model.hpp"

namespace imc {

/// Worker threads from IMC_THREADS (default 1, at least 1).
int thread_count_from_env();

/// Model built from the config and initialized from `seed`.
Imcnet<float> make_model(const ModelConfig& config, std::uint64_t seed);

/// Probability map per frame of `seq` at its native resolution. Each frame is
/// the center of a clamped clip; frames are resized to the model input size.
std::vector<TensorF> infer_sequence(const Imcnet<float>& model, const Sequence& seq);

/// Mean over sequences of the per-sequence mean J (masks thresholded at 0.5).
double mean_region_j(const Imcnet<float>& model, const VideoSet& set);

/// Video set named by the config: the DAVIS-layout root, or the synthetic generator.
VideoSet training_videos(const RunConfig& config);

struct TrainOptions {
  bool write_outputs = true;       // checkpoints, loss log, config copy under output_dir
  std::ostream* progress = nullptr;
  int threads = 1;
};

struct TrainResult {
  int iterations = 0;
  double train_j = -1;  // last train-set evaluation, -1 when none ran
  std::vector<double> losses;  // batch-mean total loss per iteration
  std::filesystem::path checkpoint;
};

/// Adam over per-clip deeply supervised losses averaged across the batch.
/// Deterministic for a fixed seed and thread count.
TrainResult train(const RunConfig& config, Imcnet<float>& model, const TrainOptions& options = {});

}  // namespace imc
