#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imc/config.hpp"
#include "imc/layers.hpp"

namespace imc {

/// One video: frames (1,3,H,W) in [0,1] and binary masks (1,1,H,W). Either
/// held in memory or indexed by file and read on access. The mask list may be
/// empty for inference-only sequences.
class Sequence {
 public:
  Sequence() = default;
  Sequence(std::string id, std::vector<TensorF> frames, std::vector<TensorF> masks);
  static Sequence from_files(std::string id, std::vector<std::filesystem::path> frames,
                             std::vector<std::filesystem::path> masks);

  const std::string& id() const { return id_; }
  std::size_t size() const;
  bool has_masks() const { return !masks_.empty() || !mask_files_.empty(); }
  TensorF frame(std::size_t i) const;
  TensorF mask(std::size_t i) const;
  const std::vector<std::filesystem::path>& frame_files() const { return frame_files_; }

 private:
  std::string id_;
  std::vector<TensorF> frames_, masks_;
  std::vector<std::filesystem::path> frame_files_, mask_files_;
};

struct ClipSample {
  std::vector<TensorF> frames;  // 2N+1, temporal order
  std::vector<TensorF> masks;  // empty for unlabeled sequences
  std::vector<std::size_t> indices;
  int center = 0;  // t, in sequence frames
  int step = 4;    // delta t
  std::string source;
};

/// Frames t-N*dt .. t+N*dt with indices clamped to the sequence.
ClipSample sample_clip(const Sequence& seq, int t, int n = 1, int delta_t = 4);

/// Clamped frame indices of a clip, without loading anything.
std::vector<std::size_t> clip_indices(std::size_t length, int t, int n, int delta_t);

struct VideoSet {
  std::vector<Sequence> sequences;
  std::size_t size() const { return sequences.size(); }
};

struct ImageItem {
  std::filesystem::path image, mask;
};
struct ImageSet {
  std::vector<ImageItem> items;
  std::size_t size() const { return items.size(); }
};

/// `<root>/JPEGImages/<seq>/NNNNN.{png,jpg}` with `<root>/Annotations/<seq>/NNNNN.png`.
VideoSet load_video_dataset(const std::filesystem::path& root);
/// `<root>/images/*` with `<root>/masks/<stem>.png`.
ImageSet load_image_dataset(const std::filesystem::path& root);

/// Single image as a static clip of 2N+1 identical frames.
ClipSample replicate_image(const TensorF& image, const TensorF& mask, int n, const std::string& source = "image");

/// Moving squares/disks over textured noise, with static distractors.
VideoSet generate_synthetic(const SynthConfig& config);

/// Writes a VideoSet in the DAVIS layout.
void write_video_dataset(const VideoSet& set, const std::filesystem::path& root);

/// Analytic description of a synthetic object, exposed for tests.
struct ShapeTrack {
  bool disk = false;
  double radius = 0;  // half side for squares
  double x0 = 0, y0 = 0;
  double vx = 0, vy = 0;          // px/frame (constant motion)
  double amp_x = 0, amp_y = 0;    // sinusoidal motion amplitude
  double omega = 0;               // rad/frame; 0 means constant velocity
  bool moving = true;

  std::pair<double, double> center(int frame) const;
  double area() const;
  /// Pixel (x, y) is covered when its center lies inside the shape.
  bool covers(double px, double py, int frame) const;
};

/// Tracks used for sequence `index` of `config` (generation is per-sequence seeded).
std::vector<ShapeTrack> synthetic_tracks(const SynthConfig& config, int index);

// Joint schedule

enum class BatchKind { Video, Image };
struct BatchRef {
  BatchKind kind = BatchKind::Video;
  std::vector<std::size_t> indices;
};
struct JointSchedule {
  int batch_size = 1;
  std::int64_t r = 0;
  std::vector<BatchRef> plan;
};

/// floor(nv / (floor(ni / nb) * nb)).
std::int64_t schedule_ratio(std::size_t videos, std::size_t images, int batch_size);

/// One epoch over the video set: one image batch after every r video
/// batches (strict alternation when r is 0). Sampling within each set is a
/// seeded permutation; image batches cycle with a fresh permutation when exhausted.
JointSchedule build_schedule(std::size_t videos, std::size_t images, int batch_size, std::uint64_t seed);

// Augmentation

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  double angle_deg = 0.0;  // |angle| <= 15
};

AugmentParams sample_augment(Rng& rng);
/// Same geometric transform on every frame and mask; masks are resampled
/// bilinearly and thresholded at 0.5.
void augment_clip(ClipSample& clip, const AugmentParams& params);
TensorF augment_image(const TensorF& image, const AugmentParams& params);
TensorF augment_mask(const TensorF& mask, const AugmentParams& params);

/// Network input: frame shifted to zero mean range [-0.5, 0.5].
TensorF normalize_frame(const TensorF& frame);

}  // namespace imc
