#include "imc/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <opencv2/imgproc.hpp>

#include "imc/image_io.hpp"

namespace imc {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMaxAngle = 15.0;

std::string frame_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu.png", i);
  return buf;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

// Fills (1,3,s,s) with a smooth random grating pattern plus pixel noise.
TensorF textured_background(std::int64_t s, Rng& rng) {
  TensorF bg({1, 3, s, s});
  for (int c = 0; c < 3; ++c) {
    const double base = rng.uniform(0.3, 0.7);
    double fx[3], fy[3], ph[3], amp[3];
    for (int k = 0; k < 3; ++k) {
      fx[k] = rng.uniform(-0.3, 0.3);
      fy[k] = rng.uniform(-0.3, 0.3);
      ph[k] = rng.uniform(0, 2 * kPi);
      amp[k] = rng.uniform(0.03, 0.1);
    }
    for (std::int64_t y = 0; y < s; ++y) {
      for (std::int64_t x = 0; x < s; ++x) {
        double v = base;
        for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(fx[k] * static_cast<double>(x) + fy[k] * static_cast<double>(y) + ph[k]);
        bg.at(0, c, y, x) = static_cast<float>(v);
      }
    }
  }
  return bg;
}

ShapeTrack make_track(const SynthConfig& cfg, Rng& rng, bool moving) {
  ShapeTrack tr;
  tr.disk = cfg.shapes[rng.below(cfg.shapes.size())] == "disk";
  tr.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
  tr.moving = moving;
  const double s = static_cast<double>(cfg.size);
  const double span = static_cast<double>(cfg.frames - 1);
  if (moving && rng.uniform() < cfg.sinusoidal_fraction) {
    tr.omega = rng.uniform(0.3, 0.8);
    const double amp = rng.uniform(cfg.velocity_min, cfg.velocity_max) / tr.omega;
    const double dir = rng.uniform(0, 2 * kPi);
    tr.amp_x = std::min(amp, s / 2 - tr.radius - 1) * std::cos(dir);
    tr.amp_y = std::min(amp, s / 2 - tr.radius - 1) * std::sin(dir);
    const double mx = tr.radius + std::abs(tr.amp_x), my = tr.radius + std::abs(tr.amp_y);
    tr.x0 = rng.uniform(mx, s - mx);
    tr.y0 = rng.uniform(my, s - my);
  } else {
    if (moving) {
      const double speed = rng.uniform(cfg.velocity_min, cfg.velocity_max);
      const double dir = rng.uniform(0, 2 * kPi);
      tr.vx = speed * std::cos(dir);
      tr.vy = speed * std::sin(dir);
    }
    const double dx = tr.vx * span, dy = tr.vy * span;
    tr.x0 = rng.uniform(tr.radius - std::min(0.0, dx), s - tr.radius - std::max(0.0, dx));
    tr.y0 = rng.uniform(tr.radius - std::min(0.0, dy), s - tr.radius - std::max(0.0, dy));
  }
  return tr;
}

Rng sequence_rng(const SynthConfig& cfg, int index) {
  return Rng(cfg.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index) + 1);
}

// Distractors first, then 1..max_objects moving shapes.
std::vector<ShapeTrack> draw_tracks(const SynthConfig& cfg, Rng& rng) {
  const int moving = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_objects)));
  std::vector<ShapeTrack> tracks;
  for (int k = 0; k < cfg.distractors; ++k) tracks.push_back(make_track(cfg, rng, false));
  for (int k = 0; k < moving; ++k) tracks.push_back(make_track(cfg, rng, true));
  return tracks;
}

std::array<float, 3> object_color(const TensorF& bg, Rng& rng) {
  const std::int64_t s = bg.h();
  std::array<float, 3> mean{};
  for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(c)] = bg.at(0, c, s / 2, s / 2);
  for (;;) {
    std::array<float, 3> col{};
    float dist = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      col[c] = static_cast<float>(rng.uniform());
      dist = std::max(dist, std::abs(col[c] - mean[c]));
    }
    if (dist >= 0.3f) return col;
  }
}

// Rotation by `angle` about the image center, isotropic `scale`, optional
// horizontal flip applied first.
std::array<double, 6> augment_matrix(const AugmentParams& p, std::int64_t h, std::int64_t w) {
  const cv::Point2f c(static_cast<float>(w - 1) / 2.0f, static_cast<float>(h - 1) / 2.0f);
  cv::Mat r = cv::getRotationMatrix2D(c, p.angle_deg, p.scale);
  std::array<double, 6> m{};
  for (int i = 0; i < 6; ++i) m[static_cast<std::size_t>(i)] = r.at<double>(i / 3, i % 3);
  if (p.flip) {
    // x -> (w - 1) - x composed on the right.
    const double fw = static_cast<double>(w - 1);
    m[2] += m[0] * fw;
    m[0] = -m[0];
    m[5] += m[3] * fw;
    m[3] = -m[3];
  }
  return m;
}

}  // namespace

Sequence::Sequence(std::string id, std::vector<TensorF> frames, std::vector<TensorF> masks)
    : id_(std::move(id)), frames_(std::move(frames)), masks_(std::move(masks)) {
  if (!masks_.empty() && frames_.size() != masks_.size()) {
    throw DataError("sequence " + id_ + ": frame/mask count mismatch");
  }
}

Sequence Sequence::from_files(std::string id, std::vector<fs::path> frames, std::vector<fs::path> masks) {
  if (!masks.empty() && frames.size() != masks.size()) {
    throw DataError("sequence " + id + ": frame/mask count mismatch");
  }
  Sequence s;
  s.id_ = std::move(id);
  s.frame_files_ = std::move(frames);
  s.mask_files_ = std::move(masks);
  return s;
}

std::size_t Sequence::size() const { return frame_files_.empty() ? frames_.size() : frame_files_.size(); }

TensorF Sequence::frame(std::size_t i) const {
  if (i >= size()) throw DataError("sequence " + id_ + ": frame " + std::to_string(i) + " out of range");
  return frame_files_.empty() ? frames_[i] : read_rgb(frame_files_[i]);
}

TensorF Sequence::mask(std::size_t i) const {
  if (i >= size()) throw DataError("sequence " + id_ + ": mask " + std::to_string(i) + " out of range");
  if (!has_masks()) throw DataError("sequence " + id_ + " has no masks");
  return mask_files_.empty() ? masks_[i] : read_mask(mask_files_[i]);
}

std::vector<std::size_t> clip_indices(std::size_t length, int t, int n, int delta_t) {
  if (length == 0) throw DataError("cannot sample a clip from an empty sequence");
  if (n < 0 || delta_t < 1) throw DataError("clip needs N >= 0 and delta_t >= 1");
  std::vector<std::size_t> out;
  const auto last = static_cast<std::int64_t>(length) - 1;
  for (int k = -n; k <= n; ++k) {
    const std::int64_t i = static_cast<std::int64_t>(t) + static_cast<std::int64_t>(k) * delta_t;
    out.push_back(static_cast<std::size_t>(std::clamp<std::int64_t>(i, 0, last)));
  }
  return out;
}

ClipSample sample_clip(const Sequence& seq, int t, int n, int delta_t) {
  ClipSample clip;
  clip.indices = clip_indices(seq.size(), t, n, delta_t);
  clip.center = t;
  clip.step = delta_t;
  clip.source = seq.id();
  for (std::size_t i : clip.indices) {
    clip.frames.push_back(seq.frame(i));
    if (seq.has_masks()) clip.masks.push_back(seq.mask(i));
  }
  return clip;
}

VideoSet load_video_dataset(const fs::path& root) {
  const fs::path images = root / "JPEGImages", annotations = root / "Annotations";
  if (!fs::is_directory(images)) throw DataError("missing directory " + images.string());
  if (!fs::is_directory(annotations)) throw DataError("missing directory " + annotations.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(images)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  VideoSet set;
  for (const auto& dir : dirs) {
    const std::string id = dir.filename().string();
    std::vector<fs::path> frames = list_images(dir), masks;
    if (frames.empty()) continue;
    for (const auto& f : frames) {
      fs::path m = annotations / id / (f.stem().string() + ".png");
      if (!fs::is_regular_file(m)) throw DataError("missing mask " + m.string() + " for frame " + f.string());
      masks.push_back(std::move(m));
    }
    set.sequences.push_back(Sequence::from_files(id, std::move(frames), std::move(masks)));
  }
  if (set.sequences.empty()) throw DataError("no sequences under " + images.string());
  return set;
}

ImageSet load_image_dataset(const fs::path& root) {
  const fs::path images = root / "images", masks = root / "masks";
  if (!fs::is_directory(images)) throw DataError("missing directory " + images.string());
  ImageSet set;
  for (const auto& f : list_images(images)) {
    fs::path m = masks / (f.stem().string() + ".png");
    if (!fs::is_regular_file(m)) throw DataError("missing mask " + m.string() + " for image " + f.string());
    set.items.push_back({f, std::move(m)});
  }
  if (set.items.empty()) throw DataError("no images under " + images.string());
  return set;
}

ClipSample replicate_image(const TensorF& image, const TensorF& mask, int n, const std::string& source) {
  ClipSample clip;
  clip.source = source;
  clip.step = 0;
  clip.center = 0;
  for (int k = 0; k < 2 * n + 1; ++k) {
    clip.frames.push_back(image);
    clip.masks.push_back(mask);
    clip.indices.push_back(0);
  }
  return clip;
}

std::pair<double, double> ShapeTrack::center(int frame) const {
  const double t = frame;
  if (omega != 0) return {x0 + amp_x * std::sin(omega * t), y0 + amp_y * std::sin(omega * t)};
  return {x0 + vx * t, y0 + vy * t};
}

double ShapeTrack::area() const { return disk ? kPi * radius * radius : 4 * radius * radius; }

bool ShapeTrack::covers(double px, double py, int frame) const {
  const auto [cx, cy] = center(frame);
  const double dx = px - cx, dy = py - cy;
  if (disk) return dx * dx + dy * dy <= radius * radius;
  return std::abs(dx) <= radius && std::abs(dy) <= radius;
}

std::vector<ShapeTrack> synthetic_tracks(const SynthConfig& config, int index) {
  Rng rng = sequence_rng(config, index);
  (void)textured_background(config.size, rng);
  return draw_tracks(config, rng);
}

VideoSet generate_synthetic(const SynthConfig& config) {
  config.validate();
  VideoSet set;
  const std::int64_t s = config.size;
  for (int seq = 0; seq < config.count; ++seq) {
    // Same stream as synthetic_tracks, continued for colors and noise.
    Rng rng = sequence_rng(config, seq);
    const TensorF bg = textured_background(s, rng);
    const std::vector<ShapeTrack> tracks = draw_tracks(config, rng);
    std::vector<std::array<float, 3>> colors;
    for (std::size_t k = 0; k < tracks.size(); ++k) colors.push_back(object_color(bg, rng));

    std::vector<TensorF> frames, masks;
    for (int f = 0; f < config.frames; ++f) {
      TensorF img = bg;
      TensorF mask({1, 1, s, s});
      for (std::int64_t y = 0; y < s; ++y) {
        for (std::int64_t x = 0; x < s; ++x) {
          const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
          for (std::size_t k = 0; k < tracks.size(); ++k) {
            if (!tracks[k].covers(px, py, f)) continue;
            for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = colors[k][static_cast<std::size_t>(c)];
            mask.at(0, 0, y, x) = tracks[k].moving ? 1.0f : 0.0f;
          }
        }
      }
      for (std::int64_t i = 0; i < img.numel(); ++i) {
        img[i] = std::clamp(img[i] + static_cast<float>(rng.uniform(-0.04, 0.04)), 0.0f, 1.0f);
      }
      frames.push_back(std::move(img));
      masks.push_back(std::move(mask));
    }
    char id[32];
    std::snprintf(id, sizeof id, "synth%03d", seq);
    set.sequences.emplace_back(id, std::move(frames), std::move(masks));
  }
  return set;
}

void write_video_dataset(const VideoSet& set, const fs::path& root) {
  for (const auto& seq : set.sequences) {
    const fs::path img_dir = root / "JPEGImages" / seq.id(), ann_dir = root / "Annotations" / seq.id();
    fs::create_directories(img_dir);
    fs::create_directories(ann_dir);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      write_rgb(img_dir / frame_name(i), seq.frame(i));
      write_mask(ann_dir / frame_name(i), seq.mask(i));
    }
  }
}

std::int64_t schedule_ratio(std::size_t videos, std::size_t images, int batch_size) {
  if (batch_size < 1) throw DataError("batch size must be at least 1");
  const auto nb = static_cast<std::size_t>(batch_size);
  if (videos < nb || images < nb) {
    throw DataError("batch size " + std::to_string(batch_size) + " exceeds a dataset (videos " +
                    std::to_string(videos) + ", images " + std::to_string(images) + ")");
  }
  return static_cast<std::int64_t>(videos / ((images / nb) * nb));
}

JointSchedule build_schedule(std::size_t videos, std::size_t images, int batch_size, std::uint64_t seed) {
  JointSchedule s;
  s.batch_size = batch_size;
  s.r = schedule_ratio(videos, images, batch_size);
  const auto nb = static_cast<std::size_t>(batch_size);
  Rng rng(seed);
  const std::vector<std::size_t> vperm = permutation(videos, rng);
  std::vector<std::size_t> iperm;
  std::size_t ipos = 0;
  auto next_image_batch = [&] {
    if (ipos + nb > iperm.size()) {
      iperm = permutation(images, rng);
      ipos = 0;
    }
    BatchRef b{BatchKind::Image, {iperm.begin() + static_cast<std::ptrdiff_t>(ipos),
                                  iperm.begin() + static_cast<std::ptrdiff_t>(ipos + nb)}};
    ipos += nb;
    return b;
  };
  const std::int64_t period = std::max<std::int64_t>(s.r, 1);
  const std::size_t vbatches = videos / nb;
  for (std::size_t b = 0; b < vbatches; ++b) {
    s.plan.push_back({BatchKind::Video, {vperm.begin() + static_cast<std::ptrdiff_t>(b * nb),
                                         vperm.begin() + static_cast<std::ptrdiff_t>((b + 1) * nb)}});
    if ((b + 1) % static_cast<std::size_t>(period) == 0) s.plan.push_back(next_image_batch());
  }
  return s;
}

AugmentParams sample_augment(Rng& rng) {
  AugmentParams p;
  p.flip = rng.uniform() < 0.5;
  p.scale = rng.uniform(0.9, 1.1);
  p.angle_deg = rng.uniform(-kMaxAngle, kMaxAngle);
  return p;
}

TensorF augment_image(const TensorF& image, const AugmentParams& params) {
  if (std::abs(params.angle_deg) > kMaxAngle) throw DataError("rotation beyond +-15 degrees");
  return warp_affine(image, augment_matrix(params, image.h(), image.w()));
}

TensorF augment_mask(const TensorF& mask, const AugmentParams& params) {
  TensorF out = augment_image(mask, params);
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] >= 0.5f ? 1.0f : 0.0f;
  return out;
}

void augment_clip(ClipSample& clip, const AugmentParams& params) {
  for (auto& f : clip.frames) f = augment_image(f, params);
  for (auto& m : clip.masks) m = augment_mask(m, params);
}

TensorF normalize_frame(const TensorF& frame) {
  TensorF out = frame;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= 0.5f;
  return out;
}

}  // namespace imc
