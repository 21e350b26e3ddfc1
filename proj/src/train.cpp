#include "imc/train.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <thread>

#include "imc/eval.hpp"
#include "imc/image_io.hpp"
#include "json.hpp"

namespace imc {

namespace fs = std::filesystem;

namespace {

struct PreparedClip {
  std::vector<TensorF> frames;  // normalized network input
  std::vector<TensorF> masks;
};

PreparedClip prepare(const ClipSample& clip, std::int64_t size) {
  PreparedClip p;
  for (const auto& f : clip.frames) p.frames.push_back(normalize_frame(resize_bilinear(f, size, size)));
  for (const auto& m : clip.masks) p.masks.push_back(resize_nearest(m, size, size));
  return p;
}

// Forward, loss and backward for one clip; parameter gradients accumulate
// in `model`.
LossBreakdown run_clip(Imcnet<float>& model, const PreparedClip& clip) {
  Imcnet<float>::Cache cache;
  const auto out = model.forward(clip.frames, &cache);
  std::vector<std::array<TensorF, kPyramidLevels>> sides;
  std::vector<const TensorF*> gts;
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    sides.push_back(out.decoders[i].side_masks);
    gts.push_back(&clip.masks[i]);
  }
  LossGrads<float> grads;
  const LossBreakdown lb = total_loss(out.mask, clip.masks[clip.masks.size() / 2], sides, gts, &grads);
  model.backward(cache, grads);
  return lb;
}

std::vector<TensorF*> grad_tensors(Imcnet<float>& model) {
  std::vector<TensorF*> out;
  model.visit([&out](const std::string&, TensorF&, TensorF& g) { out.push_back(&g); });
  return out;
}

// Batch plan: video-only epochs are seeded permutations of the sequences;
// with an image set the joint schedule is used.
class BatchSource {
 public:
  BatchSource(std::size_t videos, std::size_t images, int batch_size, std::uint64_t seed)
      : videos_(videos), images_(images), batch_size_(batch_size), seed_(seed) {
    if (videos_ < static_cast<std::size_t>(batch_size_)) {
      throw ConfigError("batch size " + std::to_string(batch_size_) + " exceeds the " + std::to_string(videos_) +
                        " training sequences");
    }
  }

  BatchRef next() {
    if (pos_ >= plan_.size()) refill();
    return plan_[pos_++];
  }

 private:
  void refill() {
    const std::uint64_t seed = seed_ * 1000003ULL + epoch_++;
    plan_.clear();
    pos_ = 0;
    if (images_ > 0) {
      plan_ = build_schedule(videos_, images_, batch_size_, seed).plan;
      return;
    }
    Rng rng(seed);
    std::vector<std::size_t> perm(videos_);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    const auto nb = static_cast<std::size_t>(batch_size_);
    for (std::size_t b = 0; b + nb <= perm.size(); b += nb) {
      plan_.push_back({BatchKind::Video, {perm.begin() + static_cast<std::ptrdiff_t>(b),
                                          perm.begin() + static_cast<std::ptrdiff_t>(b + nb)}});
    }
  }

  std::size_t videos_, images_;
  int batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<BatchRef> plan_;
  std::size_t pos_ = 0;
};

std::string checkpoint_name(int iteration) {
  std::ostringstream os;
  os << "checkpoint_" << std::setw(6) << std::setfill('0') << iteration << ".imcw";
  return os.str();
}

}  // namespace

int thread_count_from_env() {
  const char* v = std::getenv("IMC_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("IMC_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<int>(n);
}

Imcnet<float> make_model(const ModelConfig& config, std::uint64_t seed) {
  Imcnet<float> model(config);
  Rng rng(seed);
  model.init(rng);
  return model;
}

std::vector<TensorF> infer_sequence(const Imcnet<float>& model, const Sequence& seq) {
  const ModelConfig& cfg = model.config();
  const std::int64_t size = cfg.encoder.input_size;
  std::vector<TensorF> out;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const ClipSample clip = sample_clip(seq, static_cast<int>(t), cfg.clip_n, cfg.delta_t);
    std::vector<TensorF> frames;
    for (const auto& f : clip.frames) frames.push_back(normalize_frame(resize_bilinear(f, size, size)));
    const TensorF& center = clip.frames[clip.frames.size() / 2];
    out.push_back(resize_bilinear(model.forward(frames).mask, center.h(), center.w()));
  }
  return out;
}

double mean_region_j(const Imcnet<float>& model, const VideoSet& set) {
  if (set.size() == 0) throw DataError("cannot score an empty video set");
  double total = 0;
  for (const auto& seq : set.sequences) {
    const auto probs = infer_sequence(model, seq);
    double s = 0;
    for (std::size_t t = 0; t < probs.size(); ++t) {
      s += region_j(BinaryMask::from_tensor(probs[t]), BinaryMask::from_tensor(seq.mask(t)));
    }
    total += s / static_cast<double>(probs.size());
  }
  return total / static_cast<double>(set.size());
}

VideoSet training_videos(const RunConfig& config) {
  if (!config.video_root.empty()) return load_video_dataset(config.video_root);
  return generate_synthetic(config.synth);
}

TrainResult train(const RunConfig& config, Imcnet<float>& model, const TrainOptions& options) {
  config.validate();
  const VideoSet videos = training_videos(config);
  ImageSet images;
  if (!config.image_root.empty()) images = load_image_dataset(config.image_root);

  const std::int64_t size = config.model.encoder.input_size;
  const int batch = config.train.batch_size;
  const int threads = std::max(1, std::min(options.threads, batch));
  BatchSource source(videos.size(), images.size(), batch, config.train.seed);
  Rng rng(config.train.seed ^ 0x5DEECE66DULL);
  Adam adam(config.optim);

  const fs::path out_dir = config.output_dir;
  std::ofstream log;
  if (options.write_outputs) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "config.txt") << config.to_kv().serialize();
    log.open(out_dir / "loss_log.jsonl");
    if (!log) throw IoError("cannot write " + (out_dir / "loss_log.jsonl").string());
  }

  TrainResult result;
  std::vector<Imcnet<float>> replicas(static_cast<std::size_t>(threads - 1), model);
  const auto start = std::chrono::steady_clock::now();

  for (int it = 1; it <= config.train.iterations; ++it) {
    // Assemble the batch on the main thread so sampling order never depends
    // on the worker count.
    const BatchRef ref = source.next();
    std::vector<PreparedClip> clips;
    for (std::size_t idx : ref.indices) {
      ClipSample clip;
      if (ref.kind == BatchKind::Video) {
        const Sequence& seq = videos.sequences[idx];
        const int t = static_cast<int>(rng.below(seq.size()));
        clip = sample_clip(seq, t, config.model.clip_n, config.model.delta_t);
      } else {
        const ImageItem& item = images.items[idx];
        clip = replicate_image(read_rgb(item.image), read_mask(item.mask), config.model.clip_n, item.image.string());
      }
      if (config.train.augment) augment_clip(clip, sample_augment(rng));
      clips.push_back(prepare(clip, size));
    }

    std::vector<LossBreakdown> losses(clips.size());
    model.zero_grad();
    if (threads == 1) {
      for (std::size_t c = 0; c < clips.size(); ++c) losses[c] = run_clip(model, clips[c]);
    } else {
      // Worker w handles clips w, w + threads, ...; gradients are reduced in
      // worker order, which keeps the sum independent of scheduling.
      for (auto& r : replicas) {
        r = model;
        r.zero_grad();
      }
      std::vector<std::thread> pool;
      for (int w = 1; w < threads; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t c = static_cast<std::size_t>(w); c < clips.size(); c += static_cast<std::size_t>(threads)) {
            losses[c] = run_clip(replicas[static_cast<std::size_t>(w - 1)], clips[c]);
          }
        });
      }
      for (std::size_t c = 0; c < clips.size(); c += static_cast<std::size_t>(threads)) {
        losses[c] = run_clip(model, clips[c]);
      }
      for (auto& th : pool) th.join();
      const auto main_grads = grad_tensors(model);
      for (auto& r : replicas) {
        const auto g = grad_tensors(r);
        for (std::size_t k = 0; k < g.size(); ++k) *main_grads[k] += *g[k];
      }
    }
    const float inv_batch = 1.0f / static_cast<float>(clips.size());
    for (TensorF* g : grad_tensors(model)) *g *= inv_batch;
    adam.step(model);

    LossBreakdown mean;
    for (const auto& lb : losses) {
      mean.total += lb.total / static_cast<double>(losses.size());
      mean.bce += lb.bce / static_cast<double>(losses.size());
      mean.ssim += lb.ssim / static_cast<double>(losses.size());
      mean.iou += lb.iou / static_cast<double>(losses.size());
      mean.final_total += lb.final_total / static_cast<double>(losses.size());
    }
    result.losses.push_back(mean.total);
    result.iterations = it;
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log.is_open()) {
      nlohmann::json rec{{"iter", it},          {"total", mean.total}, {"bce", mean.bce},
                         {"ssim", mean.ssim},   {"iou", mean.iou},     {"final", mean.final_total},
                         {"batch", ref.kind == BatchKind::Video ? "video" : "image"}};
      log << rec.dump() << "\n";
    }

    const bool evaluate = config.train.eval_every > 0 && (it % config.train.eval_every == 0 || it == config.train.iterations);
    if (evaluate) result.train_j = mean_region_j(model, videos);
    if (options.progress && (evaluate || it == 1)) {
      *options.progress << "iter " << it << " loss " << mean.total << " final " << mean.final_total;
      if (evaluate) *options.progress << " train_J " << result.train_j;
      *options.progress << " (" << elapsed << " s)" << std::endl;
    }
    if (options.write_outputs && config.train.checkpoint_every > 0 && it % config.train.checkpoint_every == 0) {
      save_checkpoint(out_dir / checkpoint_name(it), model.export_weights());
    }
    if (evaluate && config.train.early_stop_j > 0 && result.train_j >= config.train.early_stop_j) break;
  }

  if (options.write_outputs) {
    result.checkpoint = out_dir / "final.imcw";
    save_checkpoint(result.checkpoint, model.export_weights());
  }
  return result;
}

}  // namespace imc
