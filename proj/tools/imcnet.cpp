#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "imc/bench.hpp"
#include "imc/checkpoint.hpp"
#include "imc/config.hpp"
#include "imc/data.hpp"
#include "imc/eval.hpp"
#include "imc/gradcheck.hpp"
#include "imc/image_io.hpp"
#include "imc/train.hpp"

namespace fs = std::filesystem;

namespace {

std::vector<std::int64_t> parse_sizes(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw imc::ConfigError("invalid size '" + item + "' in --sizes");
    }
  }
  if (out.empty()) throw imc::ConfigError("--sizes needs at least one value");
  return out;
}

int cmd_train(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::optional<double>& lr_scale) {
  imc::RunConfig cfg = imc::RunConfig::load(config_path);
  if (seed) cfg.train.seed = *seed;
  if (lr_scale) cfg.optim.lr_scale = *lr_scale;
  cfg.validate();
  imc::Imcnet<float> model = imc::make_model(cfg.model, cfg.train.seed);
  imc::TrainOptions opts;
  opts.progress = &std::cout;
  opts.threads = imc::thread_count_from_env();
  const auto res = imc::train(cfg, model, opts);
  std::cout << "trained " << res.iterations << " iterations; checkpoint " << res.checkpoint.string() << "\n";
  if (res.train_j >= 0) std::cout << "train mean J " << res.train_j << "\n";
  return 0;
}

void infer_one(const imc::Imcnet<float>& model, const fs::path& dir, const fs::path& out, bool probs) {
  auto frames = imc::list_images(dir);
  if (frames.empty()) throw imc::DataError("no frames in " + dir.string());
  const auto seq = imc::Sequence::from_files(dir.filename().string(), frames, {});
  const auto masks = imc::infer_sequence(model, seq);
  fs::create_directories(out);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    imc::write_mask(out / (frames[i].stem().string() + ".png"), masks[i], probs);
  }
}

int cmd_infer(const std::string& config_path, const std::string& checkpoint, const std::string& input,
              const std::string& out, bool probs, bool tta) {
  if (tta) throw imc::ConfigError("--tta (multi-scale + mirrored inference) is reserved and not implemented");
  const imc::RunConfig cfg = imc::RunConfig::load(config_path);
  imc::Imcnet<float> model(cfg.model);
  model.import_weights(imc::load_checkpoint(checkpoint));
  std::vector<fs::path> seqs;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_directory()) seqs.push_back(e.path());
  }
  std::sort(seqs.begin(), seqs.end());
  if (seqs.empty()) {
    infer_one(model, input, out, probs);
  } else {
    for (const auto& s : seqs) infer_one(model, s, fs::path(out) / s.filename(), probs);
  }
  std::cout << "wrote masks to " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& out) {
  const imc::DatasetScore score = imc::evaluate_dirs(pred, gt);
  const fs::path report(out);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  std::ofstream(report) << imc::to_jsonl(score);
  fs::path csv = report;
  csv.replace_extension(".csv");
  std::ofstream(csv) << imc::to_csv(score);
  std::printf("sequences %zu  J mean %.4f recall %.4f decay %.4f  F mean %.4f recall %.4f decay %.4f  J&F %.4f\n",
              score.sequences.size(), score.j.mean, score.j.recall, score.j.decay, score.f.mean, score.f.recall,
              score.f.decay, score.jf_mean);
  return 0;
}

int cmd_gradcheck(const std::string& op, int seeds) {
  imc::GradCheckOptions opts;
  opts.seeds = seeds;
  std::vector<const imc::GradCase*> cases;
  if (op.empty()) {
    for (const auto& c : imc::gradcheck_registry()) cases.push_back(&c);
  } else {
    cases.push_back(&imc::find_gradcase(op));
  }
  std::printf("%-18s %6s %7s %12s %8s  %s\n", "op", "seeds", "coords", "max_rel_err", "time_s", "result");
  bool ok = true;
  for (const auto* c : cases) {
    const auto r = imc::run_gradcheck(*c, opts);
    ok = ok && r.passed;
    std::printf("%-18s %6d %7zu %12.3e %8.2f  %s%s\n", r.name.c_str(), r.seeds, r.coords, r.max_rel_error, r.seconds,
                r.passed ? "PASS" : "FAIL  worst ", r.passed ? "" : r.worst.c_str());
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}

int cmd_bench(const std::string& kernel, const std::string& sizes, int runs) {
  std::vector<std::string> kernels;
  if (kernel == "all") {
    kernels = imc::bench_kernels();
  } else {
    kernels.push_back(kernel);
  }
  const auto sz = parse_sizes(sizes);
  std::printf("%-16s %6s %10s %5s %14s %10s\n", "kernel", "size", "elements", "runs", "median_ns", "ns/elem");
  for (const auto& k : kernels) {
    for (auto s : sz) {
      const auto r = imc::run_bench(k, s, runs);
      std::printf("%-16s %6lld %10lld %5d %14.0f %10.3f\n", r.kernel.c_str(), static_cast<long long>(r.size),
                  static_cast<long long>(r.elements), r.runs, r.median_ns, r.ns_per_element);
    }
  }
  return 0;
}

int cmd_synth(const std::string& config_path, const std::string& out) {
  const imc::RunConfig cfg = imc::RunConfig::load(config_path);
  const imc::VideoSet set = imc::generate_synthetic(cfg.synth);
  imc::write_video_dataset(set, out);
  std::cout << "wrote " << set.size() << " sequences to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMCNet video object segmentation"};
  app.require_subcommand(1);

  std::string config, checkpoint, input, out, pred, gt, op, kernel = "all", sizes = "32,64";
  std::optional<std::uint64_t> seed;
  std::optional<double> lr_scale;
  bool probs = false, tta = false;
  int seeds = 20, runs = 7;

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config, "run config")->required();
  train->add_option("--seed", seed, "override train.seed");
  train->add_option("--lr-scale", lr_scale, "override optim.lr_scale");

  auto* infer = app.add_subcommand("infer", "segment every frame of a sequence directory");
  infer->add_option("--config", config, "run config")->required();
  infer->add_option("--checkpoint", checkpoint, "IMCW checkpoint")->required();
  infer->add_option("--input", input, "frame directory, or a directory of sequence directories")->required();
  infer->add_option("--out", out, "output directory")->required();
  infer->add_flag("--probs", probs, "write probability maps instead of binary masks");
  infer->add_flag("--tta", tta, "reserved: multi-scale + mirrored inference");

  auto* eval = app.add_subcommand("eval", "score predicted masks against ground truth");
  eval->add_option("--pred", pred, "prediction directory")->required();
  eval->add_option("--gt", gt, "ground-truth directory")->required();
  eval->add_option("--out", out, "JSONL report path (a CSV summary is written next to it)")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  grad->add_option("--op", op, "single op name");
  grad->add_option("--seeds", seeds, "seeds per op")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "kernel throughput");
  bench->add_option("--kernel", kernel, "conv2d, deformable_conv, bilinear_sample or all");
  bench->add_option("--sizes", sizes, "comma-separated spatial sizes");
  bench->add_option("--runs", runs, "timed runs per size (>= 5)");

  auto* synth = app.add_subcommand("synth", "write the synthetic dataset in DAVIS layout");
  synth->add_option("--config", config, "config with synth.* keys")->required();
  synth->add_option("--out", out, "output root")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error[E_USAGE]: %s\n", e.what());
    return 2;
  }

  try {
    if (*train) return cmd_train(config, seed, lr_scale);
    if (*infer) return cmd_infer(config, checkpoint, input, out, probs, tta);
    if (*eval) return cmd_eval(pred, gt, out);
    if (*grad) return cmd_gradcheck(op, seeds);
    if (*bench) return cmd_bench(kernel, sizes, runs);
    if (*synth) return cmd_synth(config, out);
  } catch (const imc::Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", e.code().c_str(), e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error[E_IO]: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[E_INTERNAL]: %s\n", e.what());
    return 2;
  }
  return 0;
}
