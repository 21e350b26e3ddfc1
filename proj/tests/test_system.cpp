#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "imc/checkpoint.hpp"
#include "imc/config.hpp"
#include "imc/gradcheck.hpp"
#include "imc/train.hpp"

using namespace imc;
using imc::test::random_tensor;
using imc::test::TempDir;

namespace {

RunConfig tiny_config(const std::filesystem::path& out) {
  RunConfig c;
  c.model.encoder.input_size = 32;
  c.model.encoder.channels = {4, 6, 8, 8};
  c.model.key_channels = 8;
  c.model.width = 8;
  c.model.cascade_depth = 2;
  c.train.batch_size = 2;
  c.train.iterations = 10;
  c.train.checkpoint_every = 5;
  c.train.eval_every = 5;
  c.synth.count = 2;
  c.synth.size = 32;
  c.synth.frames = 3;
  c.synth.radius_min = 4;
  c.synth.radius_max = 6;
  c.synth.velocity_max = 2;
  c.output_dir = out.string();
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IMC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("config text round trip") {
  const RunConfig a = tiny_config("somewhere");
  const std::string text = a.to_kv().serialize();
  const RunConfig b = RunConfig::from_kv(KeyValueFile::parse(text));
  CHECK(b.to_kv().serialize() == text);
  CHECK(b.model.encoder.channels == a.model.encoder.channels);
  CHECK(b.output_dir == "somewhere");
  CHECK(a.to_kv().values().size() == run_config_keys().size());

  CHECK_THROWS_AS(RunConfig::from_kv(KeyValueFile::parse("model.widht = 8\n")), ConfigError);
  CHECK_THROWS_AS(KeyValueFile::parse("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_kv(KeyValueFile::parse("train.iterations = ten\n")), ConfigError);
  const auto kv = KeyValueFile::parse("# comment\n\n  model.width = 16  \n");
  CHECK(kv.get("model.width") == "16");
}

TEST_CASE("checkpoint round trip is bit exact") {
  TempDir dir("ckpt");
  Rng rng(5);
  TensorMap m;
  m["a.weight"] = random_tensor<float>({2, 3, 3, 3}, rng);
  m["b.bias"] = random_tensor<float>({7}, rng);
  m["c"] = TensorF({1, 1, 1, 1}, std::nanf(""));
  save_checkpoint(dir / "x.imcw", m);
  const auto back = load_checkpoint(dir / "x.imcw");
  REQUIRE(back.size() == 3);
  CHECK(back.at("a.weight") == m.at("a.weight"));
  CHECK(back.at("b.bias").shape() == Shape{7});
  CHECK(std::isnan(back.at("c")[0]));
  save_checkpoint(dir / "y.imcw", back);
  CHECK(read_file(dir / "x.imcw") == read_file(dir / "y.imcw"));

  TensorMap dst{{"a.weight", TensorF({2, 3, 3, 3})}, {"b.bias", TensorF({6})}, {"d", TensorF({1})}};
  try {
    assign_checkpoint(dst, m);
    FAIL("mismatched checkpoint was accepted");
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("b.bias") != std::string::npos);
    CHECK(msg.find("d") != std::string::npos);
    CHECK(msg.find("c") != std::string::npos);
  }
  CHECK(dst.at("a.weight")[0] == 0.0f);

  std::ofstream(dir / "bad.imcw") << "nope";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.imcw"), CheckpointError);
}

TEST_CASE("model shapes and parameter groups") {
  TempDir dir("model");
  const RunConfig cfg = tiny_config(dir.path());
  auto model = make_model(cfg.model, 3);
  Rng rng(1);
  std::vector<TensorF> frames;
  for (int i = 0; i < cfg.model.frames(); ++i) frames.push_back(random_tensor<float>({1, 3, 32, 32}, rng, 0, 1));
  const auto out = model.forward(frames);
  CHECK(out.mask.shape() == Shape{1, 1, 32, 32});
  REQUIRE(out.decoders.size() == 3);
  for (float v : out.mask.values()) CHECK((v > 0.0f && v < 1.0f));
  CHECK_THROWS_AS(model.forward({frames[0], frames[1]}), ShapeError);

  CHECK(param_group("encoder.block1.conv1.weight") == ParamGroup::Encoder);
  CHECK(param_group("acm.proj_p.weight") == ParamGroup::Decoder);
  CHECK(param_group("apm.head.weight") == ParamGroup::Decoder);
  CHECK(param_group("mcm.align0.offset.weight") == ParamGroup::Motion);
  std::size_t counted = 0;
  model.visit([&](const std::string& name, TensorF& value, TensorF&) {
    CHECK_NOTHROW(param_group(name));
    counted += static_cast<std::size_t>(value.numel());
  });
  CHECK(counted == model.parameter_count());

  auto other = make_model(cfg.model, 4);
  other.import_weights(model.export_weights());
  CHECK(other.forward(frames).mask == out.mask);
  ModelConfig wider = cfg.model;
  wider.key_channels = 16;
  Imcnet<float> mismatched(wider);
  CHECK_THROWS_AS(mismatched.import_weights(model.export_weights()), CheckpointError);
}

TEST_CASE("whole-network gradient along random directions") {
  // Per-coordinate differences cannot resolve the smallest parameter
  // gradients of the full network, so each variable is probed along one
  // random unit direction. Errors are scaled by the variable's gradient norm,
  // which bounds the directional derivative.
  const GradProblem p = imcnet_problem(1);
  const auto grads = p.gradient(p.vars);
  Rng rng(99);
  int probed = 0;
  double worst = 0;
  for (std::size_t v = 0; v < p.vars.size(); ++v) {
    if (grads[v].empty()) continue;
    TensorD d = random_tensor<double>(p.vars[v].shape(), rng);
    double norm = 0, gnorm = 0;
    for (double x : d.values()) norm += x * x;
    norm = std::sqrt(norm);
    double analytic = 0;
    for (std::int64_t i = 0; i < d.numel(); ++i) {
      d[i] /= norm;
      analytic += grads[v][i] * d[i];
      gnorm += grads[v][i] * grads[v][i];
    }
    gnorm = std::sqrt(gnorm);
    auto along = [&](double h) {
      auto xp = p.vars, xm = p.vars;
      for (std::int64_t i = 0; i < d.numel(); ++i) {
        xp[v][i] += h * d[i];
        xm[v][i] -= h * d[i];
      }
      return (p.objective(xp) - p.objective(xm)) / (2 * h);
    };
    double best = 1e300;
    for (double h : {1e-4, 1e-5, 1e-6}) best = std::min(best, std::abs(along(h) - analytic) / std::max(gnorm, 1e-8));
    if (best >= 1e-5) MESSAGE(p.names[v] << " directional error " << best);
    worst = std::max(worst, best);
    ++probed;
  }
  CHECK(probed > 20);
  CHECK(worst < 1e-5);
}

TEST_CASE("short training run writes its artifacts") {
  TempDir dir("train");
  const RunConfig cfg = tiny_config(dir / "run");
  auto model = make_model(cfg.model, cfg.train.seed);
  std::ostringstream progress;
  TrainOptions opts;
  opts.progress = &progress;
  const auto res = train(cfg, model, opts);
  CHECK(res.iterations == 10);
  CHECK(res.losses.size() == 10);
  for (double l : res.losses) CHECK(std::isfinite(l));
  CHECK(res.train_j >= 0.0);
  CHECK(res.train_j <= 1.0);
  CHECK(std::filesystem::is_regular_file(dir / "run" / "final.imcw"));
  CHECK(std::filesystem::is_regular_file(dir / "run" / "checkpoint_000005.imcw"));
  CHECK(std::filesystem::is_regular_file(dir / "run" / "config.txt"));
  std::ifstream log(dir / "run" / "loss_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) ++lines;
  CHECK(lines == 10);

  // a second run from the same seed reproduces the checkpoint bit for bit
  RunConfig again = cfg;
  again.output_dir = (dir / "again").string();
  auto model2 = make_model(again.model, again.train.seed);
  opts.progress = nullptr;
  train(again, model2, opts);
  CHECK(read_file(dir / "run" / "final.imcw") == read_file(dir / "again" / "final.imcw"));
}

TEST_CASE("command line exit codes") {
  TempDir dir("cli");
  const RunConfig cfg = tiny_config(dir / "run");
  std::ofstream(dir / "run.conf") << cfg.to_kv().serialize();
  std::ofstream(dir / "broken.conf") << "model.nonsense = 1\n";
  const std::string conf = (dir / "run.conf").string();

  CHECK(run_cli("") != 0);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("frobnicate") != 0);
  CHECK(run_cli("train") != 0);
  CHECK(run_cli("train --config " + (dir / "broken.conf").string()) == 2);
  CHECK(run_cli("train --config " + (dir / "missing.conf").string()) == 2);
  CHECK(run_cli("gradcheck --op sigmoid --seeds 2") == 0);
  CHECK(run_cli("gradcheck --op not_an_op") == 2);
  CHECK(run_cli("bench --kernel conv2d --sizes 8 --runs 2") == 2);
  CHECK(run_cli("bench --kernel conv2d --sizes 8,x") == 2);

  CHECK(run_cli("synth --config " + conf + " --out " + (dir / "data").string()) == 0);
  CHECK(run_cli("train --config " + conf) == 0);
  const std::string ckpt = (dir / "run" / "final.imcw").string();
  const std::string seq = (dir / "data" / "JPEGImages" / "synth000").string();
  CHECK(run_cli("infer --config " + conf + " --checkpoint " + ckpt + " --input " + seq + " --out " +
                (dir / "pred").string()) == 0);
  CHECK(std::filesystem::is_regular_file(dir / "pred" / "00000.png"));
  CHECK(run_cli("infer --tta --config " + conf + " --checkpoint " + ckpt + " --input " + seq + " --out " +
                (dir / "pred2").string()) == 2);
  const std::string gt = (dir / "data" / "Annotations" / "synth000").string();
  CHECK(run_cli("eval --pred " + (dir / "pred").string() + " --gt " + gt + " --out " +
                (dir / "report.jsonl").string()) == 0);
  CHECK(std::filesystem::is_regular_file(dir / "report.csv"));
  CHECK(run_cli("eval --pred " + (dir / "nothing").string() + " --gt " + gt + " --out " +
                (dir / "r.jsonl").string()) == 2);
}
