#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "imc/model.hpp"
#include "imc/optim.hpp"

namespace imc {

/// Flat `key = value` text with dotted keys. `#` starts a comment; blank
/// lines are ignored. Duplicate keys are an error.
class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueFile load(const std::filesystem::path& path);

  /// Sorted `key = value` lines, comments and spacing dropped.
  std::string serialize() const;

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  int count = 8;               // sequences
  std::int64_t size = 64;      // square frames
  int frames = 8;              // per sequence
  std::vector<std::string> shapes{"square", "disk"};
  int max_objects = 2;         // moving objects per sequence, 1..max
  int distractors = 1;         // static shapes per sequence
  double velocity_min = 1.0;   // px/frame
  double velocity_max = 3.0;
  double sinusoidal_fraction = 0.5;
  double radius_min = 6.0;
  double radius_max = 11.0;

  void validate() const;
};

struct TrainSettings {
  int batch_size = 4;
  int iterations = 2000;
  std::uint64_t seed = 1;
  int checkpoint_every = 500;
  int eval_every = 100;           // train-set J evaluation period, 0 disables
  double early_stop_j = 0.0;      // stop once train mean J reaches this, 0 disables
  bool augment = false;
};

struct RunConfig {
  ModelConfig model;
  AdamConfig optim;
  TrainSettings train;
  SynthConfig synth;
  std::string video_root;  // empty: synthetic data from `synth`
  std::string image_root;  // optional static-image set
  std::string output_dir = "run";

  static RunConfig from_kv(const KeyValueFile& kv);
  static RunConfig load(const std::filesystem::path& path);
  KeyValueFile to_kv() const;
  void validate() const;
};

/// Every key accepted by RunConfig::from_kv.
const std::vector<std::string>& run_config_keys();

}  // namespace imc
