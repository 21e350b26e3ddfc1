#include "imc/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace imc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError("invalid value for " + key + ": '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename V>
std::string join(const std::vector<V>& items) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) os << (i ? "," : "") << items[i];
  return os.str();
}

// One binding per key: read into the config and write back out.
struct Binding {
  std::function<void(RunConfig&, const std::string&, const std::string&)> read;
  std::function<std::string(const RunConfig&)> write;
};

template <typename N, typename Get>
Binding number(Get get) {
  return {[get](RunConfig& c, const std::string& k, const std::string& v) { get(c) = parse_number<N>(k, v); },
          [get](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) {
              return format_double(get(c));
            } else {
              return std::to_string(get(c));
            }
          }};
}

template <typename Get>
Binding text(Get get) {
  return {[get](RunConfig& c, const std::string&, const std::string& v) { get(c) = v; },
          [get](const RunConfig& c) { return get(c); }};
}

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> table = [] {
    std::map<std::string, Binding> b;
    b["model.clip_n"] = number<int>([](auto& c) -> auto& { return c.model.clip_n; });
    b["model.delta_t"] = number<int>([](auto& c) -> auto& { return c.model.delta_t; });
    b["model.key_channels"] = number<std::int64_t>([](auto& c) -> auto& { return c.model.key_channels; });
    b["model.width"] = number<std::int64_t>([](auto& c) -> auto& { return c.model.width; });
    b["model.cascade_depth"] = number<int>([](auto& c) -> auto& { return c.model.cascade_depth; });
    b["model.input_size"] =
        number<std::int64_t>([](auto& c) -> auto& { return c.model.encoder.input_size; });
    b["model.encoder_channels"] = {
        [](RunConfig& c, const std::string& k, const std::string& v) {
          c.model.encoder.channels.clear();
          for (const auto& item : split_list(v)) c.model.encoder.channels.push_back(parse_number<std::int64_t>(k, item));
        },
        [](const RunConfig& c) { return join(c.model.encoder.channels); }};

    b["optim.lr_encoder"] = number<double>([](auto& c) -> auto& { return c.optim.lr[0]; });
    b["optim.lr_decoder"] = number<double>([](auto& c) -> auto& { return c.optim.lr[1]; });
    b["optim.lr_mcm"] = number<double>([](auto& c) -> auto& { return c.optim.lr[2]; });
    b["optim.lr_scale"] = number<double>([](auto& c) -> auto& { return c.optim.lr_scale; });
    b["optim.beta1"] = number<double>([](auto& c) -> auto& { return c.optim.beta1; });
    b["optim.beta2"] = number<double>([](auto& c) -> auto& { return c.optim.beta2; });
    b["optim.eps"] = number<double>([](auto& c) -> auto& { return c.optim.eps; });

    b["train.batch_size"] = number<int>([](auto& c) -> auto& { return c.train.batch_size; });
    b["train.iterations"] = number<int>([](auto& c) -> auto& { return c.train.iterations; });
    b["train.seed"] = number<std::uint64_t>([](auto& c) -> auto& { return c.train.seed; });
    b["train.checkpoint_every"] = number<int>([](auto& c) -> auto& { return c.train.checkpoint_every; });
    b["train.eval_every"] = number<int>([](auto& c) -> auto& { return c.train.eval_every; });
    b["train.early_stop_j"] = number<double>([](auto& c) -> auto& { return c.train.early_stop_j; });
    b["train.augment"] = {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.augment = parse_bool(k, v); },
                          [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); }};

    b["synth.seed"] = number<std::uint64_t>([](auto& c) -> auto& { return c.synth.seed; });
    b["synth.count"] = number<int>([](auto& c) -> auto& { return c.synth.count; });
    b["synth.size"] = number<std::int64_t>([](auto& c) -> auto& { return c.synth.size; });
    b["synth.frames"] = number<int>([](auto& c) -> auto& { return c.synth.frames; });
    b["synth.shapes"] = {[](RunConfig& c, const std::string&, const std::string& v) { c.synth.shapes = split_list(v); },
                         [](const RunConfig& c) { return join(c.synth.shapes); }};
    b["synth.max_objects"] = number<int>([](auto& c) -> auto& { return c.synth.max_objects; });
    b["synth.distractors"] = number<int>([](auto& c) -> auto& { return c.synth.distractors; });
    b["synth.velocity_min"] = number<double>([](auto& c) -> auto& { return c.synth.velocity_min; });
    b["synth.velocity_max"] = number<double>([](auto& c) -> auto& { return c.synth.velocity_max; });
    b["synth.sinusoidal_fraction"] =
        number<double>([](auto& c) -> auto& { return c.synth.sinusoidal_fraction; });
    b["synth.radius_min"] = number<double>([](auto& c) -> auto& { return c.synth.radius_min; });
    b["synth.radius_max"] = number<double>([](auto& c) -> auto& { return c.synth.radius_max; });

    b["data.video_root"] = text([](auto& c) -> auto& { return c.video_root; });
    b["data.image_root"] = text([](auto& c) -> auto& { return c.image_root; });
    b["output.dir"] = text([](auto& c) -> auto& { return c.output_dir; });
    return b;
  }();
  return table;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
  KeyValueFile kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || key.find_first_of(" \t") != std::string::npos) throw ConfigError(where + ": bad key '" + key + "'");
    if (!kv.values_.emplace(key, value).second) throw ConfigError(where + ": duplicate key " + key);
  }
  return kv;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.string());
}

std::string KeyValueFile::serialize() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

const std::string& KeyValueFile::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key " + key);
  return it->second;
}

void SynthConfig::validate() const {
  if (count < 1) throw ConfigError("synth.count must be positive");
  if (size < 32 || size % 32 != 0) throw ConfigError("synth.size must be a positive multiple of 32");
  if (frames < 1) throw ConfigError("synth.frames must be positive");
  if (shapes.empty()) throw ConfigError("synth.shapes must list at least one shape");
  for (const auto& s : shapes) {
    if (s != "square" && s != "disk") throw ConfigError("unknown synth shape '" + s + "' (square, disk)");
  }
  if (max_objects < 1) throw ConfigError("synth.max_objects must be at least 1");
  if (distractors < 0) throw ConfigError("synth.distractors must be non-negative");
  if (velocity_min < 0 || velocity_max < velocity_min) throw ConfigError("synth velocity range is invalid");
  if (sinusoidal_fraction < 0 || sinusoidal_fraction > 1) throw ConfigError("synth.sinusoidal_fraction must be in [0,1]");
  if (radius_min < 1 || radius_max < radius_min) throw ConfigError("synth radius range is invalid");
  if (2 * radius_max + velocity_max * (frames - 1) >= static_cast<double>(size)) {
    throw ConfigError("synth trajectories do not fit in the frame; lower velocity_max, radius_max or frames");
  }
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, b] : bindings()) k.push_back(name);
    return k;
  }();
  return keys;
}

RunConfig RunConfig::from_kv(const KeyValueFile& kv) {
  RunConfig c;
  for (const auto& [key, value] : kv.values()) {
    auto it = bindings().find(key);
    if (it == bindings().end()) throw ConfigError("unknown config key " + key);
    it->second.read(c, key, value);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from_kv(KeyValueFile::load(path)); }

KeyValueFile RunConfig::to_kv() const {
  KeyValueFile kv;
  for (const auto& [key, b] : bindings()) kv.set(key, b.write(*this));
  return kv;
}

void RunConfig::validate() const {
  model.validate();
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (train.iterations < 0) throw ConfigError("train.iterations must be non-negative");
  if (train.checkpoint_every < 0 || train.eval_every < 0) throw ConfigError("train periods must be non-negative");
  if (optim.lr_scale <= 0) throw ConfigError("optim.lr_scale must be positive");
  if (optim.beta1 < 0 || optim.beta1 >= 1 || optim.beta2 < 0 || optim.beta2 >= 1) {
    throw ConfigError("optim betas must be in [0,1)");
  }
  if (video_root.empty()) {
    synth.validate();
    if (synth.size != model.encoder.input_size) {
      throw ConfigError("synth.size must equal model.input_size for synthetic training");
    }
  }
}

}  // namespace imc
