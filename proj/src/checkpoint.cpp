#include "imc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "imc/error.hpp"

namespace imc {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'I', 'M', 'C', 'W'};

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(path + ": truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof kMagic);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  if (!os) throw IoError("write failed for " + path.string());
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + p);
  char magic[4];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError(p + ": not an IMCW checkpoint");
  }
  const std::uint32_t version = get_u32(is, p);
  if (version != kCheckpointVersion) throw CheckpointError(p + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(is, p);
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(is, p);
    if (len > 4096) throw CheckpointError(p + ": corrupt entry name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError(p + ": truncated checkpoint");
    const std::uint32_t rank = get_u32(is, p);
    if (rank > 8) throw CheckpointError(p + ": corrupt rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(is, p);
    TensorF t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)))) {
      throw CheckpointError(p + ": truncated data for " + name);
    }
    if (!out.emplace(name, std::move(t)).second) throw CheckpointError(p + ": duplicate entry " + name);
  }
  return out;
}

void assign_checkpoint(TensorMap& dst, const TensorMap& src) {
  std::ostringstream problems;
  int n = 0;
  for (const auto& [name, t] : dst) {
    auto it = src.find(name);
    if (it == src.end()) {
      problems << (n++ ? "; " : "") << "missing " << name;
    } else if (it->second.shape() != t.shape()) {
      problems << (n++ ? "; " : "") << name << " expected " << shape_str(t.shape()) << " got "
               << shape_str(it->second.shape());
    }
  }
  for (const auto& [name, t] : src) {
    if (!dst.count(name)) problems << (n++ ? "; " : "") << "unexpected " << name;
  }
  if (n) throw CheckpointError("checkpoint incompatible with model: " + problems.str());
  for (auto& [name, t] : dst) t = src.at(name);
}

}  // namespace imc
