#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "imc/tensor.hpp"

namespace imc {

/// Named float32 tensors in a fixed little-endian container:
/// "IMCW" | u32 version | u32 count | { u32 len | name | u32 rank | u32 dims[rank] | f32 data[] }*.
/// Entries are written in key order, so equal maps give identical files.
using TensorMap = std::map<std::string, TensorF>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

/// Copies `src` into `dst` entry by entry. Throws CheckpointError listing every
/// missing, unexpected or shape-mismatched entry; `dst` is untouched on error.
void assign_checkpoint(TensorMap& dst, const TensorMap& src);

}  // namespace imc
