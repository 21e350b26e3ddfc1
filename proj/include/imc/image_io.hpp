#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "imc/tensor.hpp"

namespace imc {

/// RGB image as (1,3,H,W) in [0,1].
TensorF read_rgb(const std::filesystem::path& path);
/// 8-bit mask as (1,1,H,W) with values {0,1} (nonzero = foreground).
TensorF read_mask(const std::filesystem::path& path);

void write_rgb(const std::filesystem::path& path, const TensorF& image);
/// Writes a (1,1,H,W) map in [0,1] as 8-bit PNG: binarized at 0.5 to {0,255},
/// or scaled to [0,255] when `probabilities` is set.
void write_mask(const std::filesystem::path& path, const TensorF& mask, bool probabilities = false);

/// Bilinear resize of every channel.
TensorF resize_bilinear(const TensorF& image, std::int64_t h, std::int64_t w);
/// Nearest-neighbor resize (for binary masks).
TensorF resize_nearest(const TensorF& mask, std::int64_t h, std::int64_t w);

/// Bilinear warp by the 2x3 affine map `m` (destination -> source inverse is
/// computed internally), zero outside the source.
TensorF warp_affine(const TensorF& image, const std::array<double, 6>& m);

/// Image files (png/jpg/jpeg) in `dir`, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace imc
