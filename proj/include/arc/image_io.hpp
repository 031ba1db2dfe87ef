#pragma once

#include <filesystem>

#include "arc/tensor.hpp"

namespace arc {

// Reads an 8-bit image (PNG, JPEG, or binary PPM) as RGB in [0, 1].
ImageTensor read_image(const std::filesystem::path& path);

// Writes an RGB [3, H, W] tensor as 8-bit PNG (".png") or PPM (anything
// else). Values are clamped to [0, 1] and rounded.
void write_image(const std::filesystem::path& path, const ImageTensor& image);

// 8-bit interleaved RGB <-> planar float conversions.
ImageTensor from_rgb8(const unsigned char* rgb, int width, int height);
std::vector<unsigned char> to_rgb8(const ImageTensor& image);

}  // namespace arc
