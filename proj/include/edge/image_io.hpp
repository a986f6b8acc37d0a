#pragma once

#include <string>

#include "edge/tensor.hpp"

namespace edge {

/// Decoded PNG as C×H×W floats in [0, 1] (8- and 16-bit sources are divided
/// by 255 and 65535). Palette and low-bit-depth images are expanded; alpha
/// is dropped.
Tensor read_png(const std::string& path);

/// Convenience views on read_png.
Tensor read_png_rgb(const std::string& path);   // 3×H×W, gray replicated
Tensor read_png_gray(const std::string& path);  // 1×H×W, RGB averaged

/// Writes a 1×H×W or 3×H×W tensor with values in [0, 1] (clamped).
void write_png(const std::string& path, const Tensor& image, int bit_depth = 8);

}  // namespace edge
