#ifndef BG_IMAGE_IO_HPP
#define BG_IMAGE_IO_HPP

#include <filesystem>

#include "bg/tensor.hpp"

namespace bg {

// 8-bit RGB PNG round-trip for (3,h,w) tensors in [0,1].
void write_png(const std::filesystem::path& path, const Tensor& chw);
Tensor read_png(const std::filesystem::path& path);

// 8-bit quantization used on write; loading returns these exact values.
inline double quantize8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return std::nearbyint(c * 255.0) / 255.0;
}

}  // namespace bg

#endif  // BG_IMAGE_IO_HPP
