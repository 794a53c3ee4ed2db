#pragma once

#include <cstdint>
#include <string>

#include "pad/tensor.hpp"

namespace pad::io {

/// Decoded netpbm image. Samples are divided by the header max value, so
/// pixels is [C, H, W] with values in [0, 1]; C is 1 for P5 (PGM) and 3 for
/// P6 (PPM). maxval is kept so integer round trips stay exact.
struct ImageFile {
  Tensor pixels;
  std::uint32_t maxval = 255;
};

/// Read a binary PGM (P5) or PPM (P6) file. 8-bit for maxval 255, 16-bit
/// big-endian for maxval 65535; other depths are rejected.
ImageFile read_image(const std::string& path);

/// Write [1, H, W] as P5 or [3, H, W] as P6. Values are clamped to [0, 1]
/// and quantized to round(v * maxval).
void write_image(const std::string& path, const Tensor& pixels,
                 std::uint32_t maxval = 255);

}  // namespace pad::io
