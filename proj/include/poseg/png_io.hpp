#pragma once

#include <cstdint>
#include <string>

#include "poseg/tensor.hpp"

namespace poseg {

// 8-bit PNG I/O for corpus images and masks. Tensors are [C,H,W] with C of 1
// (grayscale) or 3 (RGB). Reading a missing file throws MissingFile; any
// decode failure (bad signature, truncated stream, CRC error) throws
// ChecksumMismatch.
Tensor<uint8_t> read_png(const std::string& path);
void write_png(const std::string& path, const Tensor<uint8_t>& img);

}  // namespace poseg
