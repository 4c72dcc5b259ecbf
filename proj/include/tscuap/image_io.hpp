#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tscuap/core.hpp"

namespace tscuap {

/// Decodes an 8- or 16-bit PNG into [0,1] floats. Gray stays 1-channel,
/// RGB/RGBA become 3-channel (alpha dropped).
Array3 read_png(const std::string& path);

/// Encodes 8-bit interleaved pixels (channels 1 or 3).
void write_png(const std::string& path, int h, int w, int c, const std::vector<std::uint8_t>& pixels);

/// Quantizes [0,1] values (clamped) to 8 bits and writes them.
void write_png(const std::string& path, const Array3& image01);

}  // namespace tscuap
