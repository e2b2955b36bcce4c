#pragma once

#include <string>

#include "lensmtf/geometry.hpp"

namespace lensmtf::geometry {

// 16-bit binary PGM (P5, maxval 65535, big-endian samples). Intensities map
// to [0, 1] by division by 65535, so a saturated sample reads back as exactly 1.0.
// The pixel pitch is not part of the format and must be supplied by the caller.
GrayImage read_pgm16(const std::string& path, double pixel_pitch_um = 1.0);

void write_pgm16(const GrayImage& image, const std::string& path);

} // namespace lensmtf::geometry
