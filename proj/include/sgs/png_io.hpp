#pragma once

#include <string>

#include "sgs/image.hpp"

namespace sgs {

// 8-bit PNG read; returns 1 (gray), 3 (rgb) or 4 (rgba) channels scaled to
// [0, 1]. Palette images expand to rgb, 16-bit files are reduced.
Image read_png(const std::string& path);

// 8-bit PNG write from a 1-, 3- or 4-channel image; values are clamped to
// [0, 1] and rounded.
void write_png(const Image& image, const std::string& path);

}  // namespace sgs
