#pragma once

#include <string>

#include "cyclevol/volume.hpp"

namespace cyclevol {

// 8-bit grayscale PNG of a [0,1] slice, round(255 * I).
std::string encode_png(SliceView<float> slice);

}  // namespace cyclevol
