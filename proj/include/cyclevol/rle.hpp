#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "cyclevol/volume.hpp"

namespace cyclevol {

// Row-major alternating run lengths, starting with a (possibly zero)
// background run.
std::vector<std::uint32_t> rle_encode(const Mask2D& mask);
Mask2D rle_decode(const std::vector<std::uint32_t>& runs, int height, int width);

// {"dims": [H, W], "rle": [...]}
nlohmann::json rle_json(const Mask2D& mask);
Mask2D mask_from_rle_json(const nlohmann::json& j);

}  // namespace cyclevol
