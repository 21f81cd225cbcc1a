#include "cyclevol/rle.hpp"

#include "cyclevol/errors.hpp"

namespace cyclevol {

std::vector<std::uint32_t> rle_encode(const Mask2D& mask) {
    std::vector<std::uint32_t> runs;
    std::uint8_t current = 0;
    std::uint32_t length = 0;
    for (std::uint8_t v : mask.data) {
        const std::uint8_t bit = v ? 1 : 0;
        if (bit != current) {
            runs.push_back(length);
            current = bit;
            length = 0;
        }
        ++length;
    }
    runs.push_back(length);
    return runs;
}

Mask2D rle_decode(const std::vector<std::uint32_t>& runs, int height, int width) {
    if (height < 0 || width < 0) throw ValidationError("negative mask dims");
    Mask2D mask(height, width);
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (std::uint32_t run : runs) {
        if (run > mask.data.size() - pos) throw ValidationError("run lengths exceed the mask size");
        std::fill_n(mask.data.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
        pos += run;
        value ^= 1;
    }
    if (pos != mask.data.size())
        throw ValidationError("run lengths cover " + std::to_string(pos) + " of " + std::to_string(mask.data.size()) +
                              " pixels");
    return mask;
}

nlohmann::json rle_json(const Mask2D& mask) {
    return {{"dims", {mask.height, mask.width}}, {"rle", rle_encode(mask)}};
}

Mask2D mask_from_rle_json(const nlohmann::json& j) {
    try {
        const auto dims = j.at("dims").get<std::vector<int>>();
        if (dims.size() != 2) throw ValidationError("dims must be [H, W]");
        return rle_decode(j.at("rle").get<std::vector<std::uint32_t>>(), dims[0], dims[1]);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed RLE mask: ") + e.what());
    }
}

}  // namespace cyclevol
