#include "cyclevol/png.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cyclevol/errors.hpp"

namespace cyclevol {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), n);
}

void no_flush(png_structp) {}

}  // namespace

std::string encode_png(SliceView<float> slice) {
    std::vector<png_byte> pixels(static_cast<std::size_t>(slice.height) * slice.width);
    for (std::size_t i = 0; i < pixels.size(); ++i)
        pixels[i] = static_cast<png_byte>(std::lround(std::clamp(slice.data[i], 0.0f, 1.0f) * 255.0f));

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("png_create_info_struct failed");
    }
    std::string out;
    std::vector<png_bytep> rows(slice.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("PNG encoding failed");
    }
    png_set_write_fn(png, &out, append_bytes, no_flush);
    png_set_IHDR(png, info, slice.width, slice.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    for (int y = 0; y < slice.height; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * slice.width;
    png_set_rows(png, info, rows.data());
    png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

}  // namespace cyclevol
