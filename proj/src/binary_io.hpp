#pragma once

// Little-endian container helpers shared by the VSEG1 and VPAR1 formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "cyclevol/errors.hpp"

namespace cyclevol::detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

// magic | u32 header length | header bytes | payload
struct Container {
    std::string header;
    std::string_view payload;
};

inline std::string pack(std::string_view magic, std::string_view header) {
    std::string out(magic);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.append(header);
    return out;
}

inline Container unpack(std::string_view magic, std::string_view bytes) {
    if (bytes.size() < magic.size() || bytes.substr(0, magic.size()) != magic)
        throw FormatError("bad magic: expected '" + std::string(magic) + "'");
    if (bytes.size() < magic.size() + 4) throw FormatError("truncated header length");
    const auto len = get_u32(reinterpret_cast<const unsigned char*>(bytes.data() + magic.size()));
    const std::size_t start = magic.size() + 4;
    if (bytes.size() - start < len) throw FormatError("truncated header");
    return {std::string(bytes.substr(start, len)), bytes.substr(start + len)};
}

}  // namespace cyclevol::detail
