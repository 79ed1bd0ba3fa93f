#include <zlib.h>

#include <cstring>

#include "maialab/scene.hpp"

namespace maialab::scene {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>(v & 0xFF));
}

void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const size_t crc_start = out.size();
    out.append(type, 4);
    out += payload;
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0, reinterpret_cast<const Bytef*>(out.data() + crc_start), static_cast<uInt>(out.size() - crc_start)));
    put_u32(out, crc);
}

}  // namespace

std::string encode_png(const Pixels& pixels) {
    if (pixels.width <= 0 || pixels.height <= 0)
        fail("RenderError", "cannot encode an empty pixel buffer");

    // Raw scanlines with filter byte 0; fixed-level deflate keeps output stable.
    std::string raw;
    raw.reserve(static_cast<size_t>(pixels.height) * (static_cast<size_t>(pixels.width) * 3 + 1));
    for (int y = 0; y < pixels.height; ++y) {
        raw.push_back('\0');
        raw.append(reinterpret_cast<const char*>(pixels.rgb.data() + static_cast<size_t>(y) * pixels.width * 3),
                   static_cast<size_t>(pixels.width) * 3);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string compressed(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  6) != Z_OK)
        fail("RenderError", "deflate failed while encoding PNG");
    compressed.resize(bound);

    std::string ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(pixels.width));
    put_u32(ihdr, static_cast<std::uint32_t>(pixels.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace

    std::string out("\x89PNG\r\n\x1a\n", 8);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", compressed);
    put_chunk(out, "IEND", "");
    return out;
}

}  // namespace maialab::scene
