// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "gbmbench/common.hpp"
#include "gbmbench/gzipio.hpp"

namespace gbmbench {

namespace png_detail {

inline void put_u32(std::string& s, uint32_t v) {
    s.push_back(static_cast<char>(v >> 24));
    s.push_back(static_cast<char>(v >> 16));
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    const size_t start = out.size();
    out.append(type, 4);
    out += payload;
    const uint32_t crc = crc32(0, reinterpret_cast<const Bytef*>(out.data() + start),
                               static_cast<uInt>(out.size() - start));
    put_u32(out, crc);
}

inline std::string zlib_compress(const std::string& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string out(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  6) != Z_OK)
        throw IOFailure("png: zlib compress failed");
    out.resize(bound);
    return out;
}

}  // namespace png_detail

/// Encodes 8-bit RGB pixels (row-major, 3 bytes per pixel) as a PNG byte string.
/// Deterministic: fixed zlib level, filter 0 on every row, no ancillary chunks.
inline std::string encode_png_rgb(int64_t width, int64_t height, const std::vector<uint8_t>& rgb) {
    if (static_cast<int64_t>(rgb.size()) != width * height * 3)
        throw Error("png: pixel buffer size mismatch");
    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    png_detail::put_u32(ihdr, static_cast<uint32_t>(width));
    png_detail::put_u32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // no interlace
    png_detail::put_chunk(out, "IHDR", ihdr);
    std::string raw;
    raw.reserve(static_cast<size_t>(height) * (1 + width * 3));
    for (int64_t y = 0; y < height; ++y) {
        raw.push_back(0);  // filter type 0
        raw.append(reinterpret_cast<const char*>(rgb.data() + y * width * 3),
                   static_cast<size_t>(width * 3));
    }
    png_detail::put_chunk(out, "IDAT", png_detail::zlib_compress(raw));
    png_detail::put_chunk(out, "IEND", "");
    return out;
}

inline void write_png_rgb(const fs::path& path, int64_t width, int64_t height,
                          const std::vector<uint8_t>& rgb) {
    ensure_dir(path.parent_path());
    atomic_write(path, encode_png_rgb(width, height, rgb));
}

struct PngImage {
    int64_t width = 0, height = 0;
    std::vector<uint8_t> rgb;  // 3 bytes per pixel

    uint8_t r(int64_t y, int64_t x) const { return rgb[(y * width + x) * 3]; }
    uint8_t g(int64_t y, int64_t x) const { return rgb[(y * width + x) * 3 + 1]; }
    uint8_t b(int64_t y, int64_t x) const { return rgb[(y * width + x) * 3 + 2]; }
};

/// Decodes 8-bit RGB or grayscale PNGs with standard row filters. Sufficient
/// to audit this library's own output in tests.
inline PngImage decode_png(const std::string& bytes) {
    using namespace png_detail;
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw IOFailure("png: bad signature");
    PngImage img;
    int color_type = -1;
    std::string idat;
    size_t pos = 8;
    while (pos + 12 <= bytes.size()) {
        const uint32_t len = get_u32(reinterpret_cast<const uint8_t*>(bytes.data() + pos));
        const std::string type = bytes.substr(pos + 4, 4);
        const char* payload = bytes.data() + pos + 8;
        if (type == "IHDR") {
            img.width = get_u32(reinterpret_cast<const uint8_t*>(payload));
            img.height = get_u32(reinterpret_cast<const uint8_t*>(payload + 4));
            const int bit_depth = static_cast<uint8_t>(payload[8]);
            color_type = static_cast<uint8_t>(payload[9]);
            if (bit_depth != 8 || (color_type != 2 && color_type != 0))
                throw IOFailure("png: unsupported format (need 8-bit gray or RGB)");
        } else if (type == "IDAT") {
            idat.append(payload, len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (img.width <= 0 || img.height <= 0) throw IOFailure("png: missing IHDR");
    const int chans = color_type == 2 ? 3 : 1;
    std::string raw = gzip_decompress(idat);  // accepts zlib streams
    const int64_t stride = img.width * chans;
    if (static_cast<int64_t>(raw.size()) != img.height * (stride + 1))
        throw IOFailure("png: unexpected decompressed size");
    std::vector<uint8_t> flat(static_cast<size_t>(img.height * stride));
    for (int64_t y = 0; y < img.height; ++y) {
        const uint8_t filter = static_cast<uint8_t>(raw[y * (stride + 1)]);
        const uint8_t* src = reinterpret_cast<const uint8_t*>(raw.data() + y * (stride + 1) + 1);
        uint8_t* dst = flat.data() + y * stride;
        const uint8_t* up = y > 0 ? flat.data() + (y - 1) * stride : nullptr;
        for (int64_t x = 0; x < stride; ++x) {
            const int a = x >= chans ? dst[x - chans] : 0;
            const int b = up ? up[x] : 0;
            const int c = (up && x >= chans) ? up[x - chans] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw IOFailure("png: unknown filter");
            }
            dst[x] = static_cast<uint8_t>(v & 0xff);
        }
    }
    img.rgb.resize(static_cast<size_t>(img.width * img.height * 3));
    if (chans == 3) {
        img.rgb = std::move(flat);
    } else {
        for (int64_t i = 0; i < img.width * img.height; ++i)
            img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = flat[i];
    }
    return img;
}

inline PngImage read_png(const fs::path& path) { return decode_png(read_text_file(path)); }

}  // namespace gbmbench
