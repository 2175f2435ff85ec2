#pragma once

// Minimal PNG reader/writer over zlib: 8-bit RGB (color type 2) and 8-bit
// grayscale (color type 0), which is all the pipeline emits. Compression
// settings are fixed so identical pixels always produce identical bytes.

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aef/image.hpp"

namespace aef {

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4], const uint8_t* data, size_t n) {
    put_u32(out, uint32_t(n));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data, data + n);
    const uint32_t crc = uint32_t(crc32(0, out.data() + start, uInt(out.size() - start)));
    put_u32(out, crc);
}

inline std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& raw) {
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<uint8_t> comp(bound);
    if (compress2(comp.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    comp.resize(bound);
    return comp;
}

inline std::vector<uint8_t> zlib_inflate(const uint8_t* data, size_t n, size_t expect) {
    std::vector<uint8_t> raw(expect);
    uLongf len = uLong(expect);
    if (uncompress(raw.data(), &len, data, uLong(n)) != Z_OK || len != expect)
        throw std::runtime_error("png: inflate failed");
    return raw;
}

}  // namespace detail

// channels: 3 = RGB, 1 = grayscale. Rows are filter-type-0 scanlines.
inline void write_png_raw(const std::string& path, const uint8_t* pixels, int h, int w, int channels) {
    if (channels != 1 && channels != 3) throw std::runtime_error("write_png: channels must be 1 or 3");
    std::vector<uint8_t> raw;
    raw.reserve(size_t(h) * (size_t(w) * channels + 1));
    for (int y = 0; y < h; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), pixels + size_t(y) * w * channels, pixels + size_t(y + 1) * w * channels);
    }
    const auto comp = detail::zlib_deflate(raw);

    std::vector<uint8_t> out;
    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    uint8_t ihdr[13];
    ihdr[0] = uint8_t(uint32_t(w) >> 24);
    ihdr[1] = uint8_t(uint32_t(w) >> 16);
    ihdr[2] = uint8_t(uint32_t(w) >> 8);
    ihdr[3] = uint8_t(w);
    ihdr[4] = uint8_t(uint32_t(h) >> 24);
    ihdr[5] = uint8_t(uint32_t(h) >> 16);
    ihdr[6] = uint8_t(uint32_t(h) >> 8);
    ihdr[7] = uint8_t(h);
    ihdr[8] = 8;                                  // bit depth
    ihdr[9] = channels == 3 ? 2 : 0;              // color type
    ihdr[10] = ihdr[11] = ihdr[12] = 0;           // compression/filter/interlace
    detail::png_chunk(out, "IHDR", ihdr, 13);
    detail::png_chunk(out, "IDAT", comp.data(), comp.size());
    detail::png_chunk(out, "IEND", nullptr, 0);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("write_png: cannot write " + path);
}

struct PngData {
    int h = 0, w = 0, channels = 0;
    std::vector<uint8_t> pixels;  // interleaved rows
};

inline PngData read_png_raw(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_png: cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw std::runtime_error("read_png: not a PNG: " + path);

    PngData img;
    int bit_depth = 0, color_type = -1, interlace = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= buf.size()) {
        const uint32_t len = detail::get_u32(buf.data() + pos);
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const uint8_t* data = buf.data() + pos + 8;
        if (pos + 12 + len > buf.size()) throw std::runtime_error("read_png: truncated chunk in " + path);
        if (std::memcmp(type, "IHDR", 4) == 0) {
            img.w = int(detail::get_u32(data));
            img.h = int(detail::get_u32(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (bit_depth != 8 || (color_type != 0 && color_type != 2) || interlace != 0)
        throw std::runtime_error("read_png: unsupported format (need 8-bit gray or RGB): " + path);
    img.channels = color_type == 2 ? 3 : 1;

    const size_t stride = size_t(img.w) * img.channels;
    auto raw = detail::zlib_inflate(idat.data(), idat.size(), size_t(img.h) * (stride + 1));

    // de-filter
    img.pixels.assign(size_t(img.h) * stride, 0);
    const int bpp = img.channels;
    for (int y = 0; y < img.h; ++y) {
        const uint8_t filter = raw[size_t(y) * (stride + 1)];
        const uint8_t* src = raw.data() + size_t(y) * (stride + 1) + 1;
        uint8_t* dst = img.pixels.data() + size_t(y) * stride;
        const uint8_t* up = y > 0 ? img.pixels.data() + size_t(y - 1) * stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            const int a = i >= size_t(bpp) ? dst[i - bpp] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= size_t(bpp)) ? up[i - bpp] : 0;
            int v = src[i];
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
                default: throw std::runtime_error("read_png: bad filter type in " + path);
            }
            dst[i] = uint8_t(v);
        }
    }
    return img;
}

// --- Image / MaskImage adapters (8-bit quantization at the file boundary) ---

inline void write_png(const std::string& path, const Image& im) {
    std::vector<uint8_t> inter(size_t(3) * im.h * im.w);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x)
            for (int c = 0; c < 3; ++c)
                inter[size_t((int64_t(y) * im.w + x) * 3 + c)] =
                    uint8_t(std::lround(std::clamp(im.at(c, y, x), 0.f, 1.f) * 255.f));
    write_png_raw(path, inter.data(), im.h, im.w, 3);
}

inline void write_png(const std::string& path, const MaskImage& m) {
    std::vector<uint8_t> gray(size_t(m.h) * m.w);
    for (size_t i = 0; i < gray.size(); ++i) gray[i] = m.m[i] ? 255 : 0;
    write_png_raw(path, gray.data(), m.h, m.w, 1);
}

inline Image read_png_image(const std::string& path) {
    const auto p = read_png_raw(path);
    Image im(p.h, p.w);
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const uint8_t v = p.channels == 3 ? p.pixels[size_t((int64_t(y) * p.w + x) * 3 + c)]
                                                  : p.pixels[size_t(int64_t(y) * p.w + x)];
                im.at(c, y, x) = float(v) / 255.f;
            }
    return im;
}

inline MaskImage read_png_mask(const std::string& path) {
    const auto p = read_png_raw(path);
    MaskImage m(p.h, p.w);
    for (int y = 0; y < p.h; ++y)
        for (int x = 0; x < p.w; ++x) {
            const uint8_t v = p.channels == 1 ? p.pixels[size_t(int64_t(y) * p.w + x)]
                                              : p.pixels[size_t((int64_t(y) * p.w + x) * 3)];
            m.at(y, x) = v >= 128 ? 1 : 0;
        }
    return m;
}

}  // namespace aef
