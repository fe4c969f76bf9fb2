#pragma once

#include <png.h>

#include <cstdio>
#include <cstdint>
#include <string>
#include <vector>

#include "toolnet/common.hpp"

namespace toolnet {

// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
    int w = 0;
    int h = 0;
    int ch = 1;
    std::vector<uint8_t> px;

    Image8() = default;
    Image8(int width, int height, int channels)
        : w(width), h(height), ch(channels),
          px(static_cast<size_t>(width) * height * channels, 0) {}

    uint8_t& at(int y, int x, int c) {
        return px[(static_cast<size_t>(y) * w + x) * ch + c];
    }
    uint8_t at(int y, int x, int c) const {
        return px[(static_cast<size_t>(y) * w + x) * ch + c];
    }
};

namespace detail {

struct FileHandle {
    FILE* f = nullptr;
    explicit FileHandle(const std::string& path, const char* mode) : f(fopen(path.c_str(), mode)) {}
    ~FileHandle() {
        if (f) fclose(f);
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
};

}  // namespace detail

// Decodes an 8-bit PNG as gray or RGB (alpha stripped, palettes expanded,
// 16-bit depth reduced). Throws with the offending path on any failure.
inline Image8 read_png(const std::string& path) {
    detail::FileHandle fh(path, "rb");
    if (!fh.f) throw std::runtime_error("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png decoder setup failed for: " + path);
    }

    Image8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("corrupt or unreadable PNG: " + path);
    }

    png_init_io(png, fh.f);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("unsupported channel count in PNG: " + path);
    }

    img = Image8(static_cast<int>(w), static_cast<int>(h), channels);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y)
        rows[y] = img.px.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// Writes an 8-bit gray or RGB PNG. Fixed settings, so identical pixels yield
// identical files.
inline void write_png(const std::string& path, const Image8& img) {
    if (img.ch != 1 && img.ch != 3)
        throw std::invalid_argument("write_png: image must have 1 or 3 channels");
    detail::FileHandle fh(path, "wb");
    if (!fh.f) throw std::runtime_error("cannot write image: " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png encoder setup failed for: " + path);
    }

    std::vector<png_const_bytep> rows(static_cast<size_t>(img.h));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png encode failed: " + path);
    }

    png_init_io(png, fh.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.ch == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.h; ++y)
        rows[static_cast<size_t>(y)] = img.px.data() + static_cast<size_t>(y) * img.w * img.ch;
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace toolnet
