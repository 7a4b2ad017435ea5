// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace lfs {

namespace {

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, -1.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround((c + 1.0f) * 127.5f));
}

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image image_from_chw(std::span<const double> chw, std::size_t channels, std::size_t resolution) {
    if (chw.size() != channels * resolution * resolution) throw std::invalid_argument("image_from_chw: size mismatch");
    Image img(channels, resolution, resolution);
    std::transform(chw.begin(), chw.end(), img.data.begin(), [](double v) { return static_cast<float>(v); });
    return img;
}

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
    if (img.height == height && img.width == width) return img;
    Image out(img.channels, height, width);
    const double sy = static_cast<double>(img.height) / static_cast<double>(height);
    const double sx = static_cast<double>(img.width) / static_cast<double>(width);
    for (std::size_t y = 0; y < height; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < width; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < img.channels; ++c) {
                const double top = (1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
                const double bot = (1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
                out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("write_png: only RGB images are supported");
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng initialization failed");
    }
    std::vector<std::uint8_t> rows(img.height * img.width * 3);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) rows[(y * img.width + x) * 3 + c] = to_byte(img.at(c, y, x));
        }
    }
    std::vector<png_bytep> row_ptrs(img.height);
    for (std::size_t y = 0; y < img.height; ++y) row_ptrs[y] = rows.data() + y * img.width * 3;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw std::runtime_error("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw FormatError(path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng initialization failed");
    }
    std::vector<std::uint8_t> rows;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("failed decoding " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    // Normalize everything to 8-bit RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    rows.resize(stride * height);
    row_ptrs.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) row_ptrs[y] = rows.data() + y * stride;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(3, height, width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(rows[y * stride + x * 3 + c]) / 127.5f - 1.0f;
        }
    }
    return img;
}

Image make_grid(std::span<const Image> images, std::size_t columns, float background) {
    if (images.empty()) return Image(3, 0, 0);
    columns = std::max<std::size_t>(1, std::min(columns, images.size()));
    const std::size_t rows = (images.size() + columns - 1) / columns;
    const Image& first = images.front();
    const std::size_t pad = 2;
    const std::size_t cell_h = first.height + pad, cell_w = first.width + pad;
    Image grid(first.channels, rows * cell_h + pad, columns * cell_w + pad, background);
    for (std::size_t j = 0; j < images.size(); ++j) {
        const Image& img = images[j];
        if (!img.same_shape(first)) throw std::invalid_argument("make_grid: images differ in shape");
        const std::size_t oy = (j / columns) * cell_h + pad, ox = (j % columns) * cell_w + pad;
        for (std::size_t c = 0; c < img.channels; ++c) {
            for (std::size_t y = 0; y < img.height; ++y) {
                for (std::size_t x = 0; x < img.width; ++x) grid.at(c, oy + y, ox + x) = img.at(c, y, x);
            }
        }
    }
    return grid;
}

}  // namespace lfs
