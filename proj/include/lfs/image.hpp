// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace lfs {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Planar CHW float image. Pixel values live in [-1, 1] by convention.
struct Image {
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f) : channels(c), height(h), width(w), data(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
    bool same_shape(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }
};

Image image_from_chw(std::span<const double> chw, std::size_t channels, std::size_t resolution);

// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

// 8-bit RGB PNG. Values are clamped to [-1, 1] and mapped to [0, 255].
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// Tiles images row-major into a grid with the given column count.
Image make_grid(std::span<const Image> images, std::size_t columns, float background = -1.0f);

}  // namespace lfs
