// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

namespace lfs {

namespace {

constexpr std::array<const char*, 6> kShapeNames = {"disc", "square", "triangle", "ring", "cross", "diamond"};

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
    const double c = v * s;
    const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    const double m = v - c;
    std::array<double, 3> rgb{};
    switch (static_cast<int>(h)) {
    case 0: rgb = {c, x, 0}; break;
    case 1: rgb = {x, c, 0}; break;
    case 2: rgb = {0, c, x}; break;
    case 3: rgb = {0, x, c}; break;
    case 4: rgb = {x, 0, c}; break;
    default: rgb = {c, 0, x}; break;
    }
    for (double& ch : rgb) ch = 2.0 * (ch + m) - 1.0;
    return rgb;
}

// Inside test in shape-local coordinates scaled to unit size.
bool inside(ToyShape shape, double u, double v) {
    switch (shape) {
    case ToyShape::Disc: return u * u + v * v <= 1.0;
    case ToyShape::Square: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case ToyShape::Triangle: return v <= 0.8 && std::abs(u) <= (v + 1.0) / 1.8;
    case ToyShape::Ring: {
        const double r2 = u * u + v * v;
        return r2 <= 1.0 && r2 >= 0.36;
    }
    case ToyShape::Cross: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case ToyShape::Diamond: return std::abs(u) + std::abs(v) <= 1.0;
    }
    return false;
}

}  // namespace

ToyTaskStyle toy_task_style(std::size_t t) {
    ToyTaskStyle s;
    s.shape = static_cast<ToyShape>(t % kShapeNames.size());
    // Golden-angle hue spacing keeps successive tasks far apart in color.
    s.hue = std::fmod(20.0 + 137.508 * static_cast<double>(t), 360.0);
    const auto bg = hsv_to_rgb(s.hue + 180.0, 0.35, t % 2 == 0 ? 0.25 : 0.8);
    std::copy(bg.begin(), bg.end(), s.background);
    char name[64];
    std::snprintf(name, sizeof(name), "task%zu_%s", t, kShapeNames[t % kShapeNames.size()]);
    s.name = name;
    return s;
}

std::vector<Image> render_toy_task(const ToyTaskStyle& style, std::size_t k, std::size_t resolution, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Image> out;
    out.reserve(k);
    const double res = static_cast<double>(resolution);
    constexpr int kSuper = 4;  // supersampling per axis
    for (std::size_t j = 0; j < k; ++j) {
        const double scale = res * (0.22 + 0.12 * unit(rng));
        const double cx = res * (0.35 + 0.3 * unit(rng));
        const double cy = res * (0.35 + 0.3 * unit(rng));
        const double angle = (unit(rng) - 0.5) * 0.6;
        const auto fg = hsv_to_rgb(style.hue + (unit(rng) - 0.5) * 40.0, 0.75 + 0.25 * unit(rng), 0.8 + 0.2 * unit(rng));
        const double shade = (unit(rng) - 0.5) * 0.2;
        const double ca = std::cos(angle), sa = std::sin(angle);
        Image img(3, resolution, resolution);
        for (std::size_t y = 0; y < resolution; ++y) {
            for (std::size_t x = 0; x < resolution; ++x) {
                int hits = 0;
                for (int sy = 0; sy < kSuper; ++sy) {
                    for (int sx = 0; sx < kSuper; ++sx) {
                        const double px = static_cast<double>(x) + (sx + 0.5) / kSuper - cx;
                        const double py = static_cast<double>(y) + (sy + 0.5) / kSuper - cy;
                        const double u = (ca * px + sa * py) / scale;
                        const double v = (-sa * px + ca * py) / scale;
                        hits += inside(style.shape, u, v) ? 1 : 0;
                    }
                }
                const double cover = static_cast<double>(hits) / (kSuper * kSuper);
                const double grad = shade * (static_cast<double>(y) / res - 0.5);
                for (std::size_t c = 0; c < 3; ++c) {
                    const double value = cover * fg[c] + (1.0 - cover) * (style.background[c] + grad);
                    img.at(c, y, x) = static_cast<float>(std::clamp(value, -1.0, 1.0));
                }
            }
        }
        out.push_back(std::move(img));
    }
    return out;
}

std::vector<std::string> make_toy_tasks(const std::filesystem::path& out_dir, std::size_t n_tasks, std::size_t k,
                                        std::size_t resolution, std::uint64_t seed) {
    if (n_tasks == 0 || k == 0) throw std::invalid_argument("make-toy needs at least one task and one image");
    std::vector<std::string> names;
    for (std::size_t t = 0; t < n_tasks; ++t) {
        const ToyTaskStyle style = toy_task_style(t);
        const std::filesystem::path dir = out_dir / style.name;
        std::filesystem::create_directories(dir);
        const auto images = render_toy_task(style, k, resolution, seed * 1000003ull + t);
        for (std::size_t j = 0; j < images.size(); ++j) {
            char file[32];
            std::snprintf(file, sizeof(file), "img_%02zu.png", j);
            write_png(dir / file, images[j]);
        }
        names.push_back(style.name);
    }
    return names;
}

}  // namespace lfs
