// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural few-shot tasks: each task renders one colored shape kind over a
// task-specific background, with seeded per-image jitter.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfs/image.hpp"

namespace lfs {

enum class ToyShape : std::uint8_t { Disc, Square, Triangle, Ring, Cross, Diamond };

struct ToyTaskStyle {
    std::string name;
    ToyShape shape = ToyShape::Disc;
    double hue = 0.0;          // center of the hue band, degrees
    double background[3] = {};  // RGB in [-1, 1]
};

// Style of task index t (cycles through shapes and spreads hues).
ToyTaskStyle toy_task_style(std::size_t t);

std::vector<Image> render_toy_task(const ToyTaskStyle& style, std::size_t k, std::size_t resolution, std::uint64_t seed);

// Writes <out_dir>/<name>/img_XX.png for every task; returns task names in creation order.
std::vector<std::string> make_toy_tasks(const std::filesystem::path& out_dir, std::size_t n_tasks, std::size_t k,
                                        std::size_t resolution, std::uint64_t seed);

}  // namespace lfs
