// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` run configuration. Blank lines and lines starting with
// '#' are ignored; unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lfs/lifelong.hpp"
#include "lfs/netlab.hpp"

namespace lfs {

struct RunConfig {
    GeneratorConfig generator;
    TrainConfig train;
    std::uint64_t base_seed = 1234;

    std::filesystem::path data_dir = "toy";
    std::filesystem::path out_dir = "run";
    std::vector<std::string> tasks;  // empty: every subdirectory of data_dir
    std::string source;              // ordering start; empty: no fixed source
    std::filesystem::path distance_matrix;  // empty: computed from task folders
    bool order_tasks = true;

    std::size_t toy_tasks = 3;
    std::size_t toy_k = 10;

    std::size_t eval_diversity_n = 200;
    std::size_t eval_frechet_n = 500;
    std::uint64_t eval_seed = 2024;
    std::string embedding = "pooled_color";
    std::size_t log_every = 100;

    void validate() const;

    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);
    std::string to_text() const;

    struct KeyDoc {
        std::string key;
        std::string default_value;
        std::string description;
    };
    static std::vector<KeyDoc> documented_keys();
};

}  // namespace lfs
