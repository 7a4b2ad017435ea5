// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary modulator checkpoints (little-endian):
//   "LEFT" | u32 version | str task_id | u32 rank | u8 with_bias | u8 act | u32 layers
//   per layer: str name | u8 kind (0 conv, 1 fc) | u32 dims (c_out c_in k | d_out d_in)
//              | f32 factors, row-major, in for_each_factor order
// where str is a u32 byte length followed by UTF-8 bytes.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lfs/image.hpp"
#include "lfs/modulator_set.hpp"

namespace lfs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_modulators(const ModulatorSet<float>& set);
ModulatorSet<float> decode_modulators(std::span<const std::uint8_t> bytes);

void save_modulators(const ModulatorSet<float>& set, const std::filesystem::path& path);
ModulatorSet<float> load_modulators(const std::filesystem::path& path);

// Header and per-layer metadata bytes, excluding factor payload.
std::size_t checkpoint_header_size(const ModulatorSet<float>& set);
// Header size plus 4 bytes per modulator parameter.
std::size_t checkpoint_size(const ModulatorSet<float>& set);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace lfs
