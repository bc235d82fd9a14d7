/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tgan/datagen.hpp"

// On-disk dataset layout produced by `tgan datagen`:
//
//   <out>/manifest.json         counts, config echo, per-shard sha256
//   <out>/examples-NNNNN.tgs    training examples
//   <out>/textures-NNNNN.tgs    external texture crops
//
// Shards are little-endian binary records behind an 8-byte magic.
namespace tgan::datagen {

struct ShardInfo {
    std::string file;
    std::size_t count = 0;
    std::string sha256;
};

std::vector<std::uint8_t> encode_example_shard(std::span<const TrainingExample> examples);
std::vector<TrainingExample> decode_example_shard(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_texture_shard(std::span<const TextureExample> textures);
std::vector<TextureExample> decode_texture_shard(std::span<const std::uint8_t> bytes);

struct DatagenJob {
    std::filesystem::path root;
    std::filesystem::path out;
    int resolution = 128;
    SketchMethod sketch = SketchMethod::mask_canny;
    MaskMode mask_mode = MaskMode::white_background;
    int patches = 1;
    std::uint64_t seed = 0;
    int texture_crops = 50;
    std::size_t shard_size = 256;
};

struct DatagenSummary {
    std::size_t examples = 0;
    std::size_t rejected = 0;
    std::size_t textures = 0;
    std::vector<ShardInfo> shards;
};

/// Reads <root>/photos (and optional masks/, textures/), writes shards and manifest.json.
DatagenSummary run_datagen(const DatagenJob& job);

struct Dataset {
    int resolution = 0;
    std::vector<TrainingExample> examples;
    std::vector<TextureExample> textures;
};

/// Loads every shard listed in <dir>/manifest.json after verifying its checksum.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace tgan::datagen
