#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tlc/data.hpp"

namespace tlc::synth {

// Seasonal synthetic corpus. Every tile is a Voronoi mosaic of LEVEL2 classes;
// each pixel is its class signature for the month plus Gaussian noise.
struct SynthConfig {
    int tiles = 10;
    int classes = 15;  // the first `classes` LEVEL2 classes are painted
    std::uint32_t grid_n = 40;
    std::uint32_t patch_px = 8;
    int regions_per_tile = 48;
    double noise_sigma = 0.02;
    // Seasonal twins differ by twin_delta * sin(2*pi*(m-6)/12) along a fixed direction.
    double twin_delta = 0.15;
    bool change_pair = true;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static SynthConfig from_json(const nlohmann::json& doc);
};

// LEVEL2 index pairs whose month-6 appearance is identical.
std::vector<std::pair<int, int>> twin_pairs(int classes);

// Noise-free RGB-N reflectance of class k in month m (1..12).
std::array<float, 4> class_signature(int k, int month, double twin_delta = 0.15);

struct ChangeTruth {
    std::string tile_id;
    std::uint32_t grid_n = 0;
    std::vector<std::uint8_t> changed;  // row-major, grid_n * grid_n

    nlohmann::json to_json() const;
    static ChangeTruth load(const std::filesystem::path& path);
};

struct SynthResult {
    std::filesystem::path manifest;
    std::vector<data::PatchRecord> records;
    std::vector<std::filesystem::path> tile_stacks;
    // Set when change_pair is on: two stacks of the same area and the
    // generator-known change mask between them.
    std::filesystem::path change_a;
    std::filesystem::path change_b;
    std::filesystem::path change_truth;
};

// Writes manifest.jsonl, rasters/, tiles/ and change/ under out_dir.
SynthResult generate_synthetic_corpus(const SynthConfig& config, const std::filesystem::path& out_dir);

// Painted class index per pixel (row-major, grid_n*patch_px square) of tile `tile`.
std::vector<std::uint8_t> paint_layout(const SynthConfig& config, std::uint64_t tile);

// Area share of each class inside cell (row, col).
std::vector<double> cell_shares(const std::vector<std::uint8_t>& layout, const SynthConfig& config,
                                std::uint32_t row, std::uint32_t col);

}  // namespace tlc::synth
