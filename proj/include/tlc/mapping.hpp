#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlc/data.hpp"
#include "tlc/models.hpp"
#include "tlc/ontology.hpp"

namespace tlc::mapping {

// Per-cell prediction grid of one tile, row-major.
struct LulcMap {
    std::string tile_id;
    std::uint32_t grid_n = 0;
    ontology::Level level = ontology::Level::Level2;
    std::vector<int> months;  // months the model read
    std::vector<std::size_t> cells;
    std::vector<ontology::LabelDistribution> dists;

    std::size_t at(std::uint32_t row, std::uint32_t col) const { return cells.at(std::size_t{row} * grid_n + col); }
    // {"tile_id", "grid_n", "level", "months", "legend", "cells", "dists"?}
    nlohmann::json to_json(bool with_dists = true) const;
    static LulcMap from_json(const nlohmann::json& doc);
    static LulcMap load(const std::filesystem::path& path);
};

LulcMap predict_map(const data::TileStack& tile, const models::Model& model);

// Assembles a map from predictions listed in row-major tiling order.
LulcMap assemble_map(const std::string& tile_id, std::uint32_t grid_n,
                     std::vector<ontology::LabelDistribution> predictions);

enum class CellState : std::uint8_t { Unchanged = 0, Changed = 1, Uncertain = 2 };

struct CellChange {
    CellState state = CellState::Unchanged;
    std::size_t from = 0;
    std::size_t to = 0;
};

struct ChangeMap {
    std::string tile_id;
    std::uint32_t grid_n = 0;
    ontology::Level level = ontology::Level::Level2;
    double confidence_floor = 0.5;
    std::vector<CellChange> cells;

    std::vector<std::uint8_t> changed_mask() const;
    std::size_t count(CellState state) const;
    nlohmann::json to_json() const;
};

inline constexpr double kDefaultConfidenceFloor = 0.5;

// A cell changes when the dominant classes differ and both dominant
// probabilities reach the floor; differing classes below the floor are uncertain.
ChangeMap change_detect(const LulcMap& a, const LulcMap& b, double confidence_floor = kDefaultConfidenceFloor);

// Intersection over union of two equally sized 0/1 masks; 1.0 when both are empty.
double mask_iou(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth);

// 8-bit RGB PNG; rgb holds width*height*3 bytes, row-major.
void write_png(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height,
               const std::vector<std::uint8_t>& rgb);

// Each cell becomes a cell_px square in its legend colour.
void render_map_png(const LulcMap& map, const std::filesystem::path& path, std::uint32_t cell_px = 8);
void render_change_png(const ChangeMap& map, const std::filesystem::path& path, std::uint32_t cell_px = 8);

// Writes `<stem>.json` and `<stem>.png` for an output path given with either extension.
std::filesystem::path json_path_for(const std::filesystem::path& out);
std::filesystem::path png_path_for(const std::filesystem::path& out);

}  // namespace tlc::mapping
