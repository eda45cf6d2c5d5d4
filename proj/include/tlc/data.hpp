#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tlc/ontology.hpp"
#include "tlc/raster.hpp"

namespace tlc::data {

inline constexpr int kMonths = 12;
inline constexpr int kDefaultReferenceMonth = 6;

struct GridPos {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    bool operator==(const GridPos&) const = default;
};

// One geolocated patch. Month rasters are keyed 1..12 (15th of each month).
// With `tile_grid_n` set, each month path names a whole tile raster and the
// patch is cell (row, col) of a tile_grid_n x tile_grid_n grid; otherwise the
// path is the patch raster itself.
struct PatchRecord {
    std::string patch_id;
    std::string tile_id;
    GridPos grid_pos;
    std::map<int, std::filesystem::path> rasters;
    std::optional<std::uint32_t> tile_grid_n;
    ontology::LabelDistribution label = ontology::LabelDistribution::trusted(
        ontology::Level::Level2, std::vector<double>(15, 0.0));

    bool has_all_months() const;
    std::vector<int> missing_months() const;
};

struct TileSpec {
    std::string tile_id;
    double extent_m = 8000.0;
    std::uint32_t grid_n = 40;
    std::uint32_t patch_px = 64;

    std::size_t patch_count() const noexcept { return std::size_t{grid_n} * grid_n; }
    double patch_ground_size_m() const noexcept { return extent_m / grid_n; }
};

struct TilingOptions {
    bool resample = false;
};

struct TilePatch {
    GridPos pos;
    Raster raster;
};

// Row-major decomposition into grid_n^2 disjoint blocks.
std::vector<TilePatch> tile_to_patches(const TileSpec& tile, const Raster& raster,
                                       const TilingOptions& options = {});
// Inverse of tile_to_patches for equally sized blocks.
Raster reassemble_tile(const std::vector<TilePatch>& patches, std::uint32_t grid_n);

struct ManifestOptions {
    bool strict = false;  // check that every referenced raster exists
};

// JSON-lines manifest; relative raster paths resolve against the manifest's
// directory. Errors name the 1-based line and the offending field.
std::vector<PatchRecord> load_manifest(const std::filesystem::path& path,
                                       const ManifestOptions& options = {});
void write_manifest(const std::filesystem::path& path, const std::vector<PatchRecord>& records);
nlohmann::json record_to_json(const PatchRecord& record,
                              const std::filesystem::path& relative_to = {});

struct SplitFractions {
    double train = 0.70;
    double val = 0.20;
    double test = 0.10;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    SplitFractions fractions;
    // Largest |split class share - corpus class share| over classes and splits.
    double max_class_deviation = 0.0;
    std::vector<std::string> warnings;

    nlohmann::json to_json() const;
    static DatasetSplit from_json(const nlohmann::json& doc);
};

inline constexpr double kDefaultSplitTolerance = 0.02;

// Class-mass-preserving split. Records are grouped by dominant class, each
// group is shuffled with `seed` and dealt out by largest remaining quota, so
// split sizes stay within one record of their targets.
DatasetSplit stratified_split(const std::vector<PatchRecord>& records,
                              const SplitFractions& fractions, std::uint64_t seed,
                              double tolerance = kDefaultSplitTolerance);

// Per-split class share deviation against the whole corpus.
double class_mass_deviation(const std::vector<PatchRecord>& records, const DatasetSplit& split);

std::vector<PatchRecord> select(const std::vector<PatchRecord>& records,
                                const std::vector<std::string>& ids);

// A tile observed over several months; month paths name whole-tile rasters.
// Stored as JSON: {"tile_id", "grid_n", "patch_px", "extent_m", "months": {"1": path, ...}}.
struct TileStack {
    TileSpec spec;
    std::map<int, std::filesystem::path> months;

    // One record per grid cell in row-major order, label left empty.
    std::vector<PatchRecord> cell_records() const;
    nlohmann::json to_json(const std::filesystem::path& relative_to = {}) const;
    void save(const std::filesystem::path& path) const;
    static TileStack load(const std::filesystem::path& path);
};

// Reads patch rasters for records, resampled to patch_px. Keeps a small LRU
// of whole tile rasters since many records share one file. Not thread-safe.
class PatchReader {
public:
    explicit PatchReader(std::uint32_t patch_px, std::size_t cache_capacity = 48);

    Raster read(const PatchRecord& record, int month);
    std::uint32_t patch_px() const noexcept { return patch_px_; }

private:
    std::shared_ptr<const Raster> load(const std::filesystem::path& path);

    std::uint32_t patch_px_;
    std::size_t capacity_;
    std::list<std::string> order_;
    std::unordered_map<std::string, std::shared_ptr<const Raster>> cache_;
};

}  // namespace tlc::data
