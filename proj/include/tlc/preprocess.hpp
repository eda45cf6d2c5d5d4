#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>

#include <json.hpp>

#include "tlc/raster.hpp"

namespace tlc::preprocess {

inline constexpr double kStdFloor = 1e-6;

// Per-channel population statistics for R,G,B,N.
struct ChannelStats {
    std::array<double, 4> mean{};
    std::array<double, 4> std{1.0, 1.0, 1.0, 1.0};
    std::uint64_t n_pixels = 0;
    bool clamped = false;

    nlohmann::json to_json() const;
    static ChannelStats from_json(const nlohmann::json& doc);
    void save(const std::filesystem::path& path) const;
    static ChannelStats load(const std::filesystem::path& path);
};

// Welford accumulator; shards merge pairwise (Chan et al.).
class StatsAccumulator {
public:
    void add(const Raster& raster);
    void merge(const StatsAccumulator& other);
    std::uint64_t count() const noexcept { return n_; }
    // Rejects an empty accumulator; zero-variance channels clamp to kStdFloor.
    ChannelStats finish() const;

private:
    std::uint64_t n_ = 0;
    std::array<double, 4> mean_{};
    std::array<double, 4> m2_{};
};

ChannelStats compute_channel_stats(std::span<const Raster> train_patches);

// (x - mean) / std per channel.
Raster normalize_patch(const Raster& raster, const ChannelStats& stats);
Raster denormalize_patch(const Raster& raster, const ChannelStats& stats);

}  // namespace tlc::preprocess
