#include "tlc/preprocess.hpp"

#include <cmath>
#include <fstream>

#include "tlc/error.hpp"

namespace tlc::preprocess {

using nlohmann::json;

json ChannelStats::to_json() const {
    return {{"mean", mean}, {"std", std}, {"n_pixels", n_pixels}};
}

ChannelStats ChannelStats::from_json(const json& doc) {
    ChannelStats s;
    const auto m = doc.at("mean").get<std::vector<double>>();
    const auto d = doc.at("std").get<std::vector<double>>();
    if (m.size() != 4 || d.size() != 4) throw Error("stats need four channels");
    for (std::size_t c = 0; c < 4; ++c) {
        if (!(d[c] > 0.0)) throw Error("stats std must be strictly positive");
        s.mean[c] = m[c];
        s.std[c] = d[c];
    }
    s.n_pixels = doc.at("n_pixels").get<std::uint64_t>();
    return s;
}

void ChannelStats::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write stats file: " + path.string());
    out << to_json().dump(2) << '\n';
}

ChannelStats ChannelStats::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open stats file: " + path.string());
    return from_json(json::parse(in));
}

void StatsAccumulator::add(const Raster& raster) {
    if (raster.channels != 4) throw Error("channel stats need 4-channel rasters");
    // Accumulate the raster as its own shard, then merge: keeps the result
    // independent of how pixels are grouped up to rounding.
    StatsAccumulator local;
    const std::size_t n = raster.pixel_count();
    for (std::size_t p = 0; p < n; ++p) {
        ++local.n_;
        const double inv = 1.0 / static_cast<double>(local.n_);
        for (std::size_t c = 0; c < 4; ++c) {
            const double x = raster.data[p * 4 + c];
            const double delta = x - local.mean_[c];
            local.mean_[c] += delta * inv;
            local.m2_[c] += delta * (x - local.mean_[c]);
        }
    }
    merge(local);
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double n = na + nb;
    for (std::size_t c = 0; c < 4; ++c) {
        const double delta = other.mean_[c] - mean_[c];
        mean_[c] += delta * nb / n;
        m2_[c] += other.m2_[c] + delta * delta * na * nb / n;
    }
    n_ += other.n_;
}

ChannelStats StatsAccumulator::finish() const {
    if (n_ == 0) throw Error("cannot compute channel stats over an empty stream");
    ChannelStats s;
    s.n_pixels = n_;
    for (std::size_t c = 0; c < 4; ++c) {
        s.mean[c] = mean_[c];
        const double sd = std::sqrt(std::max(0.0, m2_[c] / static_cast<double>(n_)));
        if (sd < kStdFloor) {
            s.std[c] = kStdFloor;
            s.clamped = true;
        } else {
            s.std[c] = sd;
        }
    }
    if (s.clamped) warn("zero-variance channel; std clamped to 1e-6");
    return s;
}

ChannelStats compute_channel_stats(std::span<const Raster> train_patches) {
    StatsAccumulator acc;
    for (const auto& r : train_patches) acc.add(r);
    return acc.finish();
}

Raster normalize_patch(const Raster& raster, const ChannelStats& stats) {
    if (raster.channels != 4)
        throw Error("normalize expects 4 channels, got " + std::to_string(raster.channels));
    Raster out = raster;
    const std::size_t n = raster.pixel_count();
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < 4; ++c)
            out.data[p * 4 + c] =
                static_cast<float>((raster.data[p * 4 + c] - stats.mean[c]) / stats.std[c]);
    return out;
}

Raster denormalize_patch(const Raster& raster, const ChannelStats& stats) {
    if (raster.channels != 4)
        throw Error("denormalize expects 4 channels, got " + std::to_string(raster.channels));
    Raster out = raster;
    const std::size_t n = raster.pixel_count();
    for (std::size_t p = 0; p < n; ++p)
        for (std::size_t c = 0; c < 4; ++c)
            out.data[p * 4 + c] =
                static_cast<float>(raster.data[p * 4 + c] * stats.std[c] + stats.mean[c]);
    return out;
}

}  // namespace tlc::preprocess
