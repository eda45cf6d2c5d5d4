#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tlc {

// Multi-band image, row-major and channel-last: value(y, x, c) lives at
// data[(y * width + x) * channels + c]. Channel order for RGB-N is R,G,B,N.
struct Raster {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::uint32_t channels = 0;
    std::vector<float> data;

    Raster() = default;
    Raster(std::uint32_t h, std::uint32_t w, std::uint32_t c, float fill = 0.0f)
        : height(h), width(w), channels(c), data(std::size_t{h} * w * c, fill) {}

    std::size_t pixel_count() const noexcept { return std::size_t{height} * width; }

    float& at(std::uint32_t y, std::uint32_t x, std::uint32_t c) {
        return data[(std::size_t{y} * width + x) * channels + c];
    }
    float at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
        return data[(std::size_t{y} * width + x) * channels + c];
    }

    bool operator==(const Raster&) const = default;
};

constexpr std::uint32_t kRgbnChannels = 4;

// Raw tensor file: "TLC1", u32 height, u32 width, u32 channels, then f32
// pixels row-major channel-last. All fields little-endian.
Raster read_raster(const std::filesystem::path& path);
void write_raster(const std::filesystem::path& path, const Raster& raster);

// Axis-aligned sub-window copy.
Raster crop(const Raster& src, std::uint32_t y0, std::uint32_t x0, std::uint32_t h,
            std::uint32_t w);

// Bilinear resampling with pixel-centre alignment. Identity when the size
// already matches.
Raster resize_bilinear(const Raster& src, std::uint32_t h, std::uint32_t w);

}  // namespace tlc
