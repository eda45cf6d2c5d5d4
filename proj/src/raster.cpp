#include "tlc/raster.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "tlc/error.hpp"

namespace tlc {

static_assert(std::endian::native == std::endian::little,
              "raw tensor I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic{'T', 'L', 'C', '1'};

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

Raster read_raster(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open raster: " + path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw Error("not a TLC1 raster: " + path.string());
    Raster r;
    r.height = read_u32(in);
    r.width = read_u32(in);
    r.channels = read_u32(in);
    if (!in) throw Error("truncated raster header: " + path.string());
    if (r.height == 0 || r.width == 0 || r.channels == 0)
        throw Error("raster has a zero dimension: " + path.string());
    r.data.resize(std::size_t{r.height} * r.width * r.channels);
    in.read(reinterpret_cast<char*>(r.data.data()),
            static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    if (!in) throw Error("truncated raster payload: " + path.string());
    return r;
}

void write_raster(const std::filesystem::path& path, const Raster& raster) {
    if (raster.data.size() != std::size_t{raster.height} * raster.width * raster.channels)
        throw Error("raster payload does not match its dimensions");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write raster: " + path.string());
    out.write(kMagic.data(), kMagic.size());
    write_u32(out, raster.height);
    write_u32(out, raster.width);
    write_u32(out, raster.channels);
    out.write(reinterpret_cast<const char*>(raster.data.data()),
              static_cast<std::streamsize>(raster.data.size() * sizeof(float)));
    if (!out) throw Error("failed writing raster: " + path.string());
}

Raster crop(const Raster& src, std::uint32_t y0, std::uint32_t x0, std::uint32_t h,
            std::uint32_t w) {
    if (y0 + h > src.height || x0 + w > src.width) throw Error("crop window outside raster");
    Raster out(h, w, src.channels);
    const std::size_t row_len = std::size_t{w} * src.channels;
    for (std::uint32_t y = 0; y < h; ++y) {
        const float* from = &src.data[(std::size_t{y0 + y} * src.width + x0) * src.channels];
        std::memcpy(&out.data[y * row_len], from, row_len * sizeof(float));
    }
    return out;
}

Raster resize_bilinear(const Raster& src, std::uint32_t h, std::uint32_t w) {
    if (h == 0 || w == 0) throw Error("resize target has a zero dimension");
    if (src.height == h && src.width == w) return src;
    Raster out(h, w, src.channels);
    const double sy = static_cast<double>(src.height) / h;
    const double sx = static_cast<double>(src.width) / w;
    for (std::uint32_t y = 0; y < h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
        const auto y_lo = static_cast<std::uint32_t>(fy);
        const std::uint32_t y_hi = std::min(y_lo + 1, src.height - 1);
        const double wy = fy - y_lo;
        for (std::uint32_t x = 0; x < w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
            const auto x_lo = static_cast<std::uint32_t>(fx);
            const std::uint32_t x_hi = std::min(x_lo + 1, src.width - 1);
            const double wx = fx - x_lo;
            for (std::uint32_t c = 0; c < src.channels; ++c) {
                const double top = (1 - wx) * src.at(y_lo, x_lo, c) + wx * src.at(y_lo, x_hi, c);
                const double bot = (1 - wx) * src.at(y_hi, x_lo, c) + wx * src.at(y_hi, x_hi, c);
                out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

}  // namespace tlc
