#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tlc/raster.hpp"

namespace test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("tlc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng, bool sparse = false) {
    std::exponential_distribution<double> e(1.0);
    std::bernoulli_distribution keep(0.4);
    std::vector<double> v(n);
    double s = 0.0;
    for (auto& x : v) {
        x = (!sparse || keep(rng)) ? e(rng) : 0.0;
        s += x;
    }
    if (s == 0.0) {
        v[0] = 1.0;
        s = 1.0;
    }
    for (auto& x : v) x /= s;
    return v;
}

inline tlc::Raster random_raster(std::uint32_t h, std::uint32_t w, std::uint32_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    tlc::Raster r(h, w, c);
    for (auto& x : r.data) x = u(rng);
    return r;
}

}  // namespace test
