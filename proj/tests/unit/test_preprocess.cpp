#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "tlc/error.hpp"
#include "tlc/preprocess.hpp"

using namespace tlc::preprocess;

TEST_SUITE("preprocess") {
    TEST_CASE("streaming stats equal a two-pass reference") {
        std::mt19937_64 rng(31);
        std::vector<tlc::Raster> rasters;
        for (int i = 0; i < 40; ++i) {
            auto r = test::random_raster(6 + i % 3, 7, 4, rng);
            for (std::size_t k = 0; k < r.data.size(); ++k) r.data[k] = r.data[k] * (1 + k % 4) + 100.0f * (k % 4);
            rasters.push_back(r);
        }
        const auto s = compute_channel_stats(rasters);
        for (int c = 0; c < 4; ++c) {
            double sum = 0;
            std::size_t n = 0;
            for (const auto& r : rasters)
                for (std::size_t k = c; k < r.data.size(); k += 4) {
                    sum += r.data[k];
                    ++n;
                }
            const double mean = sum / n;
            double ss = 0;
            for (const auto& r : rasters)
                for (std::size_t k = c; k < r.data.size(); k += 4) ss += (r.data[k] - mean) * (r.data[k] - mean);
            CHECK(std::abs(s.mean[c] - mean) < 1e-9);
            CHECK(std::abs(s.std[c] - std::sqrt(ss / n)) < 1e-9);
            CHECK(s.n_pixels == n);
        }

        // Sharded accumulation merges to the same answer.
        StatsAccumulator a, b;
        for (std::size_t i = 0; i < rasters.size(); ++i) (i % 3 ? a : b).add(rasters[i]);
        a.merge(b);
        const auto merged = a.finish();
        for (int c = 0; c < 4; ++c) {
            CHECK(std::abs(merged.mean[c] - s.mean[c]) < 1e-9);
            CHECK(std::abs(merged.std[c] - s.std[c]) < 1e-9);
        }
    }

    TEST_CASE("constant channel clamps the std") {
        tlc::Raster r(4, 4, 4, 0.5f);
        const auto s = compute_channel_stats(std::vector<tlc::Raster>{r});
        CHECK(s.clamped);
        CHECK(s.std[0] == kStdFloor);
        const auto n = normalize_patch(r, s);
        for (float v : n.data) CHECK(std::isfinite(v));
    }

    TEST_CASE("empty input is rejected") {
        CHECK_THROWS_AS(compute_channel_stats(std::vector<tlc::Raster>{}), tlc::Error);
    }

    TEST_CASE("normalisation round-trips and needs four channels") {
        std::mt19937_64 rng(32);
        const auto r = test::random_raster(5, 5, 4, rng);
        const auto s = compute_channel_stats(std::vector<tlc::Raster>{r});
        const auto n = normalize_patch(r, s);
        const auto back = denormalize_patch(n, s);
        for (std::size_t k = 0; k < r.data.size(); ++k) CHECK(back.data[k] == doctest::Approx(r.data[k]).epsilon(1e-5));
        CHECK_THROWS_AS(normalize_patch(test::random_raster(2, 2, 3, rng), s), tlc::Error);
        const auto j = ChannelStats::from_json(s.to_json());
        CHECK(j.mean == s.mean);
        CHECK(j.std == s.std);
    }
}
