#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "helpers.hpp"
#include "tlc/error.hpp"
#include "tlc/synth.hpp"

using namespace tlc::synth;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

SynthConfig small(std::uint64_t seed) {
    SynthConfig c;
    c.tiles = 2;
    c.grid_n = 5;
    c.patch_px = 4;
    c.regions_per_tile = 12;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_SUITE("synth") {
    TEST_CASE("same seed gives byte-identical corpora") {
        test::TempDir a("synA"), b("synB"), c("synC");
        generate_synthetic_corpus(small(4), a.path());
        generate_synthetic_corpus(small(4), b.path());
        generate_synthetic_corpus(small(5), c.path());
        std::size_t files = 0;
        for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
            if (!e.is_regular_file()) continue;
            const auto rel = std::filesystem::relative(e.path(), a.path());
            CHECK_MESSAGE(slurp(e.path()) == slurp(b.path() / rel), rel.string());
            ++files;
        }
        CHECK(files > 24);
        CHECK(slurp(a / "rasters/T000_m06.tlc") != slurp(c / "rasters/T000_m06.tlc"));
    }

    TEST_CASE("ten tiles of fifteen classes give 16000 patch rows") {
        test::TempDir dir("syn16k");
        SynthConfig c;
        c.tiles = 10;
        c.patch_px = 1;
        c.change_pair = false;
        const auto r = generate_synthetic_corpus(c, dir.path());
        CHECK(r.records.size() == 16000);
        CHECK(tlc::data::load_manifest(r.manifest).size() == 16000);
    }

    TEST_CASE("labels are the painted area fractions") {
        test::TempDir dir("synlab");
        const auto cfg = small(6);
        const auto r = generate_synthetic_corpus(cfg, dir.path());
        const auto layout = paint_layout(cfg, 1);
        const std::uint32_t side = cfg.grid_n * cfg.patch_px;
        for (const auto& rec : r.records) {
            if (rec.tile_id != "T001") continue;
            std::vector<int> counts(15, 0);
            for (std::uint32_t y = 0; y < cfg.patch_px; ++y)
                for (std::uint32_t x = 0; x < cfg.patch_px; ++x)
                    ++counts[layout[(rec.grid_pos.row * cfg.patch_px + y) * side + rec.grid_pos.col * cfg.patch_px + x]];
            for (int k = 0; k < 15; ++k)
                CHECK(std::abs(rec.label[k] - counts[k] / 16.0) <= 1.0 / (cfg.patch_px * cfg.patch_px));
        }
    }

    TEST_CASE("seasonal twins look identical in June only") {
        const auto twins = twin_pairs(15);
        CHECK(twins.size() >= 2);
        for (const auto& [a, b] : twins) {
            CHECK(class_signature(a, 6) == class_signature(b, 6));
            double annual = 0;
            for (int m = 1; m <= 12; ++m) {
                const auto sa = class_signature(a, m), sb = class_signature(b, m);
                for (int c = 0; c < 4; ++c) annual += std::abs(sa[c] - sb[c]);
            }
            CHECK(annual > 0.5);
        }
    }

    TEST_CASE("twin pixels share one June distribution") {
        // Pure twin pixels in month 6 come from one law: per-channel means agree
        // within sampling error and spreads match. In March they separate.
        test::TempDir dir("synhist");
        auto cfg = small(9);
        cfg.tiles = 3;
        cfg.grid_n = 10;
        generate_synthetic_corpus(cfg, dir.path());
        const auto [a, b] = twin_pairs(15).front();
        const auto moments = [&](int month, int cls, int ch) {
            double n = 0, s = 0, s2 = 0;
            for (int t = 0; t < cfg.tiles; ++t) {
                const auto layout = paint_layout(cfg, t);
                char name[32];
                std::snprintf(name, sizeof name, "rasters/T%03d_m%02d.tlc", t, month);
                const auto img = tlc::read_raster(dir / name);
                for (std::size_t i = 0; i < layout.size(); ++i)
                    if (layout[i] == cls) {
                        const double v = img.data[i * 4 + ch];
                        n += 1, s += v, s2 += v * v;
                    }
            }
            const double mean = s / n;
            return std::array<double, 3>{n, mean, std::sqrt(s2 / n - mean * mean)};
        };
        for (int ch = 0; ch < 4; ++ch) {
            const auto ma = moments(6, a, ch), mb = moments(6, b, ch);
            REQUIRE(ma[0] > 100);
            REQUIRE(mb[0] > 100);
            const double se = cfg.noise_sigma * std::sqrt(1 / ma[0] + 1 / mb[0]);
            CHECK(std::abs(ma[1] - mb[1]) < 5 * se);
            CHECK(ma[2] == doctest::Approx(mb[2]).epsilon(0.15));
            CHECK(ma[2] == doctest::Approx(cfg.noise_sigma).epsilon(0.15));
        }
        double apart = 0;
        for (int ch = 0; ch < 4; ++ch) apart += std::abs(moments(3, a, ch)[1] - moments(3, b, ch)[1]);
        CHECK(apart > 20 * cfg.noise_sigma * std::sqrt(2.0 / 100));
    }

    TEST_CASE("change pair differs exactly in the truth mask") {
        test::TempDir dir("synchg");
        auto cfg = small(10);
        cfg.grid_n = 20;
        const auto r = generate_synthetic_corpus(cfg, dir.path());
        const auto truth = ChangeTruth::load(r.change_truth);
        std::size_t changed = 0;
        for (auto v : truth.changed) changed += v;
        CHECK(changed == 36);  // cells 7..12 squared
        const auto a = tlc::data::TileStack::load(r.change_a);
        const auto b = tlc::data::TileStack::load(r.change_b);
        CHECK(a.spec.tile_id == b.spec.tile_id);
    }

    TEST_CASE("invalid configs are rejected") {
        SynthConfig c;
        c.tiles = 0;
        CHECK_THROWS_AS(c.validate(), tlc::ConfigError);
        c.tiles = 1;
        c.classes = 0;
        CHECK_THROWS_AS(c.validate(), tlc::ConfigError);
        CHECK_THROWS_AS(SynthConfig::from_json({{"tilez", 3}}), tlc::ConfigError);
    }
}
