#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "helpers.hpp"
#include "tlc/data.hpp"
#include "tlc/error.hpp"

using namespace tlc::data;
using tlc::ontology::LabelDistribution;
using tlc::ontology::Level;

namespace {

const std::filesystem::path kFixtures = TLC_FIXTURES_DIR;

std::vector<PatchRecord> synthetic_records(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<PatchRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        PatchRecord r;
        r.patch_id = "p" + std::to_string(i);
        r.tile_id = "t" + std::to_string(i / 100);
        // Skewed class frequencies.
        std::vector<double> p(15, 0.0);
        p[std::min<std::size_t>(rng() % 20, 14)] = 1.0;
        r.label = LabelDistribution::validated(Level::Level2, p);
        out.push_back(r);
    }
    return out;
}

}  // namespace

TEST_SUITE("data") {
    TEST_CASE("40x40 tiling partitions the tile and reassembles bit-exactly") {
        std::mt19937_64 rng(1);
        const auto tile = test::random_raster(320, 320, 4, rng);
        const TileSpec spec{"T", 8000.0, 40, 8};
        const auto patches = tile_to_patches(spec, tile);
        REQUIRE(patches.size() == 1600);
        CHECK(spec.patch_ground_size_m() == 200.0);
        std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
        std::size_t pixels = 0;
        for (const auto& p : patches) {
            seen.insert({p.pos.row, p.pos.col});
            pixels += std::size_t{p.raster.height} * p.raster.width;
            CHECK(p.raster.height == 8);
        }
        CHECK(seen.size() == 1600);
        CHECK(pixels == 320u * 320u);
        CHECK(reassemble_tile(patches, 40) == tile);
        // Row-major order.
        CHECK(patches[41].pos == GridPos{1, 1});
        CHECK(patches[41].raster.at(0, 0, 2) == tile.at(8, 8, 2));
    }

    TEST_CASE("grid_n = 1 is the identity") {
        std::mt19937_64 rng(2);
        const auto tile = test::random_raster(17, 17, 4, rng);
        const auto patches = tile_to_patches({"T", 8000.0, 1, 17}, tile);
        REQUIRE(patches.size() == 1);
        CHECK(patches[0].raster == tile);
    }

    TEST_CASE("non-divisible tiles name the padded size unless resampling") {
        std::mt19937_64 rng(3);
        const auto tile = test::random_raster(101, 99, 4, rng);
        CHECK_THROWS_WITH_AS(tile_to_patches({"T", 8000.0, 10, 10}, tile), doctest::Contains("110x100"), tlc::Error);
        const auto patches = tile_to_patches({"T", 8000.0, 10, 10}, tile, {.resample = true});
        CHECK(patches.size() == 100);
        CHECK(patches[0].raster.height == 11);
    }

    TEST_CASE("fixture manifest loads with resolved paths") {
        const auto recs = load_manifest(kFixtures / "good.jsonl", {.strict = true});
        REQUIRE(recs.size() == 3);
        CHECK(recs[0].has_all_months());
        CHECK(recs[0].rasters.at(6) == kFixtures / "patch_a.tlc");
        CHECK(recs[1].tile_grid_n == 2u);
        CHECK(recs[1].label[6] == doctest::Approx(0.5));
        CHECK(recs[2].missing_months().size() == 11);

        PatchReader reader(4);
        const auto cell = reader.read(recs[1], 6);
        CHECK(cell.height == 4);
        // Cell (1, 0) of the 8x8 tile starts at pixel (4, 0).
        CHECK(cell.at(0, 0, 0) == doctest::Approx((4 * 8 + 0) / 64.0));
        CHECK_THROWS_AS(reader.read(recs[2], 1), tlc::Error);
    }

    TEST_CASE("manifest round-trips through write_manifest") {
        test::TempDir dir("manifest");
        auto recs = load_manifest(kFixtures / "good.jsonl");
        write_manifest(dir / "m.jsonl", recs);
        const auto again = load_manifest(dir / "m.jsonl");
        REQUIRE(again.size() == recs.size());
        for (std::size_t i = 0; i < recs.size(); ++i) {
            CHECK(again[i].patch_id == recs[i].patch_id);
            CHECK(again[i].rasters == recs[i].rasters);
            CHECK(again[i].label.probs() == recs[i].label.probs());
        }
    }

    TEST_CASE("manifest errors name the line and field") {
        CHECK_THROWS_WITH_AS(load_manifest(kFixtures / "bad_label.jsonl"),
                             doctest::Contains("line 2: field 'label'"), tlc::Error);
        CHECK_THROWS_WITH_AS(load_manifest(kFixtures / "bad_month.jsonl"),
                             doctest::Contains("field 'months'"), tlc::Error);
        CHECK_THROWS_WITH_AS(load_manifest(kFixtures / "missing_field.jsonl"),
                             doctest::Contains("line 3: field 'tile_id'"), tlc::Error);
        CHECK_THROWS_WITH_AS(load_manifest(kFixtures / "malformed.jsonl"), doctest::Contains("line 2"), tlc::Error);
        CHECK_THROWS_WITH_AS(load_manifest(kFixtures / "missing_raster.jsonl", {.strict = true}),
                             doctest::Contains("GHOST"), tlc::Error);
        CHECK_NOTHROW(load_manifest(kFixtures / "missing_raster.jsonl"));
    }

    TEST_CASE("70/20/10 split sizes, disjointness and class balance") {
        const auto recs = synthetic_records(1000, 4);
        for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
            const auto s = stratified_split(recs, {}, seed);
            CHECK(std::abs(long(s.train.size()) - 700) <= 1);
            CHECK(std::abs(long(s.val.size()) - 200) <= 1);
            CHECK(std::abs(long(s.test.size()) - 100) <= 1);
            std::set<std::string> all;
            for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
            CHECK(all.size() == 1000);
            CHECK(s.max_class_deviation <= 0.02);
            CHECK(class_mass_deviation(recs, s) == doctest::Approx(s.max_class_deviation));
        }
        const auto a = stratified_split(recs, {}, 7);
        const auto b = stratified_split(recs, {}, 7);
        CHECK(a.train == b.train);
        CHECK(a.test == b.test);
        const auto c = stratified_split(recs, {}, 8);
        CHECK(a.train != c.train);
    }

    TEST_CASE("split json round-trip") {
        const auto recs = synthetic_records(50, 5);
        const auto s = stratified_split(recs, {}, 3);
        const auto back = DatasetSplit::from_json(s.to_json());
        CHECK(back.train == s.train);
        CHECK(back.val == s.val);
        CHECK(back.test == s.test);
    }

    TEST_CASE("select keeps the requested order and rejects unknown ids") {
        const auto recs = synthetic_records(10, 6);
        const auto picked = select(recs, {"p3", "p1"});
        REQUIRE(picked.size() == 2);
        CHECK(picked[0].patch_id == "p3");
        CHECK_THROWS_AS(select(recs, {"nope"}), tlc::Error);
    }

    TEST_CASE("raster file round-trip and channel checks") {
        test::TempDir dir("raster");
        std::mt19937_64 rng(7);
        const auto r = test::random_raster(5, 6, 4, rng);
        tlc::write_raster(dir / "r.tlc", r);
        CHECK(tlc::read_raster(dir / "r.tlc") == r);
        tlc::write_raster(dir / "rgb.tlc", test::random_raster(4, 4, 3, rng));
        PatchRecord rec;
        rec.patch_id = "x";
        rec.rasters[6] = dir / "rgb.tlc";
        PatchReader reader(4);
        CHECK_THROWS_WITH_AS(reader.read(rec, 6), doctest::Contains("expected 4"), tlc::Error);
        std::ofstream(dir / "junk.tlc") << "nope";
        CHECK_THROWS_AS(tlc::read_raster(dir / "junk.tlc"), tlc::Error);
    }
}
