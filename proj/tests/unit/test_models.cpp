#include <doctest.h>

#include <fstream>
#include <random>

#include "helpers.hpp"
#include "tlc/error.hpp"
#include "tlc/models.hpp"

using namespace tlc::models;
using tlc::ontology::Level;

namespace {

EncoderConfig tiny_encoder() {
    EncoderConfig c;
    c.backbone = "resnet18";
    c.base_width = 2;
    c.stem_kernel = 3;
    c.stem_stride = 1;
    c.patch_px = 4;
    c.residual_scale_init = 0.3f;
    return c;
}

tlc::preprocess::ChannelStats unit_stats() {
    tlc::preprocess::ChannelStats s;
    s.n_pixels = 1;
    return s;
}

PatchFetcher random_fetcher(std::uint64_t seed, std::uint32_t px) {
    return [=](std::size_t i, int month) {
        std::mt19937_64 rng(seed * 1000 + i * 13 + static_cast<std::uint64_t>(month));
        return test::random_raster(px, px, 4, rng);
    };
}

}  // namespace

TEST_SUITE("models") {
    TEST_CASE("feature dimensions of the two layouts") {
        EncoderConfig c;
        CHECK(c.feature_dim() == 2048);
        c.backbone = "resnet18";
        c.base_width = 8;
        CHECK(c.feature_dim() == 64);
        c.backbone = "vgg";
        CHECK_THROWS_AS(c.validate(), tlc::ConfigError);
    }

    TEST_CASE("a narrow bottleneck encoder pools to 32 x width features") {
        EncoderConfig c = tiny_encoder();
        c.backbone = "resnet50";
        c.patch_px = 16;
        MonoNet net(c, 15, 1);
        std::mt19937_64 rng(2);
        const auto r = test::random_raster(16, 16, 4, rng);
        const auto f = net.encoder().features(batch_from_rasters(std::vector<tlc::Raster>{r, r}));
        CHECK(f.rows() == 64);
        CHECK(f.cols() == 2);
    }

    TEST_CASE("config json rejects unknown keys and bad channels") {
        auto j = tiny_encoder().to_json();
        CHECK(EncoderConfig::from_json(j).base_width == 2);
        j["dropout"] = 0.5;
        CHECK_THROWS_WITH_AS(EncoderConfig::from_json(j), doctest::Contains("dropout"), tlc::ConfigError);
        auto k = tiny_encoder().to_json();
        k["input_channels"] = 3;
        CHECK_THROWS_AS(EncoderConfig::from_json(k), tlc::ConfigError);
    }

    TEST_CASE("RGB kernels gain a near-infrared kernel equal to their mean") {
        std::mt19937_64 rng(3);
        std::normal_distribution<float> n;
        const int k = 3, out = 5;
        Mat rgb(out, k * k * 3);
        for (Eigen::Index i = 0; i < rgb.size(); ++i) rgb.data()[i] = n(rng);
        const Mat four = adapt_input_channels(rgb, k);
        REQUIRE(four.cols() == k * k * 4);
        for (int o = 0; o < out; ++o)
            for (int t = 0; t < k * k; ++t) {
                for (int c = 0; c < 3; ++c) CHECK(four(o, t * 4 + c) == rgb(o, t * 3 + c));
                const float mean = (rgb(o, t * 3) + rgb(o, t * 3 + 1) + rgb(o, t * 3 + 2)) / 3.0f;
                CHECK(four(o, t * 4 + 3) == doctest::Approx(mean).epsilon(1e-6));
            }
    }

    TEST_CASE("pretrained stem initialisation reads an RGB weight file") {
        test::TempDir dir("stem");
        auto c = tiny_encoder();
        tlc::nn::Param rgb("stem.weight", c.base_width, c.stem_kernel * c.stem_kernel * 3);
        rgb.value.setConstant(0.25f);
        tlc::nn::save_params(dir / "stem.bin", {&rgb});
        c.pretrained_init = true;
        c.pretrained_stem = (dir / "stem.bin").string();
        MonoNet net(c, 3, 4);
        CHECK(net.encoder().const_params().front()->value.isConstant(0.25f));
    }

    TEST_CASE("mono artifact round-trips with identical predictions") {
        test::TempDir dir("mono");
        ArtifactInfo info;
        info.level = Level::Level1_5;
        info.seed = 9;
        MonoModel model(MonoNet(tiny_encoder(), 7, 9), unit_stats(), info);
        const auto fetch = random_fetcher(5, 4);
        const auto before = model.predict(6, fetch);
        model.save(dir.path());
        for (const char* f : {"config.json", "weights.bin", "stats.json", "ontology.json"})
            CHECK(std::filesystem::exists(dir / f));
        const auto loaded = load_model(dir.path());
        CHECK(loaded->info().kind == "mono");
        CHECK(loaded->level() == Level::Level1_5);
        const auto after = loaded->predict(6, fetch);
        for (std::size_t i = 0; i < before.size(); ++i) {
            CHECK(before[i].probs() == after[i].probs());
            double s = 0;
            for (double p : after[i].probs()) s += p;
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
        CHECK(dynamic_cast<const MonoModel&>(*loaded).weights_hash() == model.weights_hash());
    }

    TEST_CASE("temporal artifact round-trips and checks sequence shape") {
        test::TempDir dir("temporal");
        ArtifactInfo info;
        auto enc = std::make_shared<const MonoModel>(MonoNet(tiny_encoder(), 15, 1), unit_stats(), info);
        TemporalHeadConfig h;
        h.feature_dim = tiny_encoder().feature_dim();
        h.lstm_hidden = 6;
        h.fc_dim = 5;
        TemporalModel model(TemporalNet(h, 15, 2), enc, info);
        CHECK(model.months().size() == 12);
        const auto fetch = random_fetcher(6, 4);
        const auto before = model.predict(3, fetch);
        model.save(dir.path());
        const auto loaded = load_model(dir.path());
        CHECK(loaded->info().kind == "temporal");
        const auto after = loaded->predict(3, fetch);
        for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].probs() == after[i].probs());

        std::vector<Mat> short_seq(11, Mat::Zero(h.feature_dim, 1));
        CHECK_THROWS_AS(model.net().logits(short_seq), tlc::Error);
        std::vector<Mat> wide(12, Mat::Zero(h.feature_dim + 1, 1));
        CHECK_THROWS_AS(model.net().logits(wide), tlc::Error);
    }

    TEST_CASE("feature extraction names a missing month") {
        ArtifactInfo info;
        MonoModel enc(MonoNet(tiny_encoder(), 15, 1), unit_stats(), info);
        tlc::data::PatchRecord rec;
        rec.patch_id = "lonely";
        tlc::data::PatchReader reader(4);
        CHECK_THROWS_WITH_AS(extract_feature_sequence(rec, enc, reader), doctest::Contains("month 1"), tlc::Error);
    }

    TEST_CASE("feature cache round-trip") {
        test::TempDir dir("cache");
        std::mt19937_64 rng(7);
        std::normal_distribution<float> n;
        std::vector<Mat> seqs;
        for (int i = 0; i < 3; ++i) {
            Mat m(5, 12);
            for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
            seqs.push_back(m);
        }
        save_feature_cache(dir / "f.bin", seqs);
        const auto back = load_feature_cache(dir / "f.bin");
        REQUIRE(back.size() == 3);
        for (int i = 0; i < 3; ++i) CHECK(back[i] == seqs[i]);
        const std::size_t items[] = {2, 0};
        const auto batch = sequence_batch(seqs, items);
        REQUIRE(batch.size() == 12);
        CHECK(batch[4].cols() == 2);
        CHECK(batch[4](1, 0) == seqs[2](1, 4));
    }
}
