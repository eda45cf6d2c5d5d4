#include "tlc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "tlc/error.hpp"
#include "tlc/ontology.hpp"
#include "tlc/raster.hpp"

namespace tlc::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kLevel2Classes = 15;

// Month-6 RGB-N reflectance per LEVEL2 class; twins share a row.
constexpr std::array<std::array<float, 4>, kLevel2Classes> kBase = {{
    {0.45f, 0.40f, 0.38f, 0.30f},  // 1.1 urban fabric
    {0.45f, 0.40f, 0.38f, 0.30f},  // 1.2 twin of 1.1
    {0.62f, 0.55f, 0.50f, 0.35f},  // 1.3 mine, dump
    {0.20f, 0.35f, 0.18f, 0.55f},  // 1.4 green urban
    {0.35f, 0.45f, 0.20f, 0.50f},  // 2.1 arable
    {0.25f, 0.28f, 0.12f, 0.42f},  // 2.2 permanent crops
    {0.35f, 0.45f, 0.20f, 0.50f},  // 2.3 twin of 2.1
    {0.42f, 0.30f, 0.27f, 0.62f},  // 2.4 heterogeneous agriculture
    {0.08f, 0.18f, 0.07f, 0.72f},  // 3.1 forest
    {0.08f, 0.18f, 0.07f, 0.72f},  // 3.2 twin of 3.1
    {0.72f, 0.68f, 0.64f, 0.42f},  // 3.3 open spaces
    {0.15f, 0.22f, 0.32f, 0.24f},  // 4.1 inland wetlands
    {0.15f, 0.22f, 0.32f, 0.24f},  // 4.2 twin of 4.1
    {0.04f, 0.10f, 0.26f, 0.04f},  // 5.1 inland waters
    {0.04f, 0.10f, 0.26f, 0.04f},  // 5.2 twin of 5.1
}};

// Common vegetation cycle amplitude (peaks in June-July).
constexpr std::array<float, kLevel2Classes> kSeasonAmp = {0.00f, 0.00f, 0.00f, 0.06f, 0.10f, 0.05f, 0.10f, 0.08f,
                                                          0.06f, 0.06f, 0.02f, 0.04f, 0.04f, 0.00f, 0.00f};

constexpr std::array<float, 4> kSeasonDir = {-0.2f, 0.3f, -0.1f, 1.0f};
constexpr std::array<float, 4> kTwinDir = {0.3f, -0.4f, 0.2f, -1.0f};

constexpr std::array<std::pair<int, int>, 5> kTwins = {{{0, 1}, {4, 6}, {8, 9}, {11, 12}, {13, 14}}};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tile, std::uint64_t month) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tile), static_cast<std::uint32_t>(month)};
    return std::mt19937_64(seq);
}

int twin_of(int k) {
    for (const auto& [a, b] : kTwins)
        if (b == k) return a;
    return -1;
}

Raster render(const std::vector<std::uint8_t>& layout, std::uint32_t side, int month, const SynthConfig& cfg,
              std::mt19937_64& rng) {
    std::array<std::array<float, 4>, kLevel2Classes> sig{};
    for (int k = 0; k < kLevel2Classes; ++k) sig[k] = class_signature(k, month, cfg.twin_delta);
    std::normal_distribution<float> noise(0.0f, static_cast<float>(cfg.noise_sigma));
    Raster r(side, side, 4);
    for (std::size_t i = 0; i < layout.size(); ++i)
        for (int c = 0; c < 4; ++c) r.data[i * 4 + c] = sig[layout[i]][c] + noise(rng);
    return r;
}

fs::path month_path(const fs::path& dir, const std::string& tile_id, int month) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_m%02d.tlc", tile_id.c_str(), month);
    return dir / name;
}

std::string tile_name(int t) {
    char name[16];
    std::snprintf(name, sizeof name, "T%03d", t);
    return name;
}

data::TileStack write_stack(const std::vector<std::uint8_t>& layout, const std::string& tile_id,
                            const std::string& file_stem, std::uint64_t stream_id, const SynthConfig& cfg,
                            const fs::path& raster_dir) {
    data::TileStack stack;
    stack.spec.tile_id = tile_id;
    stack.spec.grid_n = cfg.grid_n;
    stack.spec.patch_px = cfg.patch_px;
    const std::uint32_t side = cfg.grid_n * cfg.patch_px;
    for (int m = 1; m <= data::kMonths; ++m) {
        auto rng = stream(cfg.seed, stream_id, static_cast<std::uint64_t>(m));
        const fs::path p = month_path(raster_dir, file_stem, m);
        write_raster(p, render(layout, side, m, cfg, rng));
        stack.months[m] = p;
    }
    return stack;
}

std::size_t dominant(const std::vector<double>& shares) {
    return static_cast<std::size_t>(std::max_element(shares.begin(), shares.end()) - shares.begin());
}

}  // namespace

void SynthConfig::validate() const {
    if (tiles < 1) throw ConfigError("tiles", "tiles must be >= 1");
    if (classes < 1 || classes > kLevel2Classes)
        throw ConfigError("classes", "classes must be in 1..15");
    if (grid_n < 1) throw ConfigError("grid_n", "grid_n must be >= 1");
    if (patch_px < 1) throw ConfigError("patch_px", "patch_px must be >= 1");
    if (regions_per_tile < 1) throw ConfigError("regions_per_tile", "regions_per_tile must be >= 1");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma", "noise_sigma must be >= 0");
    if (!(twin_delta > 0.0)) throw ConfigError("twin_delta", "twin_delta must be > 0");
    if (change_pair && (grid_n < 4 || classes < 6))
        throw ConfigError("change_pair", "change pair needs grid_n >= 4 and classes >= 6");
}

json SynthConfig::to_json() const {
    return {{"tiles", tiles},
            {"classes", classes},
            {"grid_n", grid_n},
            {"patch_px", patch_px},
            {"regions_per_tile", regions_per_tile},
            {"noise_sigma", noise_sigma},
            {"twin_delta", twin_delta},
            {"change_pair", change_pair},
            {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& doc) {
    if (!doc.is_object()) throw ConfigError("<root>", "synth config must be a JSON object");
    SynthConfig c;
    for (const auto& [key, value] : doc.items()) {
        try {
            if (key == "tiles") c.tiles = value.get<int>();
            else if (key == "classes") c.classes = value.get<int>();
            else if (key == "grid_n") c.grid_n = value.get<std::uint32_t>();
            else if (key == "patch_px") c.patch_px = value.get<std::uint32_t>();
            else if (key == "regions_per_tile") c.regions_per_tile = value.get<int>();
            else if (key == "noise_sigma") c.noise_sigma = value.get<double>();
            else if (key == "twin_delta") c.twin_delta = value.get<double>();
            else if (key == "change_pair") c.change_pair = value.get<bool>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw ConfigError(key, "unknown synth key '" + key + "'");
        } catch (const json::exception&) {
            throw ConfigError(key, "invalid value for '" + key + "'");
        }
    }
    c.validate();
    return c;
}

std::vector<std::pair<int, int>> twin_pairs(int classes) {
    std::vector<std::pair<int, int>> out;
    for (const auto& p : kTwins)
        if (p.second < classes) out.push_back(p);
    return out;
}

std::array<float, 4> class_signature(int k, int month, double twin_delta) {
    if (k < 0 || k >= kLevel2Classes) throw Error("class index out of range: " + std::to_string(k));
    const int base_class = twin_of(k) >= 0 ? twin_of(k) : k;
    const double season = std::sin(2.0 * std::numbers::pi * (month - 3) / 12.0);
    const double twin = std::sin(2.0 * std::numbers::pi * (month - 6) / 12.0);
    std::array<float, 4> s{};
    for (int c = 0; c < 4; ++c) {
        double v = kBase[base_class][c] + kSeasonAmp[base_class] * season * kSeasonDir[c];
        if (twin_of(k) >= 0) v += twin_delta * twin * kTwinDir[c];
        s[c] = static_cast<float>(v);
    }
    return s;
}

std::vector<std::uint8_t> paint_layout(const SynthConfig& cfg, std::uint64_t tile) {
    const std::uint32_t side = cfg.grid_n * cfg.patch_px;
    auto rng = stream(cfg.seed, tile, 0);
    std::uniform_real_distribution<double> coord(0.0, static_cast<double>(side));
    std::vector<std::array<double, 2>> sites(static_cast<std::size_t>(cfg.regions_per_tile));
    for (auto& s : sites) s = {coord(rng), coord(rng)};
    // Round-robin over classes, shuffled, so every class appears when regions allow.
    std::vector<std::uint8_t> cls(sites.size());
    for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = static_cast<std::uint8_t>(i % cfg.classes);
    std::shuffle(cls.begin(), cls.end(), rng);

    std::vector<std::uint8_t> layout(std::size_t{side} * side);
    for (std::uint32_t y = 0; y < side; ++y)
        for (std::uint32_t x = 0; x < side; ++x) {
            double best = std::numeric_limits<double>::max();
            std::size_t arg = 0;
            for (std::size_t i = 0; i < sites.size(); ++i) {
                const double dy = y + 0.5 - sites[i][0];
                const double dx = x + 0.5 - sites[i][1];
                const double d = dy * dy + dx * dx;
                if (d < best) {
                    best = d;
                    arg = i;
                }
            }
            layout[std::size_t{y} * side + x] = cls[arg];
        }
    return layout;
}

std::vector<double> cell_shares(const std::vector<std::uint8_t>& layout, const SynthConfig& cfg,
                                std::uint32_t row, std::uint32_t col) {
    const std::uint32_t side = cfg.grid_n * cfg.patch_px;
    std::vector<std::uint32_t> counts(kLevel2Classes, 0);
    for (std::uint32_t y = 0; y < cfg.patch_px; ++y)
        for (std::uint32_t x = 0; x < cfg.patch_px; ++x)
            ++counts[layout[std::size_t{row * cfg.patch_px + y} * side + col * cfg.patch_px + x]];
    const double area = static_cast<double>(cfg.patch_px) * cfg.patch_px;
    std::vector<double> shares(kLevel2Classes);
    for (int k = 0; k < kLevel2Classes; ++k) shares[k] = counts[k] / area;
    return shares;
}

json ChangeTruth::to_json() const {
    json rows = json::array();
    for (std::uint32_t r = 0; r < grid_n; ++r) {
        json row = json::array();
        for (std::uint32_t c = 0; c < grid_n; ++c) row.push_back(changed[std::size_t{r} * grid_n + c]);
        rows.push_back(row);
    }
    return {{"tile_id", tile_id}, {"grid_n", grid_n}, {"changed", rows}};
}

ChangeTruth ChangeTruth::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open change truth: " + path.string());
    const json doc = json::parse(in);
    ChangeTruth t;
    t.tile_id = doc.at("tile_id").get<std::string>();
    t.grid_n = doc.at("grid_n").get<std::uint32_t>();
    for (const auto& row : doc.at("changed"))
        for (const auto& v : row) t.changed.push_back(v.get<std::uint8_t>());
    if (t.changed.size() != std::size_t{t.grid_n} * t.grid_n) throw Error("change truth grid size mismatch");
    return t;
}

SynthResult generate_synthetic_corpus(const SynthConfig& config, const fs::path& out_dir) {
    config.validate();
    const fs::path root = fs::absolute(out_dir);
    const fs::path raster_dir = root / "rasters";
    const fs::path tile_dir = root / "tiles";
    fs::create_directories(raster_dir);
    fs::create_directories(tile_dir);

    SynthResult result;
    for (int t = 0; t < config.tiles; ++t) {
        const auto layout = paint_layout(config, static_cast<std::uint64_t>(t));
        const std::string id = tile_name(t);
        const auto stack = write_stack(layout, id, id, static_cast<std::uint64_t>(t), config, raster_dir);
        const fs::path stack_path = tile_dir / (id + ".json");
        stack.save(stack_path);
        result.tile_stacks.push_back(stack_path);
        for (auto rec : stack.cell_records()) {
            rec.label = ontology::LabelDistribution::validated(
                ontology::Level::Level2, cell_shares(layout, config, rec.grid_pos.row, rec.grid_pos.col));
            result.records.push_back(std::move(rec));
        }
    }
    result.manifest = root / "manifest.jsonl";
    data::write_manifest(result.manifest, result.records);

    if (config.change_pair) {
        const fs::path change_dir = root / "change";
        fs::create_directories(change_dir);
        // Same mosaic on both dates; a block of cells flips from permanent
        // crops (2.2) to mine/dump (1.3).
        const auto base_id = static_cast<std::uint64_t>(config.tiles);
        auto layout_a = paint_layout(config, base_id);
        auto layout_b = layout_a;
        const std::uint32_t side = config.grid_n * config.patch_px;
        const std::uint32_t lo = config.grid_n * 7 / 20;
        const std::uint32_t hi = config.grid_n * 13 / 20;
        for (std::uint32_t y = lo * config.patch_px; y < hi * config.patch_px; ++y)
            for (std::uint32_t x = lo * config.patch_px; x < hi * config.patch_px; ++x) {
                layout_a[std::size_t{y} * side + x] = 5;
                layout_b[std::size_t{y} * side + x] = 2;
            }
        const auto a = write_stack(layout_a, "CHG", "CHG_A", base_id + 1, config, raster_dir);
        const auto b = write_stack(layout_b, "CHG", "CHG_B", base_id + 2, config, raster_dir);
        result.change_a = change_dir / "A.json";
        result.change_b = change_dir / "B.json";
        a.save(result.change_a);
        b.save(result.change_b);

        ChangeTruth truth;
        truth.tile_id = "CHG";
        truth.grid_n = config.grid_n;
        for (std::uint32_t r = 0; r < config.grid_n; ++r)
            for (std::uint32_t c = 0; c < config.grid_n; ++c)
                truth.changed.push_back(dominant(cell_shares(layout_a, config, r, c)) !=
                                                dominant(cell_shares(layout_b, config, r, c))
                                            ? 1
                                            : 0);
        result.change_truth = change_dir / "truth.json";
        std::ofstream out(result.change_truth, std::ios::trunc);
        if (!out) throw Error("cannot write " + result.change_truth.string());
        out << truth.to_json().dump() << '\n';
    }

    std::ofstream cfg_out(root / "synth_config.json", std::ios::trunc);
    cfg_out << config.to_json().dump(2) << '\n';
    return result;
}

}  // namespace tlc::synth
