#include "tlc/mapping.hpp"

#include <array>
#include <fstream>

#include <zlib.h>

#include "tlc/error.hpp"
#include "tlc/evaluation.hpp"

namespace tlc::mapping {

namespace fs = std::filesystem;
using nlohmann::json;
using ontology::LabelDistribution;

json LulcMap::to_json(bool with_dists) const {
    json legend = json::array();
    for (const auto& c : ontology::Ontology::builtin().level(level).classes())
        legend.push_back({{"code", c.code}, {"name", c.name}, {"color", c.color}});
    json rows = json::array();
    for (std::uint32_t r = 0; r < grid_n; ++r) {
        json row = json::array();
        for (std::uint32_t c = 0; c < grid_n; ++c) row.push_back(at(r, c));
        rows.push_back(row);
    }
    json doc{{"tile_id", tile_id},
             {"grid_n", grid_n},
             {"level", ontology::to_string(level)},
             {"months", months},
             {"legend", legend},
             {"cells", rows}};
    if (with_dists) {
        json d = json::array();
        for (const auto& dist : dists) d.push_back(dist.probs());
        doc["dists"] = d;
    }
    return doc;
}

LulcMap LulcMap::from_json(const json& doc) {
    LulcMap m;
    try {
        m.tile_id = doc.at("tile_id").get<std::string>();
        m.grid_n = doc.at("grid_n").get<std::uint32_t>();
        m.level = ontology::parse_level(doc.at("level").get<std::string>());
        m.months = doc.value("months", std::vector<int>{});
        for (const auto& row : doc.at("cells"))
            for (const auto& v : row) m.cells.push_back(v.get<std::size_t>());
        if (doc.contains("dists"))
            for (const auto& d : doc.at("dists"))
                m.dists.push_back(LabelDistribution::validated(m.level, d.get<std::vector<double>>()));
    } catch (const json::exception& e) {
        throw Error(std::string("malformed map JSON: ") + e.what());
    }
    if (m.cells.size() != std::size_t{m.grid_n} * m.grid_n) throw Error("map cell count does not match grid_n");
    if (!m.dists.empty() && m.dists.size() != m.cells.size()) throw Error("map dists do not match cells");
    return m;
}

LulcMap LulcMap::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open map: " + path.string());
    return from_json(json::parse(in));
}

LulcMap assemble_map(const std::string& tile_id, std::uint32_t grid_n, std::vector<LabelDistribution> predictions) {
    if (predictions.size() != std::size_t{grid_n} * grid_n)
        throw Error("expected " + std::to_string(std::size_t{grid_n} * grid_n) + " predictions, got " +
                    std::to_string(predictions.size()));
    LulcMap m;
    m.tile_id = tile_id;
    m.grid_n = grid_n;
    if (!predictions.empty()) m.level = predictions.front().level();
    m.cells.reserve(predictions.size());
    for (const auto& d : predictions) m.cells.push_back(d.argmax());
    m.dists = std::move(predictions);
    return m;
}

LulcMap predict_map(const data::TileStack& tile, const models::Model& model) {
    const auto records = tile.cell_records();
    data::PatchReader reader(static_cast<std::uint32_t>(model.patch_px()));
    auto m = assemble_map(tile.spec.tile_id, tile.spec.grid_n, evaluation::predict_records(model, records, reader));
    m.level = model.level();
    m.months = model.months();
    return m;
}

// ---------------------------------------------------------------------------
// Change detection

std::vector<std::uint8_t> ChangeMap::changed_mask() const {
    std::vector<std::uint8_t> out;
    out.reserve(cells.size());
    for (const auto& c : cells) out.push_back(c.state == CellState::Changed ? 1 : 0);
    return out;
}

std::size_t ChangeMap::count(CellState state) const {
    std::size_t n = 0;
    for (const auto& c : cells) n += c.state == state;
    return n;
}

json ChangeMap::to_json() const {
    json states = json::array();
    json pairs = json::array();
    for (std::uint32_t r = 0; r < grid_n; ++r) {
        json row = json::array();
        for (std::uint32_t c = 0; c < grid_n; ++c) {
            const auto& cell = cells[std::size_t{r} * grid_n + c];
            row.push_back(static_cast<int>(cell.state));
            if (cell.state == CellState::Changed)
                pairs.push_back({{"row", r}, {"col", c}, {"from", cell.from}, {"to", cell.to}});
        }
        states.push_back(row);
    }
    return {{"tile_id", tile_id},
            {"grid_n", grid_n},
            {"level", ontology::to_string(level)},
            {"confidence_floor", confidence_floor},
            {"states", states},
            {"state_legend", {"unchanged", "changed", "uncertain"}},
            {"changes", pairs},
            {"n_changed", count(CellState::Changed)},
            {"n_uncertain", count(CellState::Uncertain)}};
}

ChangeMap change_detect(const LulcMap& a, const LulcMap& b, double confidence_floor) {
    if (a.tile_id != b.tile_id) throw Error("change maps cover different tiles: " + a.tile_id + " vs " + b.tile_id);
    if (a.grid_n != b.grid_n) throw Error("change maps differ in grid size");
    if (a.level != b.level) throw Error("change maps differ in legend");
    if (a.dists.size() != a.cells.size() || b.dists.size() != b.cells.size())
        throw Error("change detection needs per-cell distributions");
    if (!(confidence_floor >= 0.0 && confidence_floor <= 1.0))
        throw ConfigError("floor", "confidence floor must lie in [0, 1]");
    ChangeMap out;
    out.tile_id = a.tile_id;
    out.grid_n = a.grid_n;
    out.level = a.level;
    out.confidence_floor = confidence_floor;
    out.cells.resize(a.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        auto& cell = out.cells[i];
        cell.from = a.cells[i];
        cell.to = b.cells[i];
        if (cell.from == cell.to) continue;
        const bool confident = a.dists[i][cell.from] >= confidence_floor && b.dists[i][cell.to] >= confidence_floor;
        cell.state = confident ? CellState::Changed : CellState::Uncertain;
    }
    return out;
}

double mask_iou(const std::vector<std::uint8_t>& predicted, const std::vector<std::uint8_t>& truth) {
    if (predicted.size() != truth.size()) throw Error("mask sizes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        inter += predicted[i] && truth[i];
        uni += predicted[i] || truth[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// PNG output

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void chunk(std::ofstream& out, const char* type, const std::vector<std::uint8_t>& payload) {
    std::vector<std::uint8_t> buf;
    put_u32(buf, static_cast<std::uint32_t>(payload.size()));
    buf.insert(buf.end(), type, type + 4);
    buf.insert(buf.end(), payload.begin(), payload.end());
    const uLong crc = crc32(crc32(0L, Z_NULL, 0), buf.data() + 4, static_cast<uInt>(buf.size() - 4));
    put_u32(buf, static_cast<std::uint32_t>(crc));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::array<std::uint8_t, 3> parse_color(const std::string& hex) {
    if (hex.size() != 7 || hex[0] != '#') return {0, 0, 0};
    std::array<std::uint8_t, 3> c{};
    for (int i = 0; i < 3; ++i) c[i] = static_cast<std::uint8_t>(std::stoi(hex.substr(1 + 2 * i, 2), nullptr, 16));
    return c;
}

template <typename ColorOf>
void render_grid(std::uint32_t grid_n, std::uint32_t cell_px, const fs::path& path, ColorOf&& color_of) {
    const std::uint32_t side = grid_n * cell_px;
    std::vector<std::uint8_t> rgb(std::size_t{side} * side * 3);
    for (std::uint32_t y = 0; y < side; ++y)
        for (std::uint32_t x = 0; x < side; ++x) {
            const auto c = color_of(std::size_t{y / cell_px} * grid_n + x / cell_px);
            std::copy(c.begin(), c.end(), rgb.begin() + (std::size_t{y} * side + x) * 3);
        }
    write_png(path, side, side, rgb);
}

}  // namespace

void write_png(const fs::path& path, std::uint32_t width, std::uint32_t height, const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != std::size_t{width} * height * 3) throw Error("PNG buffer size mismatch");
    std::vector<std::uint8_t> raw;
    raw.reserve(rgb.size() + height);
    for (std::uint32_t y = 0; y < height; ++y) {
        raw.push_back(0);  // filter: none
        const auto* row = rgb.data() + std::size_t{y} * width * 3;
        raw.insert(raw.end(), row, row + std::size_t{width} * 3);
    }
    uLongf len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(len);
    if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("zlib compression failed");
    z.resize(len);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write PNG: " + path.string());
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.write(reinterpret_cast<const char*>(sig), 8);
    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, width);
    put_u32(ihdr, height);
    ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit truecolour
    chunk(out, "IHDR", ihdr);
    chunk(out, "IDAT", z);
    chunk(out, "IEND", {});
    if (!out) throw Error("failed writing PNG: " + path.string());
}

void render_map_png(const LulcMap& map, const fs::path& path, std::uint32_t cell_px) {
    std::vector<std::array<std::uint8_t, 3>> palette;
    for (const auto& c : ontology::Ontology::builtin().level(map.level).classes())
        palette.push_back(parse_color(c.color));
    render_grid(map.grid_n, cell_px, path, [&](std::size_t i) { return palette.at(map.cells[i]); });
}

void render_change_png(const ChangeMap& map, const fs::path& path, std::uint32_t cell_px) {
    render_grid(map.grid_n, cell_px, path, [&](std::size_t i) -> std::array<std::uint8_t, 3> {
        switch (map.cells[i].state) {
            case CellState::Changed: return {220, 20, 40};
            case CellState::Uncertain: return {250, 170, 30};
            default: return {210, 210, 210};
        }
    });
}

fs::path json_path_for(const fs::path& out) {
    fs::path p = out;
    return p.replace_extension(".json");
}

fs::path png_path_for(const fs::path& out) {
    fs::path p = out;
    return p.replace_extension(".png");
}

}  // namespace tlc::mapping
