#include "tlc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "tlc/error.hpp"

namespace tlc::data {

namespace fs = std::filesystem;
using nlohmann::json;
using ontology::LabelDistribution;
using ontology::Level;

bool PatchRecord::has_all_months() const { return missing_months().empty(); }

std::vector<int> PatchRecord::missing_months() const {
    std::vector<int> missing;
    for (int m = 1; m <= kMonths; ++m)
        if (!rasters.contains(m)) missing.push_back(m);
    return missing;
}

// ---------------------------------------------------------------------------
// Tiling

std::vector<TilePatch> tile_to_patches(const TileSpec& tile, const Raster& raster,
                                       const TilingOptions& options) {
    if (tile.grid_n == 0) throw Error("grid_n must be positive");
    const Raster* src = &raster;
    Raster resampled;
    if (raster.height % tile.grid_n != 0 || raster.width % tile.grid_n != 0) {
        const auto round_up = [&](std::uint32_t v) {
            return (v + tile.grid_n - 1) / tile.grid_n * tile.grid_n;
        };
        const std::uint32_t h = round_up(raster.height);
        const std::uint32_t w = round_up(raster.width);
        if (!options.resample) {
            std::ostringstream msg;
            msg << "tile " << raster.height << "x" << raster.width << " is not divisible by grid_n "
                << tile.grid_n << ": pad or resample to " << h << "x" << w;
            throw Error(msg.str());
        }
        resampled = resize_bilinear(raster, h, w);
        src = &resampled;
    }
    const std::uint32_t ph = src->height / tile.grid_n;
    const std::uint32_t pw = src->width / tile.grid_n;
    std::vector<TilePatch> out;
    out.reserve(tile.patch_count());
    for (std::uint32_t r = 0; r < tile.grid_n; ++r)
        for (std::uint32_t c = 0; c < tile.grid_n; ++c)
            out.push_back({{r, c}, crop(*src, r * ph, c * pw, ph, pw)});
    return out;
}

Raster reassemble_tile(const std::vector<TilePatch>& patches, std::uint32_t grid_n) {
    if (patches.size() != std::size_t{grid_n} * grid_n)
        throw Error("reassembly needs grid_n^2 patches");
    const std::uint32_t ph = patches.front().raster.height;
    const std::uint32_t pw = patches.front().raster.width;
    const std::uint32_t ch = patches.front().raster.channels;
    Raster out(ph * grid_n, pw * grid_n, ch);
    for (const auto& p : patches) {
        if (p.raster.height != ph || p.raster.width != pw || p.raster.channels != ch)
            throw Error("reassembly needs equally sized patches");
        for (std::uint32_t y = 0; y < ph; ++y)
            std::copy_n(&p.raster.data[std::size_t{y} * pw * ch], std::size_t{pw} * ch,
                        &out.at(p.pos.row * ph + y, p.pos.col * pw, 0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

[[noreturn]] void row_error(std::size_t line, const std::string& field, const std::string& what) {
    throw Error("manifest line " + std::to_string(line) + ": field '" + field + "': " + what);
}

const json& require(const json& row, std::size_t line, const char* field) {
    if (!row.contains(field)) row_error(line, field, "missing");
    return row.at(field);
}

PatchRecord parse_row(const json& row, std::size_t line, const fs::path& base) {
    if (!row.is_object()) row_error(line, "<row>", "expected a JSON object");
    PatchRecord rec;
    const auto get_string = [&](const char* field) {
        const json& v = require(row, line, field);
        if (!v.is_string()) row_error(line, field, "expected a string");
        return v.get<std::string>();
    };
    const auto get_index = [&](const char* field) {
        const json& v = require(row, line, field);
        if (!v.is_number_integer() || v.get<long long>() < 0)
            row_error(line, field, "expected a non-negative integer");
        return static_cast<std::uint32_t>(v.get<long long>());
    };
    rec.patch_id = get_string("patch_id");
    rec.tile_id = get_string("tile_id");
    rec.grid_pos = {get_index("row"), get_index("col")};
    if (row.contains("grid_n")) {
        rec.tile_grid_n = get_index("grid_n");
        if (*rec.tile_grid_n == 0) row_error(line, "grid_n", "must be positive");
        if (rec.grid_pos.row >= *rec.tile_grid_n || rec.grid_pos.col >= *rec.tile_grid_n)
            row_error(line, "row", "grid position outside the tile grid");
    }

    const json& months = require(row, line, "months");
    if (!months.is_object()) row_error(line, "months", "expected an object keyed by month");
    for (const auto& [key, value] : months.items()) {
        int month = 0;
        try {
            std::size_t used = 0;
            month = std::stoi(key, &used);
            if (used != key.size()) month = 0;
        } catch (const std::exception&) {
            month = 0;
        }
        if (month < 1 || month > kMonths) row_error(line, "months", "bad month key '" + key + "'");
        if (!value.is_string()) row_error(line, "months", "month " + key + " path is not a string");
        fs::path p = value.get<std::string>();
        rec.rasters[month] = (p.is_absolute() ? p : base / p).lexically_normal();
    }

    const json& label = require(row, line, "label");
    if (!label.is_object()) row_error(line, "label", "expected an object");
    if (!label.contains("level") || !label.at("level").is_string())
        row_error(line, "label.level", "missing");
    Level level{};
    try {
        level = ontology::parse_level(label.at("level").get<std::string>());
    } catch (const Error& e) {
        row_error(line, "label.level", e.what());
    }
    if (level != Level::Level2) row_error(line, "label.level", "ground truth must be LEVEL2");
    if (!label.contains("probs") || !label.at("probs").is_array())
        row_error(line, "label.probs", "missing");
    std::vector<double> probs;
    for (const auto& v : label.at("probs")) {
        if (!v.is_number()) row_error(line, "label.probs", "non-numeric entry");
        probs.push_back(v.get<double>());
    }
    try {
        rec.label = LabelDistribution::validated(level, std::move(probs));
    } catch (const Error& e) {
        row_error(line, "label", e.what());
    }
    return rec;
}

}  // namespace

std::vector<PatchRecord> load_manifest(const fs::path& path, const ManifestOptions& options) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest: " + path.string());
    const fs::path base = path.parent_path();
    std::vector<PatchRecord> records;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json row;
        try {
            row = json::parse(text);
        } catch (const json::parse_error& e) {
            row_error(line, "<row>", std::string("malformed JSON: ") + e.what());
        }
        records.push_back(parse_row(row, line, base));
    }
    if (options.strict) {
        std::vector<std::string> missing;
        for (const auto& r : records)
            for (const auto& [month, p] : r.rasters)
                if (!fs::exists(p)) {
                    missing.push_back(r.patch_id);
                    break;
                }
        if (!missing.empty()) {
            std::string msg = "missing rasters for " + std::to_string(missing.size()) + " patch(es):";
            for (const auto& id : missing) msg += " " + id;
            throw Error(msg);
        }
    }
    return records;
}

json record_to_json(const PatchRecord& r, const fs::path& relative_to) {
    json months = json::object();
    for (const auto& [m, p] : r.rasters)
        months[std::to_string(m)] =
            relative_to.empty() ? p.generic_string() : p.lexically_relative(relative_to).generic_string();
    json row{{"patch_id", r.patch_id},
             {"tile_id", r.tile_id},
             {"row", r.grid_pos.row},
             {"col", r.grid_pos.col},
             {"months", months},
             {"label", {{"level", ontology::to_string(r.label.level())}, {"probs", r.label.probs()}}}};
    if (r.tile_grid_n) row["grid_n"] = *r.tile_grid_n;
    return row;
}

void write_manifest(const fs::path& path, const std::vector<PatchRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write manifest: " + path.string());
    const fs::path base = path.parent_path();
    for (const auto& r : records) out << record_to_json(r, base).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Tile stacks

std::vector<PatchRecord> TileStack::cell_records() const {
    std::vector<PatchRecord> out;
    out.reserve(spec.patch_count());
    for (std::uint32_t r = 0; r < spec.grid_n; ++r)
        for (std::uint32_t c = 0; c < spec.grid_n; ++c) {
            PatchRecord rec;
            rec.patch_id = spec.tile_id + "_r" + std::to_string(r) + "_c" + std::to_string(c);
            rec.tile_id = spec.tile_id;
            rec.grid_pos = {r, c};
            rec.rasters = months;
            rec.tile_grid_n = spec.grid_n;
            out.push_back(std::move(rec));
        }
    return out;
}

json TileStack::to_json(const fs::path& relative_to) const {
    json m = json::object();
    for (const auto& [month, p] : months)
        m[std::to_string(month)] =
            relative_to.empty() ? p.generic_string() : p.lexically_relative(relative_to).generic_string();
    return {{"tile_id", spec.tile_id},
            {"grid_n", spec.grid_n},
            {"patch_px", spec.patch_px},
            {"extent_m", spec.extent_m},
            {"months", m}};
}

void TileStack::save(const fs::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write tile stack: " + path.string());
    out << to_json(path.parent_path()).dump(2) << '\n';
}

TileStack TileStack::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open tile stack: " + path.string());
    TileStack t;
    try {
        const json doc = json::parse(in);
        t.spec.tile_id = doc.at("tile_id").get<std::string>();
        t.spec.grid_n = doc.at("grid_n").get<std::uint32_t>();
        t.spec.patch_px = doc.value("patch_px", t.spec.patch_px);
        t.spec.extent_m = doc.value("extent_m", t.spec.extent_m);
        for (const auto& [key, value] : doc.at("months").items()) {
            const int month = std::stoi(key);
            if (month < 1 || month > kMonths) throw Error("bad month key '" + key + "'");
            fs::path p = value.get<std::string>();
            t.months[month] = (p.is_absolute() ? p : path.parent_path() / p).lexically_normal();
        }
    } catch (const json::exception& e) {
        throw Error("tile stack " + path.string() + ": " + e.what());
    }
    if (t.spec.grid_n == 0) throw Error("tile stack " + path.string() + ": grid_n must be positive");
    if (t.months.empty()) throw Error("tile stack " + path.string() + ": no months");
    return t;
}

// ---------------------------------------------------------------------------
// Splitting

json DatasetSplit::to_json() const {
    return {{"fractions", {fractions.train, fractions.val, fractions.test}},
            {"train", train},
            {"val", val},
            {"test", test},
            {"max_class_deviation", max_class_deviation}};
}

DatasetSplit DatasetSplit::from_json(const json& doc) {
    DatasetSplit s;
    const auto f = doc.at("fractions").get<std::vector<double>>();
    if (f.size() != 3) throw Error("split fractions must have three entries");
    s.fractions = {f[0], f[1], f[2]};
    s.train = doc.at("train").get<std::vector<std::string>>();
    s.val = doc.at("val").get<std::vector<std::string>>();
    s.test = doc.at("test").get<std::vector<std::string>>();
    s.max_class_deviation = doc.value("max_class_deviation", 0.0);
    return s;
}

namespace {

std::vector<double> class_share(const std::vector<const PatchRecord*>& recs) {
    std::vector<double> mass;
    double total = 0.0;
    for (const auto* r : recs) {
        if (mass.empty()) mass.assign(r->label.size(), 0.0);
        for (std::size_t i = 0; i < r->label.size(); ++i) mass[i] += r->label[i];
        total += 1.0;
    }
    if (total > 0)
        for (double& m : mass) m /= total;
    return mass;
}

}  // namespace

double class_mass_deviation(const std::vector<PatchRecord>& records, const DatasetSplit& split) {
    std::unordered_map<std::string, const PatchRecord*> by_id;
    std::vector<const PatchRecord*> all;
    for (const auto& r : records) {
        by_id[r.patch_id] = &r;
        all.push_back(&r);
    }
    const auto corpus = class_share(all);
    double worst = 0.0;
    for (const auto* ids : {&split.train, &split.val, &split.test}) {
        if (ids->empty()) continue;
        std::vector<const PatchRecord*> part;
        for (const auto& id : *ids) part.push_back(by_id.at(id));
        const auto share = class_share(part);
        for (std::size_t i = 0; i < corpus.size(); ++i)
            worst = std::max(worst, std::abs(share[i] - corpus[i]));
    }
    return worst;
}

DatasetSplit stratified_split(const std::vector<PatchRecord>& records,
                              const SplitFractions& fractions, std::uint64_t seed,
                              double tolerance) {
    const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
    for (double x : f)
        if (!(x > 0.0)) throw Error("split fractions must be positive");
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw Error("split fractions must sum to 1");

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].label.argmax()].push_back(i);

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order;
    order.reserve(records.size());
    for (auto& [cls, members] : groups) {
        std::shuffle(members.begin(), members.end(), rng);
        order.insert(order.end(), members.begin(), members.end());
    }

    DatasetSplit split;
    split.fractions = fractions;
    std::array<std::vector<std::string>*, 3> bins{&split.train, &split.val, &split.test};
    std::array<std::size_t, 3> counts{};
    for (std::size_t k = 0; k < order.size(); ++k) {
        std::size_t best = 0;
        double best_deficit = -1e300;
        for (std::size_t s = 0; s < 3; ++s) {
            const double deficit = f[s] * static_cast<double>(k + 1) - static_cast<double>(counts[s]);
            if (deficit > best_deficit + 1e-12) {
                best_deficit = deficit;
                best = s;
            }
        }
        ++counts[best];
        bins[best]->push_back(records[order[k]].patch_id);
    }

    split.max_class_deviation = class_mass_deviation(records, split);
    if (split.max_class_deviation > tolerance) {
        const std::string msg = "split class-mass deviation " +
                                std::to_string(split.max_class_deviation) + " exceeds tolerance " +
                                std::to_string(tolerance) + " (corpus too small); using best effort";
        split.warnings.push_back(msg);
        warn(msg);
    }
    return split;
}

std::vector<PatchRecord> select(const std::vector<PatchRecord>& records,
                                const std::vector<std::string>& ids) {
    std::unordered_map<std::string, const PatchRecord*> by_id;
    for (const auto& r : records) by_id[r.patch_id] = &r;
    std::vector<PatchRecord> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw Error("patch id not in manifest: " + id);
        out.push_back(*it->second);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Patch reading

PatchReader::PatchReader(std::uint32_t patch_px, std::size_t cache_capacity)
    : patch_px_(patch_px), capacity_(std::max<std::size_t>(1, cache_capacity)) {
    if (patch_px == 0) throw Error("patch_px must be positive");
}

std::shared_ptr<const Raster> PatchReader::load(const fs::path& path) {
    const std::string key = path.string();
    if (auto it = cache_.find(key); it != cache_.end()) {
        order_.remove(key);
        order_.push_front(key);
        return it->second;
    }
    auto raster = std::make_shared<const Raster>(read_raster(path));
    cache_[key] = raster;
    order_.push_front(key);
    if (order_.size() > capacity_) {
        cache_.erase(order_.back());
        order_.pop_back();
    }
    return raster;
}

Raster PatchReader::read(const PatchRecord& record, int month) {
    auto it = record.rasters.find(month);
    if (it == record.rasters.end())
        throw Error("patch " + record.patch_id + " has no raster for month " + std::to_string(month));
    const auto src = load(it->second);
    if (src->channels != kRgbnChannels)
        throw Error("raster " + it->second.string() + " has " + std::to_string(src->channels) +
                    " channels, expected 4 (R,G,B,N)");
    Raster patch;
    if (record.tile_grid_n) {
        const std::uint32_t n = *record.tile_grid_n;
        if (src->height % n != 0 || src->width % n != 0)
            throw Error("tile raster " + it->second.string() + " not divisible by grid_n " +
                        std::to_string(n));
        const std::uint32_t ph = src->height / n;
        const std::uint32_t pw = src->width / n;
        patch = crop(*src, record.grid_pos.row * ph, record.grid_pos.col * pw, ph, pw);
    } else {
        patch = *src;
    }
    return resize_bilinear(patch, patch_px_, patch_px_);
}

}  // namespace tlc::data
