#include "tlc/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>

#include "tlc/data.hpp"
#include "tlc/error.hpp"
#include "tlc/evaluation.hpp"
#include "tlc/mapping.hpp"
#include "tlc/models.hpp"
#include "tlc/synth.hpp"
#include "tlc/training.hpp"

namespace tlc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json RunManifest::to_json() const {
    return {{"subcommand", subcommand},
            {"argv", argv},
            {"config", config},
            {"seed", seed},
            {"inputs", inputs},
            {"outputs", outputs},
            {"wall_seconds", wall_seconds},
            {"exit_status", exit_status},
            {"code_version", models::code_version()}};
}

void RunManifest::write_atomic(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot write run manifest: " + tmp.string());
        out << to_json().dump(2) << '\n';
        if (!out) throw Error("failed writing run manifest: " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string usage() {
    return "usage: temporal-lulc <subcommand> [options]\n"
           "\n"
           "subcommands:\n"
           "  synth           generate the synthetic seasonal corpus\n"
           "  ingest          validate a manifest and report class mass\n"
           "  train-mono      train the single-date CNN\n"
           "  train-temporal  train the recurrent head on frozen encoder features\n"
           "  eval            micro/per-class F1 of a model on a manifest\n"
           "  map             classify every cell of a tile\n"
           "  change          compare two dates of a tile\n"
           "  compare         mono vs multi-temporal F1 table from two eval reports\n"
           "\n"
           "global options: --config F  --seed S  --level {LEVEL1,LEVEL1_5,LEVEL2}  --out PATH\n"
           "run 'temporal-lulc <subcommand> --help' for details\n";
}

namespace {

const std::set<std::string> kSubcommands = {"synth", "ingest",  "train-mono", "train-temporal",
                                            "eval",  "map",     "change",     "compare"};

// Options shared by every subcommand.
struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string level;
    std::string out;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON config file");
    app->add_option("--seed", c.seed, "random seed");
    app->add_option("--level", c.level, "ontology level: LEVEL1, LEVEL1_5 or LEVEL2");
    app->add_option("--out", c.out, "output path");
}

std::optional<ontology::Level> level_flag(const std::string& s) {
    if (s.empty()) return std::nullopt;
    try {
        return ontology::parse_level(s);
    } catch (const Error&) {
        throw ConfigError("--level", "invalid --level '" + s + "': expected LEVEL1, LEVEL1_5 or LEVEL2");
    }
}

void require_flag(const std::string& value, const char* flag) {
    if (value.empty()) throw ConfigError(flag, std::string(flag) + " is required");
}

json load_json_file(const fs::path& path, const char* field) {
    std::ifstream in(path);
    if (!in) throw ConfigError(field, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(field, path.string() + " is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& path, const json& doc) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

// Run manifest location: inside an output directory, or beside an output file.
fs::path manifest_location(const fs::path& out, bool out_is_dir) {
    if (out_is_dir) return out / "run_manifest.json";
    fs::path p = out;
    p.replace_extension(".run.json");
    return p;
}

training::TrainConfig train_config(const Common& c, const std::string& manifest_flag) {
    training::TrainConfig cfg = c.config.empty() ? training::TrainConfig{} : training::TrainConfig::load(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (auto lv = level_flag(c.level)) cfg.level = *lv;
    if (!manifest_flag.empty()) cfg.manifest = manifest_flag;
    if (cfg.manifest.empty()) throw ConfigError("--manifest", "--manifest is required (or 'manifest' in --config)");
    return cfg;
}

std::optional<data::DatasetSplit> split_in(const fs::path& dir) {
    const fs::path p = dir / "split.json";
    if (!fs::exists(p)) return std::nullopt;
    std::ifstream in(p);
    return data::DatasetSplit::from_json(json::parse(in));
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();

    if (args.empty()) {
        std::cerr << usage();
        return kUsageError;
    }
    if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
        std::cout << usage();
        return kOk;
    }
    if (!kSubcommands.contains(args[0])) {
        std::cerr << "error: unknown subcommand '" << args[0] << "'\n" << usage();
        return kUsageError;
    }
    const std::string sub = args[0];

    CLI::App app{"temporal-lulc " + sub};
    app.name("temporal-lulc " + sub);
    Common common;
    add_common(&app, common);

    RunManifest run;
    run.subcommand = sub;
    run.argv = args;
    fs::path manifest_path;

    // Subcommand specific state.
    int tiles = 10, classes = 15;
    std::uint32_t grid_n = 40, patch_px = 8;
    std::string manifest, model_dir, encoder_dir, tile, tile_a, tile_b, mono_report, multi_report, subset;
    bool strict = false, sweep = false, verbose = false, no_change_pair = false;
    double tau = 0.1, floor = mapping::kDefaultConfidenceFloor;
    std::optional<int> epochs;

    if (sub == "synth") {
        app.add_option("--tiles", tiles, "number of tiles");
        app.add_option("--classes", classes, "number of LEVEL2 classes painted");
        app.add_option("--grid-n", grid_n, "cells per tile side");
        app.add_option("--patch-px", patch_px, "pixels per cell side");
        app.add_flag("--no-change-pair", no_change_pair, "skip the change-detection tile pair");
    } else if (sub == "ingest") {
        app.add_option("--manifest", manifest, "manifest JSON-lines file");
        app.add_flag("--strict", strict, "require every referenced raster to exist");
    } else if (sub == "train-mono" || sub == "train-temporal") {
        app.add_option("--manifest", manifest, "manifest (overrides the config)");
        app.add_option("--epochs", epochs, "epochs (overrides the config)");
        app.add_flag("--verbose", verbose, "log every epoch");
        if (sub == "train-temporal") app.add_option("--encoder", encoder_dir, "trained mono model directory");
    } else if (sub == "eval") {
        app.add_option("--model", model_dir, "model directory");
        app.add_option("--manifest", manifest, "manifest to score");
        app.add_option("--tau", tau, "presence threshold");
        app.add_option("--subset", subset, "test, val, train or all (default: test when the model has a split)");
        app.add_flag("--sweep", sweep, "also report micro-F1 over a tau sweep");
    } else if (sub == "map") {
        app.add_option("--model", model_dir, "model directory");
        app.add_option("--tile", tile, "tile stack JSON");
    } else if (sub == "change") {
        app.add_option("--model", model_dir, "model directory");
        app.add_option("--tile-a", tile_a, "earlier tile stack JSON");
        app.add_option("--tile-b", tile_b, "later tile stack JSON");
        app.add_option("--floor", floor, "confidence floor for declaring change");
    } else if (sub == "compare") {
        app.add_option("--mono", mono_report, "eval report of the mono-temporal model");
        app.add_option("--multi", multi_report, "eval report of the multi-temporal model");
    }

    std::vector<std::string> rest(args.begin() + 1, args.end());
    std::reverse(rest.begin(), rest.end());  // CLI11 consumes from the back
    try {
        app.parse(rest);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << json{{"exit", kConfigError}, {"message", e.what()}}.dump() << '\n';
        return kConfigError;
    }

    int status = kOk;
    try {
        if (common.seed) run.seed = *common.seed;

        if (sub == "synth") {
            synth::SynthConfig cfg;
            if (!common.config.empty()) cfg = synth::SynthConfig::from_json(load_json_file(common.config, "--config"));
            for (const auto* opt : app.get_options()) {
                if (opt->count() == 0) continue;
                const auto name = opt->get_name();
                if (name == "--tiles") cfg.tiles = tiles;
                if (name == "--classes") cfg.classes = classes;
                if (name == "--grid-n") cfg.grid_n = grid_n;
                if (name == "--patch-px") cfg.patch_px = patch_px;
            }
            if (no_change_pair) cfg.change_pair = false;
            if (common.seed) cfg.seed = *common.seed;
            require_flag(common.out, "--out");
            cfg.validate();
            const auto res = synth::generate_synthetic_corpus(cfg, common.out);
            run.config = cfg.to_json();
            run.seed = cfg.seed;
            run.outputs = {{"dir", common.out}, {"manifest", res.manifest.string()}, {"patches", res.records.size()}};
            manifest_path = manifest_location(common.out, true);
            std::cout << json{{"manifest", res.manifest.string()}, {"patches", res.records.size()},
                              {"tiles", res.tile_stacks.size()}}
                             .dump()
                      << '\n';
        } else if (sub == "ingest") {
            require_flag(manifest, "--manifest");
            const auto records = data::load_manifest(manifest, {strict});
            std::set<std::string> tile_ids;
            std::vector<double> mass(ontology::expected_cardinality(ontology::Level::Level2), 0.0);
            std::size_t complete = 0;
            for (const auto& r : records) {
                tile_ids.insert(r.tile_id);
                for (std::size_t k = 0; k < mass.size(); ++k) mass[k] += r.label[k];
                complete += r.has_all_months();
            }
            for (auto& m : mass) m /= std::max<std::size_t>(records.size(), 1);
            const auto split = data::stratified_split(records, {}, run.seed);
            json summary{{"patches", records.size()},
                         {"tiles", tile_ids.size()},
                         {"complete_years", complete},
                         {"class_mass", mass},
                         {"split_sizes", {split.train.size(), split.val.size(), split.test.size()}},
                         {"split_max_class_deviation", split.max_class_deviation}};
            std::cout << summary.dump() << '\n';
            run.inputs = {{"manifest", manifest}};
            if (!common.out.empty()) {
                fs::create_directories(common.out);
                write_json(fs::path(common.out) / "ingest.json", summary);
                write_json(fs::path(common.out) / "split.json", split.to_json());
                manifest_path = manifest_location(common.out, true);
            }
        } else if (sub == "train-mono") {
            auto cfg = train_config(common, manifest);
            if (epochs) cfg.epochs = *epochs;
            cfg.validate();
            require_flag(common.out, "--out");
            const auto records = data::load_manifest(cfg.manifest, {true});
            auto res = training::train_mono(records, cfg, cfg.level, {.verbose = verbose});
            training::save_run(common.out, *res.model, res.log, res.split);
            run.config = cfg.to_json();
            run.seed = cfg.seed;
            run.inputs = {{"manifest", cfg.manifest}};
            const auto& best = res.log.epochs.at(static_cast<std::size_t>(res.log.best_epoch));
            run.outputs = {{"model", common.out}, {"best_epoch", res.log.best_epoch},
                           {"val_micro_f1", best.val_micro_f1}};
            manifest_path = manifest_location(common.out, true);
            std::cout << run.outputs.dump() << '\n';
        } else if (sub == "train-temporal") {
            require_flag(encoder_dir, "--encoder");
            auto cfg = train_config(common, manifest);
            if (epochs) cfg.epochs = *epochs;
            cfg.validate();
            require_flag(common.out, "--out");
            const auto records = data::load_manifest(cfg.manifest, {true});
            auto encoder = std::make_shared<const models::MonoModel>(models::MonoModel::load(encoder_dir));
            training::TrainOptions opts;
            opts.split = split_in(encoder_dir);
            opts.verbose = verbose;
            opts.feature_cache = fs::path(common.out) / "features";
            auto res = training::train_temporal(records, cfg, encoder, opts);
            training::save_run(common.out, *res.model, res.log, res.split);
            run.config = cfg.to_json();
            run.seed = cfg.seed;
            run.inputs = {{"manifest", cfg.manifest}, {"encoder", encoder_dir}};
            const auto& best = res.log.epochs.at(static_cast<std::size_t>(res.log.best_epoch));
            char hash[24];
            std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(res.encoder_hash_after));
            run.outputs = {{"model", common.out}, {"best_epoch", res.log.best_epoch},
                           {"val_micro_f1", best.val_micro_f1}, {"encoder_weights_hash", hash}};
            manifest_path = manifest_location(common.out, true);
            std::cout << run.outputs.dump() << '\n';
        } else if (sub == "eval") {
            require_flag(model_dir, "--model");
            require_flag(manifest, "--manifest");
            const auto model = models::load_model(model_dir);
            const auto level = level_flag(common.level).value_or(model->level());
            auto records = data::load_manifest(manifest, {true});
            const auto split = split_in(model_dir);
            if (subset.empty()) subset = split ? "test" : "all";
            if (subset != "all") {
                if (!split) throw ConfigError("--subset", "model has no split.json; use --subset all");
                if (subset == "test") records = data::select(records, split->test);
                else if (subset == "val") records = data::select(records, split->val);
                else if (subset == "train") records = data::select(records, split->train);
                else throw ConfigError("--subset", "--subset must be test, val, train or all");
            }
            evaluation::ThresholdRule rule{tau};
            rule.validate();
            data::PatchReader reader(static_cast<std::uint32_t>(model->patch_px()));
            const auto predicted = evaluation::predict_records(*model, records, reader);
            std::vector<ontology::LabelDistribution> truth;
            for (const auto& r : records) truth.push_back(r.label);
            if (ontology::strictly_finer(level, model->level()))
                throw ConfigError("--level", "model level " + std::string(ontology::to_string(model->level())) +
                                                 " is coarser than requested " +
                                                 std::string(ontology::to_string(level)));
            const auto report = evaluation::evaluate_distributions(predicted, truth, level, rule);
            json doc = report.to_json();
            doc["model"] = model_dir;
            doc["model_kind"] = model->info().kind;
            doc["subset"] = subset;
            if (sweep) {
                const std::vector<double> taus = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5};
                json s = json::array();
                for (const auto& [t, f] : evaluation::tau_sweep(predicted, truth, level, taus))
                    s.push_back({{"tau", t}, {"micro_f1", f}});
                doc["sweep"] = s;
            }
            run.inputs = {{"model", model_dir}, {"manifest", manifest}};
            run.config = {{"level", ontology::to_string(level)}, {"tau", tau}, {"subset", subset}};
            run.outputs = {{"micro_f1", report.micro_f1}};
            if (!common.out.empty()) {
                write_json(common.out, doc);
                manifest_path = manifest_location(common.out, false);
            }
            std::cout << json{{"level", ontology::to_string(level)}, {"micro_f1", report.micro_f1},
                              {"n_patches", report.n_patches}}
                             .dump()
                      << '\n';
        } else if (sub == "map") {
            require_flag(model_dir, "--model");
            require_flag(tile, "--tile");
            require_flag(common.out, "--out");
            const auto model = models::load_model(model_dir);
            const auto map = mapping::predict_map(data::TileStack::load(tile), *model);
            write_json(mapping::json_path_for(common.out), map.to_json());
            mapping::render_map_png(map, mapping::png_path_for(common.out));
            run.inputs = {{"model", model_dir}, {"tile", tile}};
            run.outputs = {{"json", mapping::json_path_for(common.out).string()},
                           {"png", mapping::png_path_for(common.out).string()}};
            manifest_path = manifest_location(common.out, false);
        } else if (sub == "change") {
            require_flag(model_dir, "--model");
            require_flag(tile_a, "--tile-a");
            require_flag(tile_b, "--tile-b");
            require_flag(common.out, "--out");
            const auto model = models::load_model(model_dir);
            const auto a = mapping::predict_map(data::TileStack::load(tile_a), *model);
            const auto b = mapping::predict_map(data::TileStack::load(tile_b), *model);
            const auto change = mapping::change_detect(a, b, floor);
            write_json(mapping::json_path_for(common.out), change.to_json());
            mapping::render_change_png(change, mapping::png_path_for(common.out));
            run.inputs = {{"model", model_dir}, {"tile_a", tile_a}, {"tile_b", tile_b}};
            run.config = {{"floor", floor}};
            run.outputs = {{"n_changed", change.count(mapping::CellState::Changed)},
                           {"n_uncertain", change.count(mapping::CellState::Uncertain)}};
            manifest_path = manifest_location(common.out, false);
            std::cout << run.outputs.dump() << '\n';
        } else if (sub == "compare") {
            require_flag(mono_report, "--mono");
            require_flag(multi_report, "--multi");
            const auto mono = evaluation::EvalReport::from_json(load_json_file(mono_report, "--mono"));
            const auto multi = evaluation::EvalReport::from_json(load_json_file(multi_report, "--multi"));
            if (mono.level != multi.level) throw ConfigError("--multi", "reports are at different levels");
            const auto& lv = ontology::Ontology::builtin().level(mono.level);
            json rows = json::array();
            std::string text = "class                                                  mono     multi    delta\n";
            for (const auto& c : lv.classes()) {
                const auto m = mono.per_class_f1.find(c.name);
                const auto t = multi.per_class_f1.find(c.name);
                if (m == mono.per_class_f1.end() && t == multi.per_class_f1.end()) continue;
                json row{{"class", c.name}, {"code", c.code}};
                std::string line = c.code + " " + c.name;
                if (line.size() < 54) line.resize(54, ' ');
                if (m != mono.per_class_f1.end()) row["mono"] = m->second;
                if (t != multi.per_class_f1.end()) row["multi"] = t->second;
                line += " " + (m != mono.per_class_f1.end() ? fmt(m->second) : std::string("   -  "));
                line += "   " + (t != multi.per_class_f1.end() ? fmt(t->second) : std::string("   -  "));
                if (row.contains("mono") && row.contains("multi")) {
                    const double d = t->second - m->second;
                    row["delta"] = d;
                    line += "   " + std::string(d >= 0 ? "+" : "") + fmt(d);
                }
                rows.push_back(row);
                text += line + "\n";
            }
            std::string total = "micro-F1 (" + std::string(ontology::to_string(mono.level)) + ")";
            total.resize(54, ' ');
            const double delta = multi.micro_f1 - mono.micro_f1;
            text += total + " " + fmt(mono.micro_f1) + "   " + fmt(multi.micro_f1) + "   " +
                    (delta >= 0 ? "+" : "") + fmt(delta) + "\n";
            std::cout << text;
            json doc{{"level", ontology::to_string(mono.level)},
                     {"mono_micro_f1", mono.micro_f1},
                     {"multi_micro_f1", multi.micro_f1},
                     {"delta_micro_f1", delta},
                     {"classes", rows}};
            run.inputs = {{"mono", mono_report}, {"multi", multi_report}};
            run.outputs = {{"delta_micro_f1", delta}};
            if (!common.out.empty()) {
                write_json(mapping::json_path_for(common.out), doc);
                std::ofstream(fs::path(common.out).replace_extension(".txt")) << text;
                manifest_path = manifest_location(common.out, false);
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << json{{"exit", kConfigError}, {"field", e.field()}, {"message", e.what()}}.dump()
                  << '\n';
        status = kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << json{{"exit", kRuntimeError}, {"message", e.what()}}.dump() << '\n';
        status = kRuntimeError;
    }

    if (!manifest_path.empty()) {
        run.exit_status = status;
        run.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        try {
            run.write_atomic(manifest_path);
        } catch (const std::exception& e) {
            warn(e.what());
        }
    }
    return status;
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

}  // namespace tlc::cli
