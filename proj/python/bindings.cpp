// Thin bindings; structured results cross the boundary as JSON text and are
// decoded in temporal_lulc/__init__.py.
#include <algorithm>
#include <fstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tlc/cli.hpp"
#include "tlc/data.hpp"
#include "tlc/error.hpp"
#include "tlc/evaluation.hpp"
#include "tlc/losses.hpp"
#include "tlc/mapping.hpp"
#include "tlc/models.hpp"
#include "tlc/ontology.hpp"
#include "tlc/synth.hpp"
#include "tlc/training.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

tlc::training::TrainConfig config_from(const std::string& config_json, const std::string& manifest) {
    auto cfg = config_json.empty() ? tlc::training::TrainConfig{}
                                   : tlc::training::TrainConfig::from_json(json::parse(config_json));
    if (!manifest.empty()) cfg.manifest = manifest;
    return cfg;
}

std::string log_json(const tlc::training::TrainLog& log) {
    json epochs = json::array();
    for (const auto& e : log.epochs)
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                          {"val_micro_f1", e.val_micro_f1}, {"lr", e.lr}});
    return json{{"best_epoch", log.best_epoch}, {"epochs", epochs}}.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Patch-based mono and multi-temporal land-cover classification";

    // Translators run newest first, so the subclass goes last.
    auto base = py::register_exception<tlc::Error>(m, "Error");
    py::register_exception<tlc::ConfigError>(m, "ConfigError", base.ptr());

    m.def("code_version", &tlc::models::code_version);
    m.def("ontology_json", [] { return tlc::ontology::Ontology::builtin().to_json().dump(); });

    m.def("aggregate", [](const std::vector<double>& probs, const std::string& source, const std::string& target) {
        const auto& o = tlc::ontology::Ontology::builtin();
        const auto map = o.aggregation(tlc::ontology::parse_level(source), tlc::ontology::parse_level(target));
        const auto d = tlc::ontology::LabelDistribution::validated(map.source, probs);
        return tlc::ontology::aggregate_distribution(d, map).probs();
    }, py::arg("probs"), py::arg("source"), py::arg("target"));

    m.def("kl_loss", [](const std::vector<double>& t, const std::vector<double>& p) { return tlc::training::kl_loss(t, p); });
    m.def("bce_loss", [](const std::vector<double>& t, const std::vector<double>& p) { return tlc::training::bce_loss(t, p); });
    m.def("focal_loss", [](const std::vector<double>& t, const std::vector<double>& p, double gamma) {
        return tlc::training::focal_loss(t, p, gamma);
    }, py::arg("target"), py::arg("predicted"), py::arg("gamma") = tlc::training::kDefaultFocalGamma);

    m.def("micro_f1", [](const std::vector<std::vector<std::size_t>>& pred, const std::vector<std::vector<std::size_t>>& truth) {
        auto sorted = [](std::vector<std::vector<std::size_t>> sets) {
            for (auto& s : sets) std::sort(s.begin(), s.end());
            return sets;
        };
        return tlc::evaluation::micro_f1(sorted(pred), sorted(truth));
    });

    m.def("synth", [](const std::string& out_dir, int tiles, std::uint64_t seed, std::uint32_t grid_n,
                      std::uint32_t patch_px, int classes, bool change_pair) {
        tlc::synth::SynthConfig cfg;
        cfg.tiles = tiles;
        cfg.seed = seed;
        cfg.grid_n = grid_n;
        cfg.patch_px = patch_px;
        cfg.classes = classes;
        cfg.change_pair = change_pair;
        const auto r = tlc::synth::generate_synthetic_corpus(cfg, out_dir);
        json tiles_json = json::array();
        for (const auto& t : r.tile_stacks) tiles_json.push_back(t.string());
        return json{{"manifest", r.manifest.string()}, {"patches", r.records.size()}, {"tiles", tiles_json},
                    {"change_a", r.change_a.string()}, {"change_b", r.change_b.string()},
                    {"change_truth", r.change_truth.string()}}.dump();
    }, py::arg("out_dir"), py::arg("tiles") = 10, py::arg("seed") = 0, py::arg("grid_n") = 40,
       py::arg("patch_px") = 8, py::arg("classes") = 15, py::arg("change_pair") = true);

    m.def("load_manifest", [](const std::string& path, bool strict) {
        json rows = json::array();
        for (const auto& r : tlc::data::load_manifest(path, {strict})) rows.push_back(tlc::data::record_to_json(r));
        return rows.dump();
    }, py::arg("path"), py::arg("strict") = false);

    m.def("train_mono", [](const std::string& manifest, const std::string& config_json, const std::string& level,
                           const std::string& out_dir) {
        const auto cfg = config_from(config_json, manifest);
        const auto records = tlc::data::load_manifest(cfg.manifest, {true});
        py::gil_scoped_release release;
        auto r = tlc::training::train_mono(records, cfg, tlc::ontology::parse_level(level));
        tlc::training::save_run(out_dir, *r.model, r.log, r.split);
        return log_json(r.log);
    }, py::arg("manifest"), py::arg("config_json") = "", py::arg("level") = "LEVEL2", py::arg("out_dir"));

    m.def("train_temporal", [](const std::string& manifest, const std::string& config_json,
                               const std::string& encoder_dir, const std::string& out_dir) {
        const auto cfg = config_from(config_json, manifest);
        const auto records = tlc::data::load_manifest(cfg.manifest, {true});
        py::gil_scoped_release release;
        auto encoder = std::make_shared<const tlc::models::MonoModel>(tlc::models::MonoModel::load(encoder_dir));
        tlc::training::TrainOptions opts;
        std::ifstream split_in(std::filesystem::path(encoder_dir) / "split.json");
        if (split_in) opts.split = tlc::data::DatasetSplit::from_json(json::parse(split_in));
        auto r = tlc::training::train_temporal(records, cfg, encoder, opts);
        tlc::training::save_run(out_dir, *r.model, r.log, r.split);
        auto doc = json::parse(log_json(r.log));
        doc["encoder_hash_before"] = r.encoder_hash_before;
        doc["encoder_hash_after"] = r.encoder_hash_after;
        return doc.dump();
    }, py::arg("manifest"), py::arg("config_json") = "", py::arg("encoder_dir"), py::arg("out_dir"));

    m.def("evaluate", [](const std::string& model_dir, const std::string& manifest, const std::string& level,
                         double tau) {
        const auto model = tlc::models::load_model(model_dir);
        const auto records = tlc::data::load_manifest(manifest, {true});
        const auto lv = level.empty() ? model->level() : tlc::ontology::parse_level(level);
        py::gil_scoped_release release;
        return tlc::evaluation::evaluate_model(*model, records, lv, {tau}).to_json().dump();
    }, py::arg("model_dir"), py::arg("manifest"), py::arg("level") = "", py::arg("tau") = 0.1);

    m.def("predict_map", [](const std::string& model_dir, const std::string& tile) {
        const auto model = tlc::models::load_model(model_dir);
        py::gil_scoped_release release;
        return tlc::mapping::predict_map(tlc::data::TileStack::load(tile), *model).to_json().dump();
    });

    m.def("change_detect", [](const std::string& model_dir, const std::string& tile_a, const std::string& tile_b,
                              double floor) {
        const auto model = tlc::models::load_model(model_dir);
        py::gil_scoped_release release;
        const auto a = tlc::mapping::predict_map(tlc::data::TileStack::load(tile_a), *model);
        const auto b = tlc::mapping::predict_map(tlc::data::TileStack::load(tile_b), *model);
        return tlc::mapping::change_detect(a, b, floor).to_json().dump();
    }, py::arg("model_dir"), py::arg("tile_a"), py::arg("tile_b"), py::arg("floor") = tlc::mapping::kDefaultConfidenceFloor);

    m.def("cli", [](const std::vector<std::string>& args) { return tlc::cli::dispatch(args); });
}
