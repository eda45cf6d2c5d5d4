#include "tlc/evaluation.hpp"

#include <algorithm>

#include "tlc/error.hpp"

namespace tlc::evaluation {

using nlohmann::json;
using ontology::LabelDistribution;
using ontology::Level;

void ThresholdRule::validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau", "tau must lie in (0, 1)");
}

LabelSet predicted_labels(const LabelDistribution& d, const ThresholdRule& rule) {
    LabelSet out;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] >= rule.tau) out.push_back(i);
    return out;
}

LabelSet true_labels(const LabelDistribution& d) {
    LabelSet out;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0.0) out.push_back(i);
    return out;
}

double Counts::f1() const {
    const std::uint64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

std::vector<Counts> confusion_counts(const std::vector<LabelSet>& predicted,
                                     const std::vector<LabelSet>& truth, std::size_t n_classes) {
    if (predicted.size() != truth.size())
        throw Error("prediction and truth lists differ in length: " + std::to_string(predicted.size()) +
                    " vs " + std::to_string(truth.size()));
    std::vector<Counts> counts(n_classes);
    for (std::size_t k = 0; k < predicted.size(); ++k) {
        const auto& p = predicted[k];
        const auto& t = truth[k];
        // Both sets are ascending: a merge walk classifies every class once.
        std::size_t i = 0, j = 0;
        while (i < p.size() || j < t.size()) {
            if (j == t.size() || (i < p.size() && p[i] < t[j])) {
                counts.at(p[i++]).fp++;
            } else if (i == p.size() || t[j] < p[i]) {
                counts.at(t[j++]).fn++;
            } else {
                counts.at(p[i]).tp++;
                ++i;
                ++j;
            }
        }
    }
    return counts;
}

namespace {

std::size_t max_class(const std::vector<LabelSet>& a, const std::vector<LabelSet>& b) {
    std::size_t n = 0;
    for (const auto* sets : {&a, &b})
        for (const auto& s : *sets)
            if (!s.empty()) n = std::max(n, s.back() + 1);
    return n;
}

}  // namespace

double micro_f1(const std::vector<LabelSet>& predicted, const std::vector<LabelSet>& truth) {
    Counts total;
    for (const auto& c : confusion_counts(predicted, truth, max_class(predicted, truth))) total += c;
    if (total.empty()) warn("micro-F1 over all-empty label sets; reporting 1.0");
    return total.f1();
}

std::map<std::size_t, double> per_class_f1(const std::vector<LabelSet>& predicted,
                                           const std::vector<LabelSet>& truth,
                                           const ontology::OntologyLevel& level) {
    std::map<std::size_t, double> out;
    const auto counts = confusion_counts(predicted, truth, level.cardinality());
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (!counts[c].empty()) out[c] = counts[c].f1();
    return out;
}

Counts EvalReport::total() const {
    Counts t;
    for (const auto& c : counts) t += c;
    return t;
}

json EvalReport::to_json() const {
    json counts_json = json::array();
    const auto& lv = ontology::Ontology::builtin().level(level);
    for (std::size_t c = 0; c < counts.size(); ++c)
        counts_json.push_back({{"class", lv[c].name},
                               {"code", lv[c].code},
                               {"tp", counts[c].tp},
                               {"fp", counts[c].fp},
                               {"fn", counts[c].fn}});
    return {{"level", ontology::to_string(level)},
            {"tau", tau},
            {"micro_f1", micro_f1},
            {"per_class_f1", per_class_f1},
            {"counts", counts_json},
            {"n_patches", n_patches}};
}

EvalReport EvalReport::from_json(const json& doc) {
    EvalReport r;
    r.level = ontology::parse_level(doc.at("level").get<std::string>());
    r.tau = doc.at("tau").get<double>();
    r.micro_f1 = doc.at("micro_f1").get<double>();
    r.per_class_f1 = doc.at("per_class_f1").get<std::map<std::string, double>>();
    for (const auto& c : doc.at("counts"))
        r.counts.push_back({c.at("tp").get<std::uint64_t>(), c.at("fp").get<std::uint64_t>(),
                            c.at("fn").get<std::uint64_t>()});
    r.n_patches = doc.at("n_patches").get<std::size_t>();
    return r;
}

namespace {

std::vector<LabelDistribution> to_level(const std::vector<LabelDistribution>& ds, Level level) {
    if (ds.empty() || ds.front().level() == level) return ds;
    const auto src = ds.front().level();
    if (!ontology::strictly_finer(src, level))
        throw Error("cannot evaluate " + std::string(ontology::to_string(src)) + " predictions at finer level " +
                    std::string(ontology::to_string(level)));
    const auto map = ontology::Ontology::builtin().aggregation(src, level);
    std::vector<LabelDistribution> out;
    out.reserve(ds.size());
    for (const auto& d : ds) out.push_back(ontology::aggregate_distribution(d, map));
    return out;
}

}  // namespace

EvalReport evaluate_distributions(const std::vector<LabelDistribution>& predicted,
                                  const std::vector<LabelDistribution>& truth_level2, Level level,
                                  const ThresholdRule& rule) {
    rule.validate();
    if (predicted.size() != truth_level2.size())
        throw Error("prediction and truth lists differ in length");
    const auto pred = to_level(predicted, level);
    const auto truth = to_level(truth_level2, level);
    std::vector<LabelSet> pred_sets, true_sets;
    pred_sets.reserve(pred.size());
    true_sets.reserve(truth.size());
    for (const auto& d : pred) pred_sets.push_back(predicted_labels(d, rule));
    for (const auto& d : truth) true_sets.push_back(true_labels(d));

    const auto& lv = ontology::Ontology::builtin().level(level);
    EvalReport r;
    r.level = level;
    r.tau = rule.tau;
    r.n_patches = pred.size();
    r.counts = confusion_counts(pred_sets, true_sets, lv.cardinality());
    const Counts total = r.total();
    if (total.empty()) warn("micro-F1 over all-empty label sets; reporting 1.0");
    r.micro_f1 = total.f1();
    for (const auto& [c, f] : per_class_f1(pred_sets, true_sets, lv)) r.per_class_f1[lv[c].name] = f;
    return r;
}

std::vector<LabelDistribution> predict_records(const models::Model& model,
                                               const std::vector<data::PatchRecord>& records,
                                               data::PatchReader& reader) {
    for (int month : model.months())
        for (const auto& r : records)
            if (!r.rasters.contains(month))
                throw Error("patch " + r.patch_id + " is missing month " + std::to_string(month));
    return model.predict(records.size(),
                         [&](std::size_t i, int month) { return reader.read(records[i], month); });
}

EvalReport evaluate_model(const models::Model& model, const std::vector<data::PatchRecord>& records,
                          Level level, const ThresholdRule& rule) {
    rule.validate();
    if (ontology::strictly_finer(level, model.level()))
        throw Error("model level " + std::string(ontology::to_string(model.level())) +
                    " is coarser than requested " + std::string(ontology::to_string(level)));
    data::PatchReader reader(static_cast<std::uint32_t>(model.patch_px()));
    const auto predicted = predict_records(model, records, reader);
    std::vector<LabelDistribution> truth;
    truth.reserve(records.size());
    for (const auto& r : records) truth.push_back(r.label);
    return evaluate_distributions(predicted, truth, level, rule);
}

std::vector<std::pair<double, double>> tau_sweep(const std::vector<LabelDistribution>& predicted,
                                                 const std::vector<LabelDistribution>& truth_level2,
                                                 Level level, std::span<const double> taus) {
    std::vector<std::pair<double, double>> out;
    for (double tau : taus)
        out.emplace_back(tau, evaluate_distributions(predicted, truth_level2, level, {tau}).micro_f1);
    return out;
}

}  // namespace tlc::evaluation
